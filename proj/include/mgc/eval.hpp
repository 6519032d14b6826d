#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mgc/dataset.hpp"
#include "mgc/matrix.hpp"

namespace mgc::eval {

// Standard error metrics over paired records; ValidationError on length
// mismatch or empty input.
double rmse(std::span<const double> pred, std::span<const double> truth);
double mae(std::span<const double> pred, std::span<const double> truth);
// Mean |pred - truth| / truth over records with truth > 0, as a fraction.
// nullopt when no record has positive demand.
std::optional<double> mape(std::span<const double> pred, std::span<const double> truth);

// Text written for an undefined metric.
inline constexpr const char* kUndefined = "NA";

struct MetricRow {
  std::string model;
  std::string mode;
  double rmse = 0.0;
  double mae = 0.0;
  std::optional<double> mape;
};

// Metrics per mode of (N x V) predictions against the set's labels. Negative
// predictions are clipped to zero first.
std::vector<MetricRow> score(const std::string& model, const std::vector<Matrix>& predictions,
                             const SampleSet& set);

// model,mode,rmse,mae,mape
void write_metrics(const std::filesystem::path& path, const std::vector<MetricRow>& rows);
std::vector<MetricRow> read_metrics(const std::filesystem::path& path);

struct PredictionRecord {
  std::string timestamp;
  std::string zone;
  std::string mode;
  double truth = 0.0;
  double pred = 0.0;
};

// timestamp,zone,mode,truth,pred for every (label hour, zone, mode); the
// predictions are clipped at zero before writing.
std::vector<PredictionRecord> prediction_records(const std::vector<Matrix>& predictions,
                                                 const SampleSet& set);
void write_predictions(const std::filesystem::path& path,
                       const std::vector<PredictionRecord>& records);
std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path);

// Metrics recomputed from prediction records, one row per mode in `modes` order.
std::vector<MetricRow> score_records(const std::string& model,
                                     const std::vector<PredictionRecord>& records,
                                     const std::vector<std::string>& modes);

}  // namespace mgc::eval
