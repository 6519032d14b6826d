#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mgc/demand.hpp"
#include "mgc/graphs.hpp"
#include "mgc/matrix.hpp"

namespace mgc {

// ---------------------------------------------------------------------------
// Trip ingestion

struct TripRecord {
  std::int64_t pickup_seconds = 0;  // wall clock, seconds since epoch
  std::string zone;
  std::string mode;
};

// Maps a raw trips file onto TripRecord. `mode_values` translates raw mode
// field values to mode labels (e.g. the FHV shared-ride flag); when empty the
// field is used verbatim.
struct TripColumns {
  std::string pickup_datetime = "pickup_datetime";
  std::string pickup_zone = "pickup_zone";
  std::string mode = "mode";
  std::map<std::string, std::string> mode_values;
};

struct AggregateReport {
  std::size_t accepted = 0;
  std::size_t unknown_zone = 0;
  std::size_t unknown_mode = 0;
  std::size_t out_of_range = 0;
  std::size_t skipped() const { return unknown_zone + unknown_mode + out_of_range; }
  void merge(const AggregateReport& other);
};

// Streams records into zone x hour x mode counts. Timestamps are floored to
// the hour; records outside [start_hour, start_hour + n_hours) or with an
// unknown zone/mode are counted in the report and skipped.
class DemandAggregator {
 public:
  DemandAggregator(std::vector<std::string> zones, std::vector<std::string> modes,
                   std::int64_t start_hour, std::size_t n_hours);

  void add(const TripRecord& trip);
  const AggregateReport& report() const { return report_; }
  DemandTensor& tensor() { return tensor_; }
  DemandTensor finish() && { return std::move(tensor_); }

 private:
  DemandTensor tensor_;
  std::map<std::string, std::size_t> zone_index_;
  std::map<std::string, std::size_t> mode_index_;
  AggregateReport report_;
};

// Shards the records over threads and merges the per-shard tensors.
DemandTensor aggregate(std::span<const TripRecord> trips, const ZoneTable& zones,
                       const std::vector<std::string>& modes, std::int64_t start_hour,
                       std::size_t n_hours, AggregateReport* report = nullptr);

// Reads a trips CSV row by row.
void read_trips(const std::filesystem::path& path, const TripColumns& columns,
                const std::function<void(const TripRecord&)>& sink);

// ---------------------------------------------------------------------------
// Samples

// Offsets (in hours) of the four lag features behind label hour L:
// L-2 (t-1), L-1 (t), L-24 (same hour yesterday), L-168 (same hour last week).
inline constexpr std::array<std::size_t, 4> kLagOffsets = {2, 1, 24, 168};
inline constexpr std::size_t kWarmupHours = 168;
inline constexpr std::size_t kLagFeatures = kLagOffsets.size();

// Absolute label hours [begin, end).
struct HourRange {
  std::int64_t begin = 0;
  std::int64_t end = 0;
  std::size_t length() const { return end > begin ? static_cast<std::size_t>(end - begin) : 0; }
};

struct SplitSpec {
  HourRange train, val, test;
};

// Chronological fractions over all feasible label hours.
SplitSpec fractional_split(const DemandTensor& demand, double train_fraction = 0.7,
                           double val_fraction = 0.15);
// Inclusive calendar dates "YYYY-MM-DD" for each split.
SplitSpec date_split(const std::array<std::string, 2>& train, const std::array<std::string, 2>& val,
                     const std::array<std::string, 2>& test);

// Per (mode, zone) standardization statistics over the training features.
struct FeatureScaler {
  std::vector<std::vector<double>> mean;  // [mode][zone]
  std::vector<std::vector<double>> scale; // [mode][zone], 1 for zero variance

  double apply(std::size_t mode, std::size_t zone, double raw) const {
    return (raw - mean[mode][zone]) / scale[mode][zone];
  }
};

struct Sample {
  std::int64_t label_hour = 0;
  std::vector<Matrix> features;             // per mode: zones x 4, standardized
  std::vector<std::vector<double>> labels;  // per mode: zones, raw counts
};

struct SampleSet {
  std::vector<std::string> zones;
  std::vector<std::string> modes;
  std::vector<Sample> samples;
  FeatureScaler scaler;

  std::size_t size() const { return samples.size(); }
  std::size_t n_zones() const { return zones.size(); }
  std::size_t n_modes() const { return modes.size(); }
};

struct Splits {
  SampleSet train, val, test;
};

// Raw (unscaled) lag values for one label hour: rows zones, 4 columns.
Matrix raw_lag_features(const DemandTensor& demand, std::size_t label_index, std::size_t mode);

FeatureScaler fit_scaler(const DemandTensor& demand, HourRange train);

// Builds samples for a label range with an existing scaler.
SampleSet make_sample_set(const DemandTensor& demand, HourRange range,
                          const FeatureScaler& scaler);

// Validates warm-up and disjointness, fits the scaler on train, builds all
// three splits.
Splits make_samples(const DemandTensor& demand, const SplitSpec& split);

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthConfig {
  std::size_t n_zones = 10;
  std::size_t n_hours = 2000;
  std::size_t n_modes = 2;
  double coupling = 0.9;  // rho in [0, 1]
  std::vector<std::string> mode_names;    // default solo/shared for 2 modes
  std::vector<double> mode_shares;        // default 0.7/0.3 for 2 modes
  double base_rate = 40.0;                // mean hourly requests per zone
  double mode_noise_sigma = 0.5;          // lognormal sigma of the mode-specific factor
  double shock_ar = 0.95;                 // AR(1) coefficient of the shared log-shocks
  double city_shock_sd = 0.1;             // stationary sd of the city-wide log-shock
  double zone_shock_sd = 0.15;            // stationary sd of per-zone log-shocks
  std::size_t n_attributes = 4;
  std::string start = "2018-01-01T00:00:00";

  void validate() const;
};

struct SynthData {
  ZoneTable zones;
  DemandTensor demand;  // Poisson counts
  DemandTensor rates;   // expected counts before Poisson sampling
};

SynthData synthesize(const SynthConfig& cfg, std::uint64_t seed);

}  // namespace mgc
