#include "mgc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "mgc/errors.hpp"
#include "mgc/io.hpp"
#include "mgc/timeutil.hpp"

namespace mgc::eval {

namespace {

void check_pair(std::span<const double> pred, std::span<const double> truth, const char* what) {
  if (pred.size() != truth.size())
    throw ValidationError(std::string(what) + ": " + std::to_string(pred.size()) +
                          " predictions but " + std::to_string(truth.size()) + " truths");
  if (pred.empty()) throw ValidationError(std::string(what) + ": no records");
}

}  // namespace

double rmse(std::span<const double> pred, std::span<const double> truth) {
  check_pair(pred, truth, "rmse");
  double sq = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) sq += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return std::sqrt(sq / static_cast<double>(pred.size()));
}

double mae(std::span<const double> pred, std::span<const double> truth) {
  check_pair(pred, truth, "mae");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - truth[i]);
  return s / static_cast<double>(pred.size());
}

std::optional<double> mape(std::span<const double> pred, std::span<const double> truth) {
  check_pair(pred, truth, "mape");
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!(truth[i] > 0.0)) continue;
    s += std::abs(pred[i] - truth[i]) / truth[i];
    ++n;
  }
  if (n == 0) return std::nullopt;
  return s / static_cast<double>(n);
}

std::vector<MetricRow> score(const std::string& model, const std::vector<Matrix>& predictions,
                             const SampleSet& set) {
  if (predictions.size() != set.n_modes())
    throw ValidationError("score: " + std::to_string(predictions.size()) +
                          " prediction blocks for " + std::to_string(set.n_modes()) + " modes");
  std::vector<MetricRow> rows;
  for (std::size_t m = 0; m < set.n_modes(); ++m) {
    const Matrix& p = predictions[m];
    if (p.rows() != set.size() || p.cols() != set.n_zones())
      throw ShapeError("score: predictions " + shape_string(p) + " for " +
                       std::to_string(set.size()) + " samples of " +
                       std::to_string(set.n_zones()) + " zones");
    std::vector<double> pred, truth;
    pred.reserve(p.size());
    truth.reserve(p.size());
    for (std::size_t s = 0; s < set.size(); ++s)
      for (std::size_t z = 0; z < set.n_zones(); ++z) {
        pred.push_back(std::max(p(s, z), 0.0));
        truth.push_back(set.samples[s].labels[m][z]);
      }
    rows.push_back({model, set.modes[m], rmse(pred, truth), mae(pred, truth), mape(pred, truth)});
  }
  return rows;
}

void write_metrics(const std::filesystem::path& path, const std::vector<MetricRow>& rows) {
  std::string out = "model,mode,rmse,mae,mape\n";
  for (const MetricRow& r : rows)
    out += r.model + "," + r.mode + "," + io::format_double(r.rmse) + "," +
           io::format_double(r.mae) + "," + (r.mape ? io::format_double(*r.mape) : kUndefined) +
           "\n";
  io::write_text(path, out);
}

std::vector<MetricRow> read_metrics(const std::filesystem::path& path) {
  const io::CsvTable t = io::read_csv(path);
  const std::size_t cm = t.column("model"), cmode = t.column("mode"), cr = t.column("rmse"),
                    ca = t.column("mae"), cp = t.column("mape");
  std::vector<MetricRow> rows;
  for (const auto& row : t.rows) {
    MetricRow r;
    r.model = row.at(cm);
    r.mode = row.at(cmode);
    r.rmse = io::parse_double(row.at(cr), "rmse");
    r.mae = io::parse_double(row.at(ca), "mae");
    if (row.at(cp) != kUndefined) r.mape = io::parse_double(row.at(cp), "mape");
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<PredictionRecord> prediction_records(const std::vector<Matrix>& predictions,
                                                 const SampleSet& set) {
  if (predictions.size() != set.n_modes())
    throw ValidationError("prediction_records: one prediction block per mode expected");
  std::vector<PredictionRecord> out;
  out.reserve(set.size() * set.n_zones() * set.n_modes());
  for (std::size_t s = 0; s < set.size(); ++s) {
    const std::string ts = timeutil::format_hour(set.samples[s].label_hour);
    for (std::size_t z = 0; z < set.n_zones(); ++z)
      for (std::size_t m = 0; m < set.n_modes(); ++m)
        out.push_back({ts, set.zones[z], set.modes[m], set.samples[s].labels[m][z],
                       std::max(predictions[m](s, z), 0.0)});
  }
  return out;
}

void write_predictions(const std::filesystem::path& path,
                       const std::vector<PredictionRecord>& records) {
  std::string out = "timestamp,zone,mode,truth,pred\n";
  out.reserve(records.size() * 48);
  for (const PredictionRecord& r : records)
    out += r.timestamp + "," + r.zone + "," + r.mode + "," + io::format_double(r.truth) + "," +
           io::format_double(r.pred) + "\n";
  io::write_text(path, out);
}

std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path) {
  const io::CsvTable t = io::read_csv(path);
  const std::size_t ct = t.column("timestamp"), cz = t.column("zone"), cm = t.column("mode"),
                    cy = t.column("truth"), cp = t.column("pred");
  std::vector<PredictionRecord> out;
  out.reserve(t.rows.size());
  for (const auto& row : t.rows)
    out.push_back({row.at(ct), row.at(cz), row.at(cm), io::parse_double(row.at(cy), "truth"),
                   io::parse_double(row.at(cp), "pred")});
  return out;
}

std::vector<MetricRow> score_records(const std::string& model,
                                     const std::vector<PredictionRecord>& records,
                                     const std::vector<std::string>& modes) {
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by_mode;
  for (const PredictionRecord& r : records) {
    auto& [pred, truth] = by_mode[r.mode];
    pred.push_back(std::max(r.pred, 0.0));
    truth.push_back(r.truth);
  }
  std::vector<MetricRow> rows;
  for (const std::string& mode : modes) {
    const auto it = by_mode.find(mode);
    if (it == by_mode.end()) throw ValidationError("no prediction records for mode " + mode);
    const auto& [pred, truth] = it->second;
    rows.push_back({model, mode, rmse(pred, truth), mae(pred, truth), mape(pred, truth)});
  }
  return rows;
}

}  // namespace mgc::eval
