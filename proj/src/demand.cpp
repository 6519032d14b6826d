#include "mgc/demand.hpp"

#include <numeric>

#include "json.hpp"
#include "mgc/errors.hpp"
#include "mgc/io.hpp"
#include "mgc/timeutil.hpp"

namespace mgc {

using nlohmann::json;

DemandTensor::DemandTensor(std::vector<std::string> zones, std::vector<std::string> modes,
                           std::int64_t start_hour, std::size_t n_hours)
    : zones_(std::move(zones)),
      modes_(std::move(modes)),
      start_hour_(start_hour),
      n_hours_(n_hours),
      counts_(modes_.size(), std::vector<double>(zones_.size() * n_hours, 0.0)) {}

void DemandTensor::add(const DemandTensor& other) {
  if (other.zones_ != zones_ || other.modes_ != modes_ || other.start_hour_ != start_hour_ ||
      other.n_hours_ != n_hours_)
    throw ValidationError("cannot merge demand tensors over different axes");
  for (std::size_t m = 0; m < counts_.size(); ++m)
    for (std::size_t i = 0; i < counts_[m].size(); ++i) counts_[m][i] += other.counts_[m][i];
}

double DemandTensor::total() const {
  double s = 0.0;
  for (const auto& block : counts_) s = std::accumulate(block.begin(), block.end(), s);
  return s;
}

void DemandTensor::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  json files = json::object();
  for (std::size_t m = 0; m < modes_.size(); ++m) {
    const std::string file = "mode_" + std::to_string(m) + ".f64";
    io::write_f64(dir / file, counts_[m]);
    files[modes_[m]] = file;
  }
  json manifest = {{"zones", zones_},
                   {"modes", modes_},
                   {"start_hour", timeutil::format_hour(start_hour_)},
                   {"n_hours", n_hours_},
                   {"layout", "zone-major float64 little-endian, one file per mode"},
                   {"files", files}};
  io::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

DemandTensor DemandTensor::load(const std::filesystem::path& dir) {
  json manifest;
  try {
    manifest = json::parse(io::read_text(dir / "manifest.json"));
    DemandTensor t(manifest.at("zones").get<std::vector<std::string>>(),
                   manifest.at("modes").get<std::vector<std::string>>(),
                   timeutil::hour_of(timeutil::parse_datetime(
                       manifest.at("start_hour").get<std::string>())),
                   manifest.at("n_hours").get<std::size_t>());
    for (std::size_t m = 0; m < t.modes_.size(); ++m) {
      const std::string file = manifest.at("files").at(t.modes_[m]).get<std::string>();
      t.counts_[m] = io::read_f64(dir / file, t.zones_.size() * t.n_hours_,
                                  "demand mode " + t.modes_[m]);
    }
    return t;
  } catch (const json::exception& e) {
    throw LoadError("bad demand manifest in " + dir.string() + ": " + e.what());
  }
}

}  // namespace mgc
