#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace mgc {

// Zone x hour x mode request counts over a contiguous hourly axis starting at
// `start_hour` (hours since 1970-01-01T00:00, wall clock). Stored per mode,
// zone-major: counts_[mode][zone * n_hours + t].
class DemandTensor {
 public:
  DemandTensor() = default;
  DemandTensor(std::vector<std::string> zones, std::vector<std::string> modes,
               std::int64_t start_hour, std::size_t n_hours);

  const std::vector<std::string>& zones() const { return zones_; }
  const std::vector<std::string>& modes() const { return modes_; }
  std::size_t n_zones() const { return zones_.size(); }
  std::size_t n_modes() const { return modes_.size(); }
  std::size_t n_hours() const { return n_hours_; }
  std::int64_t start_hour() const { return start_hour_; }
  std::int64_t hour_at(std::size_t t) const { return start_hour_ + static_cast<std::int64_t>(t); }

  double operator()(std::size_t zone, std::size_t t, std::size_t mode) const {
    return counts_[mode][zone * n_hours_ + t];
  }
  double& operator()(std::size_t zone, std::size_t t, std::size_t mode) {
    return counts_[mode][zone * n_hours_ + t];
  }

  std::span<const double> series(std::size_t zone, std::size_t mode) const {
    return {counts_[mode].data() + zone * n_hours_, n_hours_};
  }
  const std::vector<double>& mode_block(std::size_t mode) const { return counts_[mode]; }

  // Element-wise sum with a tensor over identical axes (shard merge).
  void add(const DemandTensor& other);
  double total() const;

  // JSON manifest plus one little-endian float64 file per mode.
  void save(const std::filesystem::path& dir) const;
  static DemandTensor load(const std::filesystem::path& dir);

  friend bool operator==(const DemandTensor&, const DemandTensor&) = default;

 private:
  std::vector<std::string> zones_;
  std::vector<std::string> modes_;
  std::int64_t start_hour_ = 0;
  std::size_t n_hours_ = 0;
  std::vector<std::vector<double>> counts_;
};

}  // namespace mgc
