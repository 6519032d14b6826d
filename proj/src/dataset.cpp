#include "mgc/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <numbers>
#include <random>

#include "mgc/errors.hpp"
#include "mgc/io.hpp"
#include "mgc/kernels.hpp"
#include "mgc/timeutil.hpp"

namespace mgc {

// --- ingestion -------------------------------------------------------------

void AggregateReport::merge(const AggregateReport& o) {
  accepted += o.accepted;
  unknown_zone += o.unknown_zone;
  unknown_mode += o.unknown_mode;
  out_of_range += o.out_of_range;
}

DemandAggregator::DemandAggregator(std::vector<std::string> zones,
                                   std::vector<std::string> modes, std::int64_t start_hour,
                                   std::size_t n_hours)
    : tensor_(zones, modes, start_hour, n_hours) {
  for (std::size_t i = 0; i < zones.size(); ++i) zone_index_[zones[i]] = i;
  for (std::size_t m = 0; m < modes.size(); ++m) mode_index_[modes[m]] = m;
}

void DemandAggregator::add(const TripRecord& trip) {
  auto z = zone_index_.find(trip.zone);
  if (z == zone_index_.end()) {
    ++report_.unknown_zone;
    return;
  }
  auto m = mode_index_.find(trip.mode);
  if (m == mode_index_.end()) {
    ++report_.unknown_mode;
    return;
  }
  const std::int64_t t = timeutil::hour_of(trip.pickup_seconds) - tensor_.start_hour();
  if (t < 0 || t >= static_cast<std::int64_t>(tensor_.n_hours())) {
    ++report_.out_of_range;
    return;
  }
  tensor_(z->second, static_cast<std::size_t>(t), m->second) += 1.0;
  ++report_.accepted;
}

DemandTensor aggregate(std::span<const TripRecord> trips, const ZoneTable& zones,
                       const std::vector<std::string>& modes, std::int64_t start_hour,
                       std::size_t n_hours, AggregateReport* report) {
  const auto ids = zones.ids();
  const int shards = std::max(1, std::min<int>(kernels::thread_count(),
                                               static_cast<int>(trips.size() / 4096 + 1)));
  std::vector<DemandAggregator> parts;
  parts.reserve(static_cast<std::size_t>(shards));
  for (int s = 0; s < shards; ++s) parts.emplace_back(ids, modes, start_hour, n_hours);
  const std::size_t chunk = (trips.size() + static_cast<std::size_t>(shards) - 1) /
                            static_cast<std::size_t>(shards);
#pragma omp parallel for schedule(static) num_threads(shards)
  for (int s = 0; s < shards; ++s) {
    const std::size_t begin = static_cast<std::size_t>(s) * chunk;
    const std::size_t end = std::min(trips.size(), begin + chunk);
    for (std::size_t i = begin; i < end; ++i) parts[static_cast<std::size_t>(s)].add(trips[i]);
  }
  // Counts are integers, so the merge is exact in any order.
  DemandTensor out = std::move(parts[0].tensor());
  AggregateReport total = parts[0].report();
  for (std::size_t s = 1; s < parts.size(); ++s) {
    out.add(parts[s].tensor());
    total.merge(parts[s].report());
  }
  if (report) *report = total;
  return out;
}

void read_trips(const std::filesystem::path& path, const TripColumns& columns,
                const std::function<void(const TripRecord&)>& sink) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open trips file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("empty trips file " + path.string());
  io::CsvTable header_only;
  header_only.header = io::split_csv_line(line);
  const std::size_t ct = header_only.column(columns.pickup_datetime);
  const std::size_t cz = header_only.column(columns.pickup_zone);
  const std::size_t cm = header_only.column(columns.mode);
  std::size_t lineno = 1;
  TripRecord rec;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto f = io::split_csv_line(line);
    if (f.size() != header_only.header.size())
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                            std::to_string(header_only.header.size()) + " fields");
    rec.pickup_seconds = timeutil::parse_datetime(f[ct]);
    rec.zone = f[cz];
    if (columns.mode_values.empty()) {
      rec.mode = f[cm];
    } else {
      auto it = columns.mode_values.find(f[cm]);
      rec.mode = it == columns.mode_values.end() ? f[cm] : it->second;
    }
    sink(rec);
  }
}

// --- samples ---------------------------------------------------------------

namespace {

std::size_t label_index(const DemandTensor& d, std::int64_t hour) {
  return static_cast<std::size_t>(hour - d.start_hour());
}

void check_range(const DemandTensor& d, const HourRange& r, const char* name) {
  const std::int64_t first_feasible = d.start_hour() + static_cast<std::int64_t>(kWarmupHours);
  if (r.end < r.begin)
    throw ValidationError(std::string(name) + " split ends before it begins");
  if (r.length() == 0) return;
  if (r.begin < first_feasible)
    throw ValidationError(std::string(name) + " split starts at " +
                          timeutil::format_hour(r.begin) +
                          " without 168 hours of warm-up; first feasible label hour is " +
                          timeutil::format_hour(first_feasible));
  if (r.end > d.start_hour() + static_cast<std::int64_t>(d.n_hours()))
    throw ValidationError(std::string(name) + " split extends past the end of the demand data (" +
                          timeutil::format_hour(d.start_hour() +
                                                static_cast<std::int64_t>(d.n_hours())) +
                          ")");
}

}  // namespace

SplitSpec fractional_split(const DemandTensor& demand, double train_fraction,
                           double val_fraction) {
  if (demand.n_hours() <= kWarmupHours + 2)
    throw ValidationError("demand tensor too short for a split: " +
                          std::to_string(demand.n_hours()) + " hours");
  if (!(train_fraction > 0.0) || !(val_fraction >= 0.0) || train_fraction + val_fraction >= 1.0)
    throw ValidationError("split fractions must be positive and sum below 1");
  const auto feasible = static_cast<std::int64_t>(demand.n_hours() - kWarmupHours);
  const auto n_train = static_cast<std::int64_t>(std::floor(feasible * train_fraction));
  const auto n_val = static_cast<std::int64_t>(std::floor(feasible * val_fraction));
  const std::int64_t first = demand.start_hour() + static_cast<std::int64_t>(kWarmupHours);
  SplitSpec s;
  s.train = {first, first + n_train};
  s.val = {s.train.end, s.train.end + n_val};
  s.test = {s.val.end, first + feasible};
  return s;
}

SplitSpec date_split(const std::array<std::string, 2>& train, const std::array<std::string, 2>& val,
                     const std::array<std::string, 2>& test) {
  auto range = [](const std::array<std::string, 2>& r) {
    const std::int64_t b = timeutil::hour_of(timeutil::parse_datetime(r[0]));
    const std::int64_t e = timeutil::hour_of(timeutil::parse_datetime(r[1]));
    // inclusive end date: run through 23:00 of the last day
    return HourRange{b, timeutil::floor_div(e, 24) * 24 + 24};
  };
  return {range(train), range(val), range(test)};
}

Matrix raw_lag_features(const DemandTensor& demand, std::size_t label, std::size_t mode) {
  if (label < kWarmupHours || label >= demand.n_hours())
    throw ValidationError("label index " + std::to_string(label) + " has no complete lag window");
  Matrix f(demand.n_zones(), kLagFeatures);
  for (std::size_t z = 0; z < demand.n_zones(); ++z)
    for (std::size_t c = 0; c < kLagFeatures; ++c) f(z, c) = demand(z, label - kLagOffsets[c], mode);
  return f;
}

FeatureScaler fit_scaler(const DemandTensor& demand, HourRange train) {
  check_range(demand, train, "train");
  if (train.length() == 0) throw ValidationError("train split is empty");
  FeatureScaler s;
  s.mean.assign(demand.n_modes(), std::vector<double>(demand.n_zones(), 0.0));
  s.scale.assign(demand.n_modes(), std::vector<double>(demand.n_zones(), 1.0));
  const double count = static_cast<double>(train.length() * kLagFeatures);
  for (std::size_t m = 0; m < demand.n_modes(); ++m)
    for (std::size_t z = 0; z < demand.n_zones(); ++z) {
      auto series = demand.series(z, m);
      double sum = 0.0;
      for (std::int64_t h = train.begin; h < train.end; ++h)
        for (std::size_t off : kLagOffsets) sum += series[label_index(demand, h) - off];
      const double mean = sum / count;
      double ss = 0.0;
      for (std::int64_t h = train.begin; h < train.end; ++h)
        for (std::size_t off : kLagOffsets) {
          const double d = series[label_index(demand, h) - off] - mean;
          ss += d * d;
        }
      const double sd = std::sqrt(ss / count);
      s.mean[m][z] = mean;
      s.scale[m][z] = sd > 1e-12 * (1.0 + std::abs(mean)) ? sd : 1.0;
    }
  return s;
}

SampleSet make_sample_set(const DemandTensor& demand, HourRange range,
                          const FeatureScaler& scaler) {
  check_range(demand, range, "sample");
  SampleSet set;
  set.zones = demand.zones();
  set.modes = demand.modes();
  set.scaler = scaler;
  set.samples.reserve(range.length());
  for (std::int64_t h = range.begin; h < range.end; ++h) {
    const std::size_t label = label_index(demand, h);
    Sample s;
    s.label_hour = h;
    for (std::size_t m = 0; m < demand.n_modes(); ++m) {
      Matrix f = raw_lag_features(demand, label, m);
      for (std::size_t z = 0; z < f.rows(); ++z)
        for (std::size_t c = 0; c < f.cols(); ++c) f(z, c) = scaler.apply(m, z, f(z, c));
      s.features.push_back(std::move(f));
      std::vector<double> y(demand.n_zones());
      for (std::size_t z = 0; z < demand.n_zones(); ++z) y[z] = demand(z, label, m);
      s.labels.push_back(std::move(y));
    }
    set.samples.push_back(std::move(s));
  }
  return set;
}

Splits make_samples(const DemandTensor& demand, const SplitSpec& split) {
  check_range(demand, split.train, "train");
  check_range(demand, split.val, "validation");
  check_range(demand, split.test, "test");
  auto overlaps = [](const HourRange& a, const HourRange& b) {
    return a.length() > 0 && b.length() > 0 && a.begin < b.end && b.begin < a.end;
  };
  if (overlaps(split.train, split.val) || overlaps(split.train, split.test) ||
      overlaps(split.val, split.test))
    throw ValidationError("train/validation/test label ranges overlap");
  FeatureScaler scaler = fit_scaler(demand, split.train);
  return {make_sample_set(demand, split.train, scaler), make_sample_set(demand, split.val, scaler),
          make_sample_set(demand, split.test, scaler)};
}

// --- synthetic data --------------------------------------------------------

void SynthConfig::validate() const {
  if (!(coupling >= 0.0 && coupling <= 1.0))
    throw ValidationError("synth coupling must lie in [0, 1], got " + std::to_string(coupling));
  if (n_zones == 0 || n_modes == 0) throw ValidationError("synth needs at least one zone and mode");
  if (n_hours <= kWarmupHours) throw ValidationError("synth n_hours must exceed 168");
  if (!mode_names.empty() && mode_names.size() != n_modes)
    throw ValidationError("synth mode_names length must equal n_modes");
  if (!mode_shares.empty() && mode_shares.size() != n_modes)
    throw ValidationError("synth mode_shares length must equal n_modes");
  for (double s : mode_shares)
    if (!(s > 0.0)) throw ValidationError("synth mode shares must be positive");
  if (!(base_rate > 0.0) || !(mode_noise_sigma >= 0.0) || !(city_shock_sd >= 0.0) ||
      !(zone_shock_sd >= 0.0) || !(shock_ar >= 0.0 && shock_ar < 1.0))
    throw ValidationError("synth rate/noise parameters out of range");
  if (n_attributes == 0) throw ValidationError("synth needs at least one zone attribute");
}

namespace {

// Morning and evening peaks over a night trough; mean 1 over the day.
std::array<double, 24> daily_profile() {
  std::array<double, 24> p{};
  double sum = 0.0;
  for (int h = 0; h < 24; ++h) {
    const double x = h;
    p[h] = 0.25 + std::exp(-(x - 8.5) * (x - 8.5) / 6.0) +
           1.3 * std::exp(-(x - 18.5) * (x - 18.5) / 10.0) +
           0.5 * std::exp(-(x - 23.0) * (x - 23.0) / 6.0);
    sum += p[h];
  }
  for (double& v : p) v *= 24.0 / sum;
  return p;
}

constexpr std::array<double, 7> kWeekly = {0.95, 1.0, 1.0, 1.05, 1.15, 1.05, 0.8};

}  // namespace

SynthData synthesize(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<std::string> mode_names = cfg.mode_names;
  if (mode_names.empty()) {
    if (cfg.n_modes == 2) mode_names = {"solo", "shared"};
    else
      for (std::size_t m = 0; m < cfg.n_modes; ++m) mode_names.push_back("mode" + std::to_string(m));
  }
  std::vector<double> shares = cfg.mode_shares;
  if (shares.empty()) {
    if (cfg.n_modes == 2) shares = {0.7, 0.3};
    else shares.assign(cfg.n_modes, 1.0 / static_cast<double>(cfg.n_modes));
  }

  // Zones on a grid with 4-neighborhood adjacency, about 1 km apart.
  const auto grid_cols =
      static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(cfg.n_zones))));
  SynthData out;
  for (std::size_t a = 0; a < cfg.n_attributes; ++a)
    out.zones.attribute_names.push_back("attr" + std::to_string(a));
  std::vector<double> base(cfg.n_zones);
  for (std::size_t i = 0; i < cfg.n_zones; ++i) {
    Zone z;
    z.id = "z" + std::to_string(i);
    const std::size_t r = i / grid_cols, c = i % grid_cols;
    z.lat = 40.70 + 0.009 * static_cast<double>(r);
    z.lng = -74.02 + 0.012 * static_cast<double>(c);
    double log_activity = 0.0;
    for (std::size_t a = 0; a < cfg.n_attributes; ++a) {
      const double g = normal(rng);
      z.attributes.push_back(std::exp(0.5 * g));
      if (a < 2) log_activity += 0.5 * g;
    }
    base[i] = cfg.base_rate * std::exp(log_activity - 0.125);
    auto link = [&](std::size_t j) { z.neighbors.push_back("z" + std::to_string(j)); };
    if (c > 0) link(i - 1);
    if (c + 1 < grid_cols && i + 1 < cfg.n_zones) link(i + 1);
    if (r > 0) link(i - grid_cols);
    if (i + grid_cols < cfg.n_zones) link(i + grid_cols);
    out.zones.zones.push_back(std::move(z));
  }

  const std::int64_t start_hour = timeutil::hour_of(timeutil::parse_datetime(cfg.start));
  out.demand = DemandTensor(out.zones.ids(), mode_names, start_hour, cfg.n_hours);
  out.rates = out.demand;

  const auto daily = daily_profile();
  const double innov = std::sqrt(1.0 - cfg.shock_ar * cfg.shock_ar);
  const double shock_var = cfg.city_shock_sd * cfg.city_shock_sd +
                           cfg.zone_shock_sd * cfg.zone_shock_sd;
  const double sigma = cfg.mode_noise_sigma;
  double city = cfg.city_shock_sd * normal(rng);
  std::vector<double> zone_shock(cfg.n_zones);
  for (double& v : zone_shock) v = cfg.zone_shock_sd * normal(rng);

  for (std::size_t t = 0; t < cfg.n_hours; ++t) {
    const std::int64_t hour = start_hour + static_cast<std::int64_t>(t);
    const auto hod = static_cast<std::size_t>(hour - timeutil::floor_div(hour, 24) * 24);
    const double season = daily[hod] * kWeekly[static_cast<std::size_t>(timeutil::weekday_of_hour(hour))];
    if (t > 0) {
      city = cfg.shock_ar * city + innov * cfg.city_shock_sd * normal(rng);
      for (double& v : zone_shock) v = cfg.shock_ar * v + innov * cfg.zone_shock_sd * normal(rng);
    }
    for (std::size_t i = 0; i < cfg.n_zones; ++i) {
      const double lambda = base[i] * season * std::exp(city + zone_shock[i] - 0.5 * shock_var);
      for (std::size_t m = 0; m < cfg.n_modes; ++m) {
        const double eps = std::exp(sigma * normal(rng) - 0.5 * sigma * sigma);
        const double rate = shares[m] * lambda * (cfg.coupling + (1.0 - cfg.coupling) * eps);
        out.rates(i, t, m) = rate;
        out.demand(i, t, m) =
            rate > 0.0 ? static_cast<double>(std::poisson_distribution<long long>(rate)(rng)) : 0.0;
      }
    }
  }
  return out;
}

}  // namespace mgc
