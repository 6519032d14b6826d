#include <chrono>
#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "mgc/dataset.hpp"
#include "mgc/errors.hpp"
#include "mgc/io.hpp"
#include "mgc/timeutil.hpp"

using namespace mgc;
using timeutil::parse_datetime;

namespace {

ZoneTable zones_named(std::vector<std::string> ids) {
  ZoneTable t;
  double lat = 40.7;
  for (auto& id : ids) {
    Zone z;
    z.id = id;
    z.lng = -74.0;
    z.lat = (lat += 0.01);
    z.attributes = {lat};
    t.zones.push_back(z);
  }
  return t;
}

// Demand whose value encodes (zone, hour index): 1000 * t + zone + 0.25 * mode.
DemandTensor encoded_demand(std::size_t zones, std::size_t hours, std::size_t modes) {
  std::vector<std::string> ids, names;
  for (std::size_t i = 0; i < zones; ++i) ids.push_back("z" + std::to_string(i));
  for (std::size_t m = 0; m < modes; ++m) names.push_back("m" + std::to_string(m));
  DemandTensor d(ids, names, timeutil::hour_of(parse_datetime("2018-01-01")), hours);
  for (std::size_t i = 0; i < zones; ++i)
    for (std::size_t t = 0; t < hours; ++t)
      for (std::size_t m = 0; m < modes; ++m)
        d(i, t, m) = 1000.0 * static_cast<double>(t) + static_cast<double>(i) + 0.25 * static_cast<double>(m);
  return d;
}

FeatureScaler identity_scaler(std::size_t modes, std::size_t zones) {
  FeatureScaler s;
  s.mean.assign(modes, std::vector<double>(zones, 0.0));
  s.scale.assign(modes, std::vector<double>(zones, 1.0));
  return s;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i], mb += b[i];
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST_CASE("datetime parsing and formatting") {
  CHECK(parse_datetime("1970-01-01T00:00:00") == 0);
  CHECK(parse_datetime("1970-01-02") == 86400);
  CHECK(parse_datetime("2018-03-04 05:06:07") == parse_datetime("2018-03-04T05:06:07Z"));
  CHECK(parse_datetime("2018-03-04 05:06:07.999") == parse_datetime("2018-03-04T05:06:07"));
  CHECK(timeutil::format_hour(timeutil::hour_of(parse_datetime("2018-12-31 23:59:59"))) ==
        "2018-12-31T23:00:00");
  CHECK(timeutil::weekday_of_hour(timeutil::hour_of(parse_datetime("2018-01-01"))) == 0);
  CHECK(timeutil::weekday_of_hour(timeutil::hour_of(parse_datetime("2018-01-07 12:00"))) == 6);
  CHECK_THROWS_AS(parse_datetime("2018-13-01"), ValidationError);
  CHECK_THROWS_AS(parse_datetime("yesterday"), ValidationError);
}

TEST_CASE("aggregate counts trips into hour buckets") {
  const ZoneTable zones = zones_named({"a", "b"});
  const std::vector<std::string> modes = {"solo", "shared"};
  const std::int64_t start = timeutil::hour_of(parse_datetime("2018-01-01"));

  SUBCASE("empty stream") {
    const DemandTensor d = aggregate({}, zones, modes, start, 48);
    CHECK(d.n_hours() == 48);
    CHECK(d.total() == 0.0);
  }
  SUBCASE("three identical trips") {
    std::vector<TripRecord> trips(3, {parse_datetime("2018-01-01 05:30:00"), "a", "solo"});
    const DemandTensor d = aggregate(trips, zones, modes, start, 48);
    CHECK(d(0, 5, 0) == 3.0);
    CHECK(d.total() == 3.0);
  }
  SUBCASE("hour boundary splits 6/4") {
    const std::vector<std::string> stamps = {
        "2018-01-01 10:00:00", "2018-01-01 10:15:00", "2018-01-01 10:30:30", "2018-01-01 10:45:00",
        "2018-01-01 10:59:58", "2018-01-01 10:59:59", "2018-01-01 11:00:00", "2018-01-01 11:00:01",
        "2018-01-01 11:30:00", "2018-01-01 11:59:59"};
    std::vector<TripRecord> trips;
    for (const auto& s : stamps) trips.push_back({parse_datetime(s), "b", "shared"});
    // Oracle: bucket by the hour digits of the text.
    int ten = 0, eleven = 0;
    for (const auto& s : stamps) (s.substr(11, 2) == "10" ? ten : eleven)++;
    AggregateReport report;
    const DemandTensor d = aggregate(trips, zones, modes, start, 48, &report);
    CHECK(ten == 6);
    CHECK(d(1, 10, 1) == ten);
    CHECK(d(1, 11, 1) == eleven);
    CHECK(report.accepted == 10);
  }
  SUBCASE("unknown and out-of-range records are reported") {
    std::vector<TripRecord> trips = {{parse_datetime("2018-01-01 01:00"), "a", "solo"},
                                     {parse_datetime("2018-01-01 01:00"), "zz", "solo"},
                                     {parse_datetime("2018-01-01 01:00"), "a", "pool"},
                                     {parse_datetime("2017-12-31 23:00"), "a", "solo"},
                                     {parse_datetime("2018-01-03 00:00"), "a", "solo"}};
    AggregateReport report;
    const DemandTensor d = aggregate(trips, zones, modes, start, 48, &report);
    CHECK(report.accepted == 1);
    CHECK(report.unknown_zone == 1);
    CHECK(report.unknown_mode == 1);
    CHECK(report.out_of_range == 2);
    CHECK(d.total() == 1.0);
  }
}

TEST_CASE("sharded aggregation equals a serial pass and conserves records") {
  const ZoneTable zones = zones_named({"a", "b", "c", "d"});
  const std::vector<std::string> modes = {"solo", "shared"};
  const std::int64_t start = timeutil::hour_of(parse_datetime("2018-01-01"));
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::int64_t> sec(-3600, 200 * 3600);
  std::uniform_int_distribution<int> pick(0, 4);
  std::vector<TripRecord> trips;
  const std::vector<std::string> zone_pool = {"a", "b", "c", "d", "q"};
  for (int i = 0; i < 50000; ++i)
    trips.push_back({start * 3600 + sec(rng), zone_pool[pick(rng)], pick(rng) < 3 ? "solo" : "shared"});
  AggregateReport report;
  const DemandTensor sharded = aggregate(trips, zones, modes, start, 168, &report);
  DemandAggregator serial(zones.ids(), modes, start, 168);
  for (const auto& t : trips) serial.add(t);
  CHECK(sharded == serial.tensor());
  CHECK(sharded.total() == static_cast<double>(report.accepted));
  CHECK(report.accepted + report.skipped() == trips.size());
}

TEST_CASE("read_trips maps raw columns") {
  const auto dir = std::filesystem::temp_directory_path() / "mgc_test_trips";
  std::filesystem::create_directories(dir);
  io::write_text(dir / "fhv.csv",
                 "dispatching_base_num,Pickup_DateTime,PUlocationID,SR_Flag\n"
                 "B1,2018-01-01 00:10:00,a,\n"
                 "B1,2018-01-01 00:20:00,b,1\n"
                 "B2,\"2018-01-01 01:05:00\",a,1\n");
  TripColumns cols;
  cols.pickup_datetime = "Pickup_DateTime";
  cols.pickup_zone = "PUlocationID";
  cols.mode = "SR_Flag";
  cols.mode_values = {{"", "solo"}, {"1", "shared"}};
  DemandAggregator agg(std::vector<std::string>{"a", "b"}, {"solo", "shared"},
                       timeutil::hour_of(parse_datetime("2018-01-01")), 24);
  read_trips(dir / "fhv.csv", cols, [&](const TripRecord& r) { agg.add(r); });
  CHECK(agg.report().accepted == 3);
  CHECK(agg.tensor()(0, 0, 0) == 1.0);
  CHECK(agg.tensor()(1, 0, 1) == 1.0);
  CHECK(agg.tensor()(0, 1, 1) == 1.0);

  TripColumns wrong;
  CHECK_THROWS_AS(read_trips(dir / "fhv.csv", wrong, [](const TripRecord&) {}), ValidationError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("demand tensor persists bit-exactly") {
  const DemandTensor d = encoded_demand(3, 50, 2);
  const auto dir = std::filesystem::temp_directory_path() / "mgc_test_demand";
  std::filesystem::remove_all(dir);
  d.save(dir);
  CHECK(DemandTensor::load(dir) == d);
  io::write_text(dir / "manifest.json", "{\"zones\": 3}");
  CHECK_THROWS_AS(DemandTensor::load(dir), LoadError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("lag features follow the index oracle") {
  const DemandTensor d = encoded_demand(3, 400, 2);
  for (std::size_t label : {168u, 200u, 399u})
    for (std::size_t m = 0; m < 2; ++m) {
      const Matrix f = raw_lag_features(d, label, m);
      // Label t+1 = label: columns t-1, t, t+1-24, t+1-168.
      const std::size_t t = label - 1;
      const std::size_t expect[4] = {t - 1, t, t + 1 - 24, t + 1 - 168};
      for (std::size_t z = 0; z < 3; ++z)
        for (std::size_t c = 0; c < 4; ++c) CHECK(f(z, c) == d(z, expect[c], m));
    }
  CHECK_THROWS_AS(raw_lag_features(d, 167, 0), ValidationError);
}

TEST_CASE("val and test features never look past their label") {
  const DemandTensor d = encoded_demand(2, 600, 2);
  const SplitSpec split = fractional_split(d);
  const FeatureScaler id = identity_scaler(2, 2);
  for (HourRange r : {split.val, split.test}) {
    const SampleSet set = make_sample_set(d, r, id);
    REQUIRE(set.size() == r.length());
    for (const Sample& s : set.samples) {
      const double label_index = static_cast<double>(s.label_hour - d.start_hour());
      CHECK(s.labels[0][1] == d(1, static_cast<std::size_t>(label_index), 0));
      for (std::size_t m = 0; m < 2; ++m)
        for (std::size_t z = 0; z < 2; ++z)
          for (std::size_t c = 0; c < 4; ++c) {
            const double hour = std::floor(s.features[m](z, c) / 1000.0);
            CHECK(hour < label_index);
          }
    }
  }
}

TEST_CASE("standardization uses train statistics") {
  SynthConfig cfg;
  cfg.n_zones = 5;
  cfg.n_hours = 700;
  const SynthData data = synthesize(cfg, 21);
  const Splits s = make_samples(data.demand, fractional_split(data.demand));
  for (std::size_t m = 0; m < 2; ++m)
    for (std::size_t z = 0; z < 5; ++z) {
      double sum = 0.0, sq = 0.0;
      for (const Sample& x : s.train.samples)
        for (std::size_t c = 0; c < 4; ++c) {
          sum += x.features[m](z, c);
          sq += x.features[m](z, c) * x.features[m](z, c);
        }
      const double n = 4.0 * static_cast<double>(s.train.size());
      CHECK(std::abs(sum / n) < 1e-9);
      CHECK(sq / n == doctest::Approx(1.0).epsilon(1e-9));
    }
  // Val/test share the train scaler.
  CHECK(s.val.scaler.mean == s.train.scaler.mean);
  CHECK(s.test.scaler.scale == s.train.scaler.scale);
}

TEST_CASE("constant demand standardizes to zero") {
  DemandTensor d(std::vector<std::string>{"a", "b"}, {"solo"}, 0, 400);
  for (std::size_t t = 0; t < 400; ++t) d(0, t, 0) = d(1, t, 0) = 7.0;
  const Splits s = make_samples(d, fractional_split(d));
  CHECK(s.train.scaler.scale[0][0] == 1.0);
  for (const Sample& x : s.test.samples)
    for (double v : x.features[0].span()) CHECK(v == 0.0);
}

TEST_CASE("warm-up and overlap errors") {
  const DemandTensor d = encoded_demand(2, 400, 1);
  SplitSpec split = fractional_split(d);
  split.train.begin -= 1;
  try {
    make_samples(d, split);
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("2018-01-08T00:00:00") != std::string::npos);
  }
  split = fractional_split(d);
  split.val.begin -= 5;
  CHECK_THROWS_AS(make_samples(d, split), ValidationError);
  split = fractional_split(d);
  split.test.end += 1;
  CHECK_THROWS_AS(make_samples(d, split), ValidationError);
}

TEST_CASE("full-year 2018 date ranges give range-length sample counts") {
  using namespace std::chrono;
  auto hours_between = [](sys_days a, sys_days b) {
    return static_cast<std::size_t>(duration_cast<hours>(b - a).count());
  };
  // Calendar oracle with inclusive end dates.
  const std::size_t train_h =
      hours_between(sys_days{2018y / January / 8}, sys_days{2018y / November / 5});
  const std::size_t val_h =
      hours_between(sys_days{2018y / November / 5}, sys_days{2018y / December / 3});
  const std::size_t test_h =
      hours_between(sys_days{2018y / December / 3}, sys_days{2019y / January / 1});
  CHECK(train_h == 7224);
  CHECK(val_h == 672);
  CHECK(test_h == 696);

  const SplitSpec split = date_split({"2018-01-08", "2018-11-04"}, {"2018-11-05", "2018-12-02"},
                                     {"2018-12-03", "2018-12-31"});
  DemandTensor d(std::vector<std::string>{"a", "b"}, {"solo", "shared"},
                 timeutil::hour_of(parse_datetime("2018-01-01")), 8760);
  for (std::size_t t = 0; t < 8760; ++t) d(0, t, 0) = d(1, t, 1) = static_cast<double>(t % 24);
  const Splits s = make_samples(d, split);
  CHECK(s.train.size() == train_h);
  CHECK(s.val.size() == val_h);
  CHECK(s.test.size() == test_h);
  CHECK(timeutil::format_hour(s.test.samples.back().label_hour) == "2018-12-31T23:00:00");
}

TEST_CASE("fractional split covers every feasible label") {
  const DemandTensor d = encoded_demand(1, 2000, 1);
  const SplitSpec s = fractional_split(d);
  CHECK(s.train.begin == d.start_hour() + 168);
  CHECK(s.train.length() == 1282);
  CHECK(s.val.length() == 274);
  CHECK(s.train.length() + s.val.length() + s.test.length() == 2000 - 168);
  CHECK(s.test.end == d.start_hour() + 2000);
}

TEST_CASE("synthetic generator") {
  SynthConfig cfg;
  cfg.n_zones = 6;
  cfg.n_hours = 600;

  SUBCASE("coupling range is validated") {
    cfg.coupling = 1.5;
    CHECK_THROWS_AS(synthesize(cfg, 1), ValidationError);
    cfg.coupling = -0.1;
    CHECK_THROWS_AS(synthesize(cfg, 1), ValidationError);
  }
  SUBCASE("full coupling gives proportional rates") {
    cfg.coupling = 1.0;
    const SynthData d = synthesize(cfg, 4);
    for (std::size_t i = 0; i < cfg.n_zones; ++i)
      for (std::size_t t = 0; t < cfg.n_hours; ++t)
        CHECK(d.rates(i, t, 1) / d.rates(i, t, 0) == doctest::Approx(0.3 / 0.7).epsilon(1e-12));
  }
  SUBCASE("same seed is bit-identical") {
    const SynthData a = synthesize(cfg, 77);
    const SynthData b = synthesize(cfg, 77);
    CHECK(a.demand == b.demand);
    CHECK(a.rates == b.rates);
    CHECK_FALSE(synthesize(cfg, 78).demand == a.demand);
    a.zones.validate();
    CHECK(a.zones.size() == 6);
  }
  SUBCASE("cross-mode correlation grows with coupling") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      std::vector<double> corr;
      for (double rho : {0.0, 0.5, 1.0}) {
        cfg.coupling = rho;
        const SynthData d = synthesize(cfg, seed);
        std::vector<double> a(cfg.n_hours, 0.0), b(cfg.n_hours, 0.0);
        for (std::size_t i = 0; i < cfg.n_zones; ++i)
          for (std::size_t t = 0; t < cfg.n_hours; ++t) {
            a[t] += d.demand(i, t, 0);
            b[t] += d.demand(i, t, 1);
          }
        corr.push_back(pearson(a, b));
      }
      CHECK(corr[0] < corr[1]);
      CHECK(corr[1] < corr[2]);
    }
  }
}
