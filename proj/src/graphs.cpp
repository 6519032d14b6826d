#include "mgc/graphs.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numbers>
#include <set>
#include <unordered_map>

#include "json.hpp"
#include "mgc/errors.hpp"
#include "mgc/io.hpp"

namespace mgc {

using nlohmann::json;

std::vector<std::string> ZoneTable::ids() const {
  std::vector<std::string> out;
  out.reserve(zones.size());
  for (const auto& z : zones) out.push_back(z.id);
  return out;
}

std::optional<std::size_t> ZoneTable::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < zones.size(); ++i)
    if (zones[i].id == id) return i;
  return std::nullopt;
}

void ZoneTable::validate() const {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < zones.size(); ++i) {
    const Zone& z = zones[i];
    if (!index.emplace(z.id, i).second) throw ValidationError("duplicate zone id '" + z.id + "'");
    if (!(z.lat >= -90.0 && z.lat <= 90.0) || !(z.lng >= -180.0 && z.lng <= 180.0))
      throw ValidationError("zone '" + z.id + "' has out-of-range centroid");
    if (z.attributes.size() != zones.front().attributes.size())
      throw ValidationError("zone '" + z.id + "' has " + std::to_string(z.attributes.size()) +
                            " functionality attributes, expected " +
                            std::to_string(zones.front().attributes.size()));
  }
  for (const Zone& z : zones) {
    for (const std::string& n : z.neighbors) {
      if (n == z.id) throw ValidationError("zone '" + z.id + "' lists itself as a neighbor");
      auto it = index.find(n);
      if (it == index.end())
        throw ValidationError("zone '" + z.id + "' has unknown neighbor '" + n + "'");
      const auto& back = zones[it->second].neighbors;
      if (std::find(back.begin(), back.end(), z.id) == back.end())
        throw ValidationError("neighbor relation is not symmetric: '" + z.id + "' -> '" + n +
                              "' has no reverse edge");
    }
  }
}

ZoneTable ZoneTable::permuted(const std::vector<std::size_t>& order) const {
  if (order.size() != zones.size()) throw UsageError("permutation length mismatch");
  ZoneTable out;
  out.attribute_names = attribute_names;
  for (std::size_t i : order) out.zones.push_back(zones.at(i));
  return out;
}

ZoneTable ZoneTable::load(const std::filesystem::path& zones_csv,
                          const std::filesystem::path& adjacency_csv) {
  const io::CsvTable zt = io::read_csv(zones_csv);
  if (zt.header.size() < 3 || zt.header[0] != "zone_id" || zt.header[1] != "centroid_lng" ||
      zt.header[2] != "centroid_lat")
    throw ValidationError(zones_csv.string() +
                          ": header must start with zone_id,centroid_lng,centroid_lat");
  ZoneTable table;
  table.attribute_names.assign(zt.header.begin() + 3, zt.header.end());
  for (const auto& row : zt.rows) {
    Zone z;
    z.id = row[0];
    z.lng = io::parse_double(row[1], "centroid_lng");
    z.lat = io::parse_double(row[2], "centroid_lat");
    for (std::size_t c = 3; c < row.size(); ++c)
      z.attributes.push_back(io::parse_double(row[c], zt.header[c]));
    table.zones.push_back(std::move(z));
  }
  const io::CsvTable at = io::read_csv(adjacency_csv);
  const std::size_t ca = at.column("zone_id_a"), cb = at.column("zone_id_b");
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& row : at.rows) {
    const std::string& a = row[ca];
    const std::string& b = row[cb];
    auto ia = table.index_of(a), ib = table.index_of(b);
    if (!ia || !ib)
      throw ValidationError(adjacency_csv.string() + ": edge references unknown zone " +
                            (!ia ? a : b));
    if (a == b) throw ValidationError(adjacency_csv.string() + ": self edge on zone " + a);
    if (!seen.insert(std::minmax(a, b)).second) continue;
    table.zones[*ia].neighbors.push_back(b);
    table.zones[*ib].neighbors.push_back(a);
  }
  table.validate();
  return table;
}

void ZoneTable::save(const std::filesystem::path& zones_csv,
                     const std::filesystem::path& adjacency_csv) const {
  std::string out = "zone_id,centroid_lng,centroid_lat";
  for (const auto& a : attribute_names) out += "," + a;
  out += "\n";
  for (const Zone& z : zones) {
    out += z.id + "," + io::format_double(z.lng) + "," + io::format_double(z.lat);
    for (double v : z.attributes) out += "," + io::format_double(v);
    out += "\n";
  }
  io::write_text(zones_csv, out);
  std::string adj = "zone_id_a,zone_id_b\n";
  for (std::size_t i = 0; i < zones.size(); ++i)
    for (const std::string& n : zones[i].neighbors) {
      auto j = index_of(n);
      if (j && *j > i) adj += zones[i].id + "," + n + "\n";
    }
  io::write_text(adjacency_csv, adj);
}

double haversine_km(double lng1, double lat1, double lng2, double lat2) {
  constexpr double kEarthRadiusKm = 6371.0;
  constexpr double rad = std::numbers::pi / 180.0;
  const double dlat = (lat2 - lat1) * rad;
  const double dlng = (lng2 - lng1) * rad;
  const double s = std::sin(dlat / 2) * std::sin(dlat / 2) +
                   std::cos(lat1 * rad) * std::cos(lat2 * rad) * std::sin(dlng / 2) *
                       std::sin(dlng / 2);
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(s)));
}

Matrix build_neighborhood(const ZoneTable& zones) {
  zones.validate();
  const std::size_t n = zones.size();
  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (const std::string& nb : zones.zones[i].neighbors) a(i, *zones.index_of(nb)) = 1.0;
  return a;
}

Matrix build_distance(const ZoneTable& zones) {
  zones.validate();
  const std::size_t n = zones.size();
  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const Zone& zi = zones.zones[i];
      const Zone& zj = zones.zones[j];
      const double d = haversine_km(zi.lng, zi.lat, zj.lng, zj.lat);
      a(i, j) = 1.0 / std::max(d, kMinDistanceKm);
    }
  return a;
}

Matrix build_functionality(const ZoneTable& zones, double eps) {
  zones.validate();
  const std::size_t n = zones.size();
  if (n > 0 && zones.zones.front().attributes.empty())
    throw ValidationError("functionality graph needs at least one zone attribute");
  const std::size_t k = n == 0 ? 0 : zones.zones.front().attributes.size();
  // Standardize each attribute over zones; drop constant columns.
  std::vector<std::vector<double>> cols;
  for (std::size_t c = 0; c < k; ++c) {
    double mean = 0.0;
    for (const Zone& z : zones.zones) mean += z.attributes[c];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (const Zone& z : zones.zones) var += (z.attributes[c] - mean) * (z.attributes[c] - mean);
    const double sd = std::sqrt(var / static_cast<double>(n));
    if (!(sd > 1e-12 * (1.0 + std::abs(mean)))) continue;
    std::vector<double> col(n);
    for (std::size_t i = 0; i < n; ++i) col[i] = (zones.zones[i].attributes[c] - mean) / sd;
    cols.push_back(std::move(col));
  }
  Matrix points(n, cols.size());
  for (std::size_t c = 0; c < cols.size(); ++c)
    for (std::size_t i = 0; i < n; ++i) points(i, c) = cols[c][i];
  return inverse_distance_weights(points, eps);
}

Matrix inverse_distance_weights(const Matrix& points, double eps) {
  const std::size_t n = points.rows();
  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      double d2 = 0.0;
      for (std::size_t c = 0; c < points.cols(); ++c)
        d2 += (points(i, c) - points(j, c)) * (points(i, c) - points(j, c));
      a(i, j) = 1.0 / std::max(std::sqrt(d2), eps);
    }
  return a;
}

Matrix build_mobility(const Matrix& series) {
  const std::size_t n = series.rows(), len = series.cols();
  if (len < 2)
    throw ValidationError("mobility graph needs a training window of at least 2 hours, got " +
                          std::to_string(len));
  // Centered series and their norms.
  Matrix centered(n, len);
  std::vector<double> norm(n, 0.0);
  std::vector<bool> constant(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0.0;
    for (std::size_t t = 0; t < len; ++t) mean += series(i, t);
    mean /= static_cast<double>(len);
    double ss = 0.0;
    for (std::size_t t = 0; t < len; ++t) {
      centered(i, t) = series(i, t) - mean;
      ss += centered(i, t) * centered(i, t);
    }
    norm[i] = std::sqrt(ss);
    constant[i] = !(norm[i] > 1e-12 * std::sqrt(static_cast<double>(len)) * (1.0 + std::abs(mean)));
  }
  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      if (constant[i] || constant[j]) continue;
      double cov = 0.0;
      for (std::size_t t = 0; t < len; ++t) cov += centered(i, t) * centered(j, t);
      double r = cov / (norm[i] * norm[j]);
      r = std::clamp(r, 0.0, 1.0);
      a(i, j) = r;
      a(j, i) = r;
    }
  return a;
}

Matrix build_mobility(const DemandTensor& demand, std::size_t mode, std::size_t begin,
                      std::size_t end) {
  if (mode >= demand.n_modes()) throw ValidationError("mobility graph: mode index out of range");
  if (end > demand.n_hours() || begin > end)
    throw ValidationError("mobility graph: window outside the demand tensor");
  Matrix series(demand.n_zones(), end - begin);
  for (std::size_t i = 0; i < demand.n_zones(); ++i) {
    auto s = demand.series(i, mode);
    for (std::size_t t = begin; t < end; ++t) series(i, t - begin) = s[t];
  }
  return build_mobility(series);
}

Matrix renormalize(const Matrix& a) {
  if (a.rows() != a.cols()) throw ShapeError("renormalize: adjacency " + shape_string(a) + " is not square");
  const std::size_t n = a.rows();
  for (double v : a.span())
    if (v < 0.0 || !std::isfinite(v))
      throw ValidationError("renormalize: adjacency has a negative or non-finite entry");
  std::vector<double> inv_sqrt_deg(n);
  for (std::size_t i = 0; i < n; ++i) {
    double d = 1.0;
    for (std::size_t j = 0; j < n; ++j) d += a(i, j);
    inv_sqrt_deg[i] = 1.0 / std::sqrt(d);
  }
  Matrix out(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out(i, j) = inv_sqrt_deg[i] * (a(i, j) + (i == j ? 1.0 : 0.0)) * inv_sqrt_deg[j];
  return out;
}

std::array<const Matrix*, 4> GraphSet::normalized_for(std::size_t mode) const {
  return {&shared_normalized[0], &shared_normalized[1], &shared_normalized[2],
          &mobility_normalized.at(mode)};
}

void GraphSet::save(const std::filesystem::path& dir) const {
  io::TensorStore store;
  for (std::size_t g = 0; g < 3; ++g) {
    store.put(std::string("raw_") + kGraphNames[g], shared[g]);
    store.put(std::string("norm_") + kGraphNames[g], shared_normalized[g]);
  }
  for (std::size_t m = 0; m < mobility.size(); ++m) {
    store.put("raw_mobility_" + std::to_string(m), mobility[m]);
    store.put("norm_mobility_" + std::to_string(m), mobility_normalized[m]);
  }
  json meta = {{"kind", "graph_set"}, {"zones", zone_ids}, {"modes", modes}};
  store.save(dir, meta.dump());
}

GraphSet GraphSet::load(const std::filesystem::path& dir) {
  std::string meta_text;
  io::TensorStore store = io::TensorStore::load(dir, &meta_text);
  json meta = json::parse(meta_text);
  GraphSet gs;
  gs.zone_ids = meta.at("zones").get<std::vector<std::string>>();
  gs.modes = meta.at("modes").get<std::vector<std::string>>();
  for (std::size_t g = 0; g < 3; ++g) {
    gs.shared[g] = store.get(std::string("raw_") + kGraphNames[g]);
    gs.shared_normalized[g] = store.get(std::string("norm_") + kGraphNames[g]);
  }
  for (std::size_t m = 0; m < gs.modes.size(); ++m) {
    gs.mobility.push_back(store.get("raw_mobility_" + std::to_string(m)));
    gs.mobility_normalized.push_back(store.get("norm_mobility_" + std::to_string(m)));
  }
  for (const Matrix* g : {&gs.shared_normalized[0], &gs.shared_normalized[1]})
    if (g->rows() != gs.zone_ids.size()) throw LoadError("graph size does not match zone list");
  return gs;
}

GraphSet build_graph_set(const ZoneTable& zones, const DemandTensor& demand,
                         std::size_t train_end) {
  if (zones.ids() != demand.zones())
    throw ValidationError("zone table and demand tensor list zones in different orders");
  GraphSet gs;
  gs.zone_ids = zones.ids();
  gs.modes = demand.modes();
  gs.mobility.resize(demand.n_modes());
  gs.mobility_normalized.resize(demand.n_modes());
  const long long tasks = static_cast<long long>(3 + demand.n_modes());
  std::exception_ptr failure;
  // Each task writes its own slot; builders are pure.
#pragma omp parallel for schedule(dynamic)
  for (long long task = 0; task < tasks; ++task) {
    try {
    switch (task) {
      case 0: gs.shared[0] = build_neighborhood(zones); break;
      case 1: gs.shared[1] = build_distance(zones); break;
      case 2: gs.shared[2] = build_functionality(zones); break;
      default: {
        const auto m = static_cast<std::size_t>(task - 3);
        gs.mobility[m] = build_mobility(demand, m, 0, train_end);
      }
    }
    } catch (...) {
#pragma omp critical(mgc_graph_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  for (std::size_t g = 0; g < 3; ++g) gs.shared_normalized[g] = renormalize(gs.shared[g]);
  for (std::size_t m = 0; m < gs.mobility.size(); ++m)
    gs.mobility_normalized[m] = renormalize(gs.mobility[m]);
  return gs;
}

}  // namespace mgc
