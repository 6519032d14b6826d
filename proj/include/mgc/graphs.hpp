#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mgc/demand.hpp"
#include "mgc/matrix.hpp"

namespace mgc {

struct Zone {
  std::string id;
  double lng = 0.0;
  double lat = 0.0;
  std::vector<double> attributes;
  std::vector<std::string> neighbors;
};

struct ZoneTable {
  std::vector<std::string> attribute_names;
  std::vector<Zone> zones;

  std::size_t size() const { return zones.size(); }
  std::vector<std::string> ids() const;
  std::optional<std::size_t> index_of(const std::string& id) const;

  // Unique ids, coordinate ranges, symmetric neighbor relation without self
  // loops, equal-length attribute vectors. Throws ValidationError.
  void validate() const;

  // Zone i of the result is zone order[i] of this table.
  ZoneTable permuted(const std::vector<std::size_t>& order) const;

  // zones: zone_id,centroid_lng,centroid_lat,<attr...>; adjacency:
  // zone_id_a,zone_id_b with one undirected edge per row.
  static ZoneTable load(const std::filesystem::path& zones_csv,
                        const std::filesystem::path& adjacency_csv);
  void save(const std::filesystem::path& zones_csv,
            const std::filesystem::path& adjacency_csv) const;
};

double haversine_km(double lng1, double lat1, double lng2, double lat2);

inline constexpr double kMinDistanceKm = 0.1;
inline constexpr double kMinFunctionalityDistance = 1e-3;

// 1 where zones share a boundary, else 0.
Matrix build_neighborhood(const ZoneTable& zones);
// 1 / max(haversine km, 0.1) off the diagonal.
Matrix build_distance(const ZoneTable& zones);
// 1 / max(||s_i - s_j||, eps) over column-standardized attributes; constant
// attribute columns are dropped.
Matrix build_functionality(const ZoneTable& zones, double eps = kMinFunctionalityDistance);
// 1 / max(euclidean distance, eps) between rows of `points`, zero diagonal.
Matrix inverse_distance_weights(const Matrix& points, double eps = kMinFunctionalityDistance);
// Pearson correlation of the rows of `series` (zones x hours), negatives
// clipped to 0, zero diagonal, zero rows for constant series.
Matrix build_mobility(const Matrix& series);
// Same over hours [begin, end) of one mode of a demand tensor.
Matrix build_mobility(const DemandTensor& demand, std::size_t mode, std::size_t begin,
                      std::size_t end);

// D^{-1/2} (A + I) D^{-1/2} with D the row sums of A + I.
Matrix renormalize(const Matrix& adjacency);

enum class GraphKind { Neighborhood = 0, Distance = 1, Functionality = 2, Mobility = 3 };
inline constexpr std::array<const char*, 4> kGraphNames = {"neighborhood", "distance",
                                                           "functionality", "mobility"};

struct GraphSet {
  std::vector<std::string> zone_ids;
  std::vector<std::string> modes;
  // Raw adjacency: neighborhood, distance, functionality shared by all modes.
  std::array<Matrix, 3> shared;
  std::vector<Matrix> mobility;  // per mode
  std::array<Matrix, 3> shared_normalized;
  std::vector<Matrix> mobility_normalized;

  std::size_t n_zones() const { return zone_ids.size(); }
  std::size_t n_modes() const { return mobility.size(); }

  // Normalized graphs for `mode` in N, D, F, P order.
  std::array<const Matrix*, 4> normalized_for(std::size_t mode) const;

  void save(const std::filesystem::path& dir) const;
  static GraphSet load(const std::filesystem::path& dir);
};

// Mobility graphs use hours [0, train_end) of the demand tensor only.
GraphSet build_graph_set(const ZoneTable& zones, const DemandTensor& demand,
                         std::size_t train_end);

}  // namespace mgc
