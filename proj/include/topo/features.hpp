#pragma once

// Local topological descriptors of a token's neighborhood: persistence
// images, Wasserstein norms and multiscale codensity, plus the per-token
// feature table and its file formats ("TFE1" binary, CSV export).

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "topo/knn.hpp"
#include "topo/persistence.hpp"
#include "topo/vecstore.hpp"

namespace topo {

struct PersistenceImageParams {
  double bandwidth = 0.01;  // Gaussian sigma
  double y_lo = 0.0;
  double y_hi = 1.0;
  std::size_t resolution = 100;  // bins on the persistence axis; one birth bin
  std::size_t neighborhood_n = 128;

  double scale() const {
    return 1.0 / (static_cast<double>(neighborhood_n) * static_cast<double>(resolution));
  }
  /// Throws ParameterError when bandwidth <= 0, resolution == 0 or y_lo >= y_hi.
  void validate() const;
};

/// PI_j = scale * sum_i p_i * exp(-(p_i - c_j)^2 / (2 sigma^2)), with p_i the
/// persistence of pair i and c_j the j-th bin center. Births are ignored.
std::vector<double> persistence_image(const PersistenceDiagram& diagram,
                                      const PersistenceImageParams& params = {});

/// Order-1 Wasserstein distance to the empty diagram with Euclidean ground
/// metric: sum of (death - birth) / sqrt(2).
double wasserstein_norm(const PersistenceDiagram& diagram);

/// Euclidean radius of the cardinality-(n+1) neighborhood, read from the
/// cache (square root of the stored squared distance).
double codensity(const NeighborCache& cache, std::size_t query_id, std::size_t n,
                 double eps = kCenterMatchEps);

struct FeatureConfig {
  std::size_t neighborhood_n = 128;
  std::vector<std::size_t> codensity_scales{1, 127, 511};
  PersistenceImageParams image{};
  bool with_pi1 = false;
  double center_eps = kCenterMatchEps;
  unsigned threads = 0;

  /// Deepest cache row any query can touch.
  std::size_t required_depth() const;
};

struct FeatureRow {
  std::size_t query_id = 0;
  std::vector<float> coden;  // aligned with FeatureConfig::codensity_scales
  float w0 = 0.f;
  float w1 = 0.f;
  std::vector<float> pi0;
  std::vector<float> pi1;  // empty unless FeatureConfig::with_pi1

  bool operator==(const FeatureRow&) const = default;
};

struct FeatureTable {
  std::vector<std::size_t> scales;
  std::size_t pi_width = 0;
  bool with_pi1 = false;
  std::vector<FeatureRow> rows;

  std::vector<std::string> column_names() const;  // scalar/vector column names
  bool operator==(const FeatureTable&) const = default;
};

/// Features of a single query, composed from the operations above.
FeatureRow compute_feature_row(const Datastore& ds, const NeighborCache& cache,
                               const QueryMatrix& queries, std::size_t query_id,
                               const FeatureConfig& config);

FeatureTable compute_feature_table(const Datastore& ds, const NeighborCache& cache,
                                   const QueryMatrix& queries, const FeatureConfig& config);

inline constexpr std::uint32_t kFeatureVersion = 1;

void save_features(const FeatureTable& table, const std::filesystem::path& path);
FeatureTable load_features(const std::filesystem::path& path);

/// One row per query: identifiers from `query_meta` (may be empty), scalar
/// columns, pi0_00..pi0_99 (and pi1_*), then every extra metadata column.
void export_features_csv(const FeatureTable& table, const std::vector<TokenMeta>& query_meta,
                         const std::filesystem::path& path);

}  // namespace topo
