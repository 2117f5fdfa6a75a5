#pragma once

// Exact nearest-neighbor search over a datastore, the center-matching rule,
// neighborhood extraction and the on-disk neighbor cache ("TNB1").

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <vector>

#include "topo/vecstore.hpp"

namespace topo {

inline constexpr std::uint32_t kDefaultCacheDepth = 1024;
inline constexpr std::uint32_t kCacheVersion = 1;
inline constexpr double kCenterMatchEps = 1e-4;

/// Squared Euclidean distance with a fixed 8-lane accumulation order. Every
/// distance in the library goes through this function so results are
/// reproducible bit-for-bit.
float squared_l2(std::span<const float> a, std::span<const float> b);

/// Row-major query matrix (count x dim).
struct QueryMatrix {
  std::span<const float> data;
  std::size_t dim = 0;

  std::size_t count() const { return dim == 0 ? 0 : data.size() / dim; }
  std::span<const float> row(std::size_t i) const { return data.subspan(i * dim, dim); }
};

inline QueryMatrix as_queries(const Datastore& ds) { return {ds.vectors(), ds.dim()}; }

/// Per query, the k nearest store rows sorted by (squared distance, index).
class NeighborCache {
 public:
  NeighborCache() = default;
  NeighborCache(std::size_t query_count, std::uint32_t k);

  std::size_t query_count() const { return query_count_; }
  std::uint32_t k() const { return k_; }

  std::span<const std::uint64_t> indices(std::size_t q) const {
    return {indices_.data() + q * k_, k_};
  }
  std::span<const float> distances(std::size_t q) const {
    return {distances_.data() + q * k_, k_};
  }
  std::span<std::uint64_t> mutable_indices(std::size_t q) { return {indices_.data() + q * k_, k_}; }
  std::span<float> mutable_distances(std::size_t q) { return {distances_.data() + q * k_, k_}; }

  bool operator==(const NeighborCache&) const = default;

 private:
  std::size_t query_count_ = 0;
  std::uint32_t k_ = 0;
  std::vector<std::uint64_t> indices_;
  std::vector<float> distances_;
};

struct KnnOptions {
  unsigned threads = 0;  // 0 = all cores
  std::size_t query_block = 32;
  std::size_t store_chunk = 4096;
};

NeighborCache exact_knn(const Datastore& ds, const QueryMatrix& queries, std::uint32_t k,
                        const KnnOptions& opts = {});

void save_cache(const NeighborCache& cache, const std::filesystem::path& path);
NeighborCache load_cache(const std::filesystem::path& path);

inline constexpr std::uint64_t kOutOfStore = std::numeric_limits<std::uint64_t>::max();

struct CenterChoice {
  bool matched = false;           // true: center is a store row
  std::uint64_t store_index = kOutOfStore;
};

/// A store row within Euclidean distance `eps` of the query becomes the
/// center; the nearest such row wins (index-ascending on equal distance).
CenterChoice resolve_center(std::span<const std::uint64_t> cache_indices,
                            std::span<const float> cache_distances, double eps = kCenterMatchEps);

struct Neighborhood {
  std::vector<float> center;                  // dim floats
  std::size_t dim = 0;
  std::vector<float> members;                 // n x dim, ascending distance from center
  std::vector<std::uint64_t> member_indices;  // kOutOfStore for an out-of-store center

  std::size_t size() const { return member_indices.size(); }
  std::span<const float> member(std::size_t i) const {
    return std::span<const float>(members).subspan(i * dim, dim);
  }
};

/// N_n(v): the center and its n-1 nearest store rows. Throws CacheDepthError
/// when the cache is too shallow.
Neighborhood neighborhood(const Datastore& ds, const NeighborCache& cache,
                          std::span<const float> query, std::size_t query_id, std::size_t n,
                          double eps = kCenterMatchEps);

}  // namespace topo
