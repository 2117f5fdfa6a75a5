#include "topo/knn.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "topo/binary_io.hpp"
#include "topo/error.hpp"
#include "topo/parallel.hpp"

namespace topo {

namespace {

constexpr std::string_view kCacheMagic = "TNB1";

inline float squared_l2_inline(const float* a, const float* b, std::size_t n) {
  float acc[8] = {0.f, 0.f, 0.f, 0.f, 0.f, 0.f, 0.f, 0.f};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t l = 0; l < 8; ++l) {
      const float d = a[i + l] - b[i + l];
      acc[l] += d * d;
    }
  }
  for (std::size_t l = 0; i < n; ++i, ++l) {
    const float d = a[i] - b[i];
    acc[l] += d * d;
  }
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

using Candidate = std::pair<float, std::uint64_t>;

// Max-heap on (distance, index): the top is the worst candidate kept so far.
struct BoundedHeap {
  std::vector<Candidate> items;
  std::size_t capacity = 0;

  void offer(float dist, std::uint64_t index) {
    if (items.size() < capacity) {
      items.emplace_back(dist, index);
      std::push_heap(items.begin(), items.end());
      return;
    }
    // Rows arrive in ascending index order, so an equal distance never
    // displaces the current worst.
    if (dist < items.front().first) {
      std::pop_heap(items.begin(), items.end());
      items.back() = {dist, index};
      std::push_heap(items.begin(), items.end());
    }
  }
};

}  // namespace

float squared_l2(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw SchemaError("squared_l2: dimension mismatch");
  return squared_l2_inline(a.data(), b.data(), a.size());
}

NeighborCache::NeighborCache(std::size_t query_count, std::uint32_t k)
    : query_count_(query_count),
      k_(k),
      indices_(query_count * k),
      distances_(query_count * k) {}

NeighborCache exact_knn(const Datastore& ds, const QueryMatrix& queries, std::uint32_t k,
                        const KnnOptions& opts) {
  if (queries.dim != ds.dim()) {
    throw SchemaError("query dimension " + std::to_string(queries.dim) +
                      " does not match store dimension " + std::to_string(ds.dim()));
  }
  if (k == 0 || k > ds.count()) {
    throw ParameterError("k = " + std::to_string(k) + " must be in [1, " +
                         std::to_string(ds.count()) + "]");
  }
  const std::size_t nq = queries.count();
  const std::size_t dim = ds.dim();
  const std::size_t chunk = std::max<std::size_t>(1, opts.store_chunk);
  NeighborCache cache(nq, k);
  const float* store = ds.vectors().data();

  parallel_for(nq, opts.threads, std::max<std::size_t>(1, opts.query_block),
               [&](std::size_t q_begin, std::size_t q_end) {
                 std::vector<BoundedHeap> heaps(q_end - q_begin);
                 for (auto& h : heaps) {
                   h.capacity = k;
                   h.items.reserve(k);
                 }
                 for (std::size_t r0 = 0; r0 < ds.count(); r0 += chunk) {
                   const std::size_t r1 = std::min(ds.count(), r0 + chunk);
                   for (std::size_t q = q_begin; q < q_end; ++q) {
                     const float* qv = queries.data.data() + q * dim;
                     auto& heap = heaps[q - q_begin];
                     for (std::size_t r = r0; r < r1; ++r) {
                       heap.offer(squared_l2_inline(qv, store + r * dim, dim), r);
                     }
                   }
                 }
                 for (std::size_t q = q_begin; q < q_end; ++q) {
                   auto& items = heaps[q - q_begin].items;
                   std::sort_heap(items.begin(), items.end());
                   auto idx = cache.mutable_indices(q);
                   auto dst = cache.mutable_distances(q);
                   for (std::size_t j = 0; j < k; ++j) {
                     dst[j] = items[j].first;
                     idx[j] = items[j].second;
                   }
                 }
               });
  return cache;
}

void save_cache(const NeighborCache& cache, const std::filesystem::path& path) {
  io::BinaryWriter w(path);
  w.magic(kCacheMagic);
  w.u32(kCacheVersion);
  w.u64(cache.query_count());
  w.u32(cache.k());
  for (std::size_t q = 0; q < cache.query_count(); ++q) {
    w.array(cache.indices(q));
    w.array(cache.distances(q));
  }
  w.close();
}

NeighborCache load_cache(const std::filesystem::path& path) {
  io::BinaryReader r(path);
  r.expect_magic(kCacheMagic);
  const auto version = r.u32();
  if (version != kCacheVersion) {
    throw FormatError("unsupported cache version " + std::to_string(version) + " in " +
                      path.string());
  }
  const auto nq = r.u64();
  const auto k = r.u32();
  const std::uint64_t row_bytes = static_cast<std::uint64_t>(k) * (8 + 4);
  if (nq * row_bytes != r.remaining()) {
    throw FormatError("cache header declares " + std::to_string(nq) + " queries x k=" +
                      std::to_string(k) + " but payload holds " + std::to_string(r.remaining()) +
                      " bytes");
  }
  NeighborCache cache(nq, k);
  for (std::size_t q = 0; q < nq; ++q) {
    r.array(cache.mutable_indices(q));
    r.array(cache.mutable_distances(q));
    const auto d = cache.distances(q);
    if (!std::is_sorted(d.begin(), d.end())) {
      throw FormatError("cache row " + std::to_string(q) + " has unsorted distances");
    }
  }
  return cache;
}

CenterChoice resolve_center(std::span<const std::uint64_t> cache_indices,
                            std::span<const float> cache_distances, double eps) {
  CenterChoice choice;
  if (cache_indices.empty() || cache_distances.empty()) return choice;
  const double nearest = std::sqrt(static_cast<double>(cache_distances[0]));
  if (nearest <= eps) {
    choice.matched = true;
    choice.store_index = cache_indices[0];
  }
  return choice;
}

Neighborhood neighborhood(const Datastore& ds, const NeighborCache& cache,
                          std::span<const float> query, std::size_t query_id, std::size_t n,
                          double eps) {
  if (n == 0) throw ParameterError("neighborhood size must be >= 1");
  if (query_id >= cache.query_count()) {
    throw ParameterError("query id " + std::to_string(query_id) + " out of range");
  }
  if (query.size() != ds.dim()) throw SchemaError("query dimension mismatch");
  const auto idx = cache.indices(query_id);
  const auto dist = cache.distances(query_id);
  const auto center = resolve_center(idx, dist, eps);
  const std::size_t from_cache = center.matched ? n : n - 1;
  if (from_cache > cache.k()) {
    throw CacheDepthError("neighborhood of size " + std::to_string(n) + " needs " +
                          std::to_string(from_cache) + " cached neighbors but the cache holds " +
                          std::to_string(cache.k()) + "; recompute the cache with larger k");
  }
  Neighborhood nb;
  nb.dim = ds.dim();
  nb.members.reserve(n * nb.dim);
  nb.member_indices.reserve(n);
  if (center.matched) {
    const auto c = ds.row(center.store_index);
    nb.center.assign(c.begin(), c.end());
  } else {
    nb.center.assign(query.begin(), query.end());
    nb.members.insert(nb.members.end(), query.begin(), query.end());
    nb.member_indices.push_back(kOutOfStore);
  }
  for (std::size_t j = 0; j < from_cache; ++j) {
    if (idx[j] >= ds.count()) {
      throw SchemaError("cache index " + std::to_string(idx[j]) + " exceeds store size");
    }
    const auto row = ds.row(idx[j]);
    nb.members.insert(nb.members.end(), row.begin(), row.end());
    nb.member_indices.push_back(idx[j]);
  }
  return nb;
}

}  // namespace topo
