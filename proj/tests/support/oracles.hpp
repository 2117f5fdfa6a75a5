#pragma once

// Slow reference implementations used only by the tests. None of these share
// code with the library beyond plain data types.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "topo/knn.hpp"
#include "topo/persistence.hpp"
#include "topo/stats.hpp"

namespace oracle {

// Unit vectors, uniformly random on the sphere.
inline std::vector<float> random_unit_cloud(std::size_t n, std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<float> out(n * dim);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v(dim);
    double norm = 0.0;
    for (auto& x : v) {
      x = g(rng);
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (std::size_t c = 0; c < dim; ++c) out[i * dim + c] = static_cast<float>(v[c] / norm);
  }
  return out;
}

inline topo::DistanceMatrix random_cosine_matrix(std::size_t n, std::size_t dim, std::mt19937_64& rng) {
  const auto cloud = random_unit_cloud(n, dim, rng);
  return topo::cosine_distance_matrix(cloud, dim);
}

// Prim's algorithm, O(n^2). Returns the MST edge weights in ascending order.
inline std::vector<double> mst_weights(const topo::DistanceMatrix& dm) {
  const std::size_t n = dm.size();
  std::vector<double> out;
  if (n == 0) return out;
  std::vector<char> in_tree(n, 0);
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  best[0] = 0.0;
  for (std::size_t it = 0; it < n; ++it) {
    std::size_t pick = n;
    for (std::size_t v = 0; v < n; ++v) {
      if (!in_tree[v] && (pick == n || best[v] < best[pick])) pick = v;
    }
    in_tree[pick] = 1;
    if (it > 0) out.push_back(best[pick]);
    for (std::size_t v = 0; v < n; ++v) {
      if (!in_tree[v]) best[v] = std::min(best[v], dm(pick, v));
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Full scan + full sort by (distance, index).
inline topo::NeighborCache brute_knn(const topo::Datastore& ds, const topo::QueryMatrix& q,
                                     std::uint32_t k) {
  topo::NeighborCache cache(q.count(), k);
  std::vector<std::pair<float, std::uint64_t>> all(ds.count());
  for (std::size_t i = 0; i < q.count(); ++i) {
    for (std::size_t r = 0; r < ds.count(); ++r) all[r] = {topo::squared_l2(q.row(i), ds.row(r)), r};
    std::sort(all.begin(), all.end());
    auto idx = cache.mutable_indices(i);
    auto dist = cache.mutable_distances(i);
    for (std::uint32_t j = 0; j < k; ++j) {
      idx[j] = all[j].second;
      dist[j] = all[j].first;
    }
  }
  return cache;
}

// Pair-by-pair counting.
inline topo::KendallCounts kendall_pairs(std::span<const double> x, std::span<const double> y) {
  topo::KendallCounts c;
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      ++c.n0;
      const bool tx = x[i] == x[j], ty = y[i] == y[j];
      if (tx) ++c.ties_x;
      if (ty) ++c.ties_y;
      if (tx && ty) ++c.ties_xy;
      if (tx || ty) continue;
      if ((x[i] < x[j]) == (y[i] < y[j])) {
        ++c.concordant;
      } else {
        ++c.discordant;
      }
    }
  }
  return c;
}

inline double tau_b_from_counts(const topo::KendallCounts& c) {
  const double s = static_cast<double>(c.concordant - c.discordant);
  return std::clamp(s / std::sqrt(static_cast<double>(c.n0 - c.ties_x) *
                                  static_cast<double>(c.n0 - c.ties_y)),
                    -1.0, 1.0);
}

// Hungarian algorithm (potentials, O(n^3)) on a square cost matrix.
inline double min_assignment(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size();
  if (n == 0) return 0.0;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  double total = 0.0;
  for (std::size_t j = 1; j <= n; ++j) total += cost[p[j] - 1][j - 1];
  return total;
}

// W1 to the empty diagram as an assignment problem: every point may go to
// any diagonal point (the orthogonal projections of all points), Euclidean
// ground metric.
inline double w1_to_empty(const topo::PersistenceDiagram& d) {
  const std::size_t m = d.pairs.size();
  std::vector<std::pair<double, double>> diag;
  for (const auto& p : d.pairs) {
    const double mid = 0.5 * (p.birth + p.death);
    diag.emplace_back(mid, mid);
  }
  std::vector<std::vector<double>> cost(m, std::vector<double>(m));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      cost[i][j] = std::hypot(d.pairs[i].birth - diag[j].first, d.pairs[i].death - diag[j].second);
    }
  }
  return min_assignment(cost);
}

// Bottleneck distance with the L-infinity ground metric: threshold search
// over candidate values with Kuhn matching on the diagonal-augmented sets.
inline double bottleneck(const std::vector<topo::PersistencePair>& a,
                         const std::vector<topo::PersistencePair>& b) {
  const std::size_t na = a.size(), nb = b.size(), n = na + nb;
  if (n == 0) return 0.0;
  // Rows: a then diagonal slots for b. Columns: b then diagonal slots for a.
  auto cost = [&](std::size_t i, std::size_t j) -> double {
    const bool ri = i < na, cj = j < nb;
    if (ri && cj) {
      return std::max(std::abs(a[i].birth - b[j].birth), std::abs(a[i].death - b[j].death));
    }
    if (ri) return (j - nb == i) ? (a[i].death - a[i].birth) / 2 : std::numeric_limits<double>::infinity();
    if (cj) return (i - na == j) ? (b[j].death - b[j].birth) / 2 : std::numeric_limits<double>::infinity();
    return 0.0;
  };
  std::vector<double> cands{0.0};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double c = cost(i, j);
      if (std::isfinite(c)) cands.push_back(c);
    }
  }
  std::sort(cands.begin(), cands.end());
  cands.erase(std::unique(cands.begin(), cands.end()), cands.end());
  auto feasible = [&](double t) {
    std::vector<std::ptrdiff_t> match(n, -1);
    std::vector<char> seen;
    std::function<bool(std::size_t)> augment = [&](std::size_t i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (seen[j] || cost(i, j) > t) continue;
        seen[j] = 1;
        if (match[j] < 0 || augment(static_cast<std::size_t>(match[j]))) {
          match[j] = static_cast<std::ptrdiff_t>(i);
          return true;
        }
      }
      return false;
    };
    for (std::size_t i = 0; i < n; ++i) {
      seen.assign(n, 0);
      if (!augment(i)) return false;
    }
    return true;
  };
  std::size_t lo = 0, hi = cands.size() - 1;
  while (lo < hi) {
    const std::size_t mid = (lo + hi) / 2;
    if (feasible(cands[mid])) {
      hi = mid;
    } else {
      lo = mid + 1;
    }
  }
  return cands[lo];
}

// Finite pairs as a sorted multiset, ignoring the diagram's degree field.
inline std::vector<topo::PersistencePair> sorted_pairs(const topo::PersistenceDiagram& d) {
  auto p = d.pairs;
  std::sort(p.begin(), p.end());
  return p;
}

}  // namespace oracle
