#include "topo/persistence.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "topo/error.hpp"

namespace topo {

namespace {

constexpr double kUnitTolerance = 1e-5;

struct Edge {
  double value;
  std::uint32_t u, v;  // u < v
};

bool edge_less(const Edge& a, const Edge& b) {
  if (a.value != b.value) return a.value < b.value;
  if (a.u != b.u) return a.u < b.u;
  return a.v < b.v;
}

std::vector<Edge> sorted_edges(const DistanceMatrix& dm) {
  const auto n = static_cast<std::uint32_t>(dm.size());
  std::vector<Edge> edges;
  edges.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
  for (std::uint32_t u = 0; u < n; ++u) {
    for (std::uint32_t v = u + 1; v < n; ++v) edges.push_back({dm(u, v), u, v});
  }
  std::sort(edges.begin(), edges.end(), edge_less);
  return edges;
}

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n), rank_(n, 0) {
    std::iota(parent_.begin(), parent_.end(), std::uint32_t{0});
  }
  std::uint32_t find(std::uint32_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  bool unite(std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    if (rank_[a] < rank_[b]) std::swap(a, b);
    parent_[b] = a;
    if (rank_[a] == rank_[b]) ++rank_[a];
    return true;
  }

 private:
  std::vector<std::uint32_t> parent_;
  std::vector<std::uint8_t> rank_;
};

// Triangle {i < j < k} packed so that integer order is lexicographic order.
constexpr int kVertexBits = 21;

std::uint64_t pack_triangle(std::uint32_t a, std::uint32_t b, std::uint32_t c) {
  if (a > b) std::swap(a, b);
  if (b > c) std::swap(b, c);
  if (a > b) std::swap(a, b);
  return (static_cast<std::uint64_t>(a) << (2 * kVertexBits)) |
         (static_cast<std::uint64_t>(b) << kVertexBits) | c;
}

struct TriangleKey {
  double value;
  std::uint64_t vertices;

  bool operator<(const TriangleKey& o) const {
    if (value != o.value) return value < o.value;
    return vertices < o.vertices;
  }
  bool operator==(const TriangleKey& o) const {
    return value == o.value && vertices == o.vertices;
  }
};

using Column = std::vector<TriangleKey>;

// Symmetric difference of two sorted columns (addition over F2).
void add_column(Column& target, const Column& source, Column& scratch) {
  scratch.resize(target.size() + source.size());
  auto a = target.begin(), ae = target.end();
  auto b = source.begin(), be = source.end();
  auto o = scratch.begin();
  while (a != ae && b != be) {
    if (*a < *b) {
      *o++ = *a++;
    } else if (*b < *a) {
      *o++ = *b++;
    } else {
      ++a;
      ++b;
    }
  }
  o = std::copy(a, ae, o);
  o = std::copy(b, be, o);
  scratch.resize(static_cast<std::size_t>(o - scratch.begin()));
  target.swap(scratch);
}

void sort_pairs(std::vector<PersistencePair>& pairs) { std::sort(pairs.begin(), pairs.end()); }

}  // namespace

DistanceMatrix::DistanceMatrix(std::size_t n, std::vector<double> entries)
    : n_(n), entries_(std::move(entries)) {
  if (entries_.size() != n_ * n_) {
    throw SchemaError("distance matrix needs " + std::to_string(n_ * n_) + " entries, got " +
                      std::to_string(entries_.size()));
  }
  for (std::size_t i = 0; i < n_; ++i) {
    if ((*this)(i, i) != 0.0) throw SchemaError("distance matrix diagonal must be zero");
    for (std::size_t j = i + 1; j < n_; ++j) {
      const double d = (*this)(i, j);
      if (d != (*this)(j, i)) throw SchemaError("distance matrix must be symmetric");
      if (!(d >= 0.0) || !std::isfinite(d)) {
        throw SchemaError("distance matrix entries must be finite and non-negative");
      }
    }
  }
}

DistanceMatrix cosine_distance_matrix(std::span<const float> members, std::size_t dim) {
  if (dim == 0 || members.size() % dim != 0) throw SchemaError("bad member matrix shape");
  const std::size_t n = members.size() / dim;
  for (std::size_t i = 0; i < n; ++i) {
    double norm2 = 0.0;
    for (std::size_t c = 0; c < dim; ++c) {
      const double x = members[i * dim + c];
      norm2 += x * x;
    }
    if (std::abs(std::sqrt(norm2) - 1.0) > kUnitTolerance) {
      throw NormalizationError("neighborhood member " + std::to_string(i) + " is not unit norm");
    }
  }
  std::vector<double> d(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const float* xi = members.data() + i * dim;
    for (std::size_t j = i + 1; j < n; ++j) {
      const float* xj = members.data() + j * dim;
      double dot = 0.0;
      for (std::size_t c = 0; c < dim; ++c) dot += static_cast<double>(xi[c]) * xj[c];
      const double v = std::clamp(1.0 - dot, 0.0, 2.0);
      d[i * n + j] = v;
      d[j * n + i] = v;
    }
  }
  return DistanceMatrix(n, std::move(d));
}

DistanceMatrix cosine_distance_matrix(const Neighborhood& nb) {
  return cosine_distance_matrix(nb.members, nb.dim);
}

namespace {

// Kruskal over the sorted edges. Returns the degree-0 diagram and marks the
// merging edges, which never carry a degree-1 cocycle (clearing).
PersistenceDiagram h0_from_edges(std::size_t n, const std::vector<Edge>& edges,
                                 std::vector<char>* merging) {
  PersistenceDiagram diagram;
  diagram.degree = 0;
  if (n == 0) return diagram;
  diagram.essential_count = 1;
  if (merging) merging->assign(edges.size(), 0);
  UnionFind uf(n);
  std::size_t merged = 0;
  for (std::size_t r = 0; r < edges.size() && merged + 1 < n; ++r) {
    if (uf.unite(edges[r].u, edges[r].v)) {
      diagram.pairs.push_back({0.0, edges[r].value});
      if (merging) (*merging)[r] = 1;
      ++merged;
    }
  }
  sort_pairs(diagram.pairs);
  return diagram;
}

PersistenceDiagram h1_from_edges(const DistanceMatrix& dm, const std::vector<Edge>& edges,
                                 const std::vector<char>& cleared) {
  PersistenceDiagram diagram;
  diagram.degree = 1;
  const std::size_t n = dm.size();
  if (n < 3) return diagram;
  if (n >= (std::size_t{1} << kVertexBits)) throw ParameterError("too many points");

  std::vector<std::uint32_t> rank(n * n, 0);
  for (std::uint32_t r = 0; r < edges.size(); ++r) {
    rank[edges[r].u * n + edges[r].v] = r;
    rank[edges[r].v * n + edges[r].u] = r;
  }

  auto max_face_rank = [&](std::uint32_t a, std::uint32_t b, std::uint32_t c) {
    return std::max({rank[a * n + b], rank[a * n + c], rank[b * n + c]});
  };
  auto coboundary = [&](const Edge& e, Column& out) {
    out.clear();
    const double* du = dm.row(e.u);
    const double* dv = dm.row(e.v);
    for (std::uint32_t k = 0; k < n; ++k) {
      if (k == e.u || k == e.v) continue;
      out.push_back({std::max({e.value, du[k], dv[k]}), pack_triangle(e.u, e.v, k)});
    }
    std::sort(out.begin(), out.end());
  };

  // pivot triangle -> rank of the edge whose reduced column owns it
  std::unordered_map<std::uint64_t, std::uint32_t> pivot_owner;
  pivot_owner.reserve(edges.size());
  // reduced columns, plus coboundaries of apparent columns once they are
  // first needed
  std::unordered_map<std::uint32_t, Column> reduced;
  Column work, scratch;

  for (std::size_t r = edges.size(); r-- > 0;) {
    if (cleared[r]) continue;
    const Edge& e = edges[r];

    // Smallest coface of e. Cofaces of value e.value come first, and among
    // them packed order is increasing in k, so the first k closing a
    // triangle at e.value is the minimum. If there is none, the minimum has a
    // longer edge and e cannot be its youngest face.
    const double* du = dm.row(e.u);
    const double* dv = dm.row(e.v);
    std::uint32_t best_k = static_cast<std::uint32_t>(n);
    for (std::uint32_t k = 0; k < n; ++k) {
      if (k != e.u && k != e.v && du[k] <= e.value && dv[k] <= e.value) {
        best_k = k;
        break;
      }
    }
    if (best_k < n && max_face_rank(e.u, e.v, best_k) == r) {
      // Apparent pair: e is the youngest face of its oldest coface.
      pivot_owner.emplace(pack_triangle(e.u, e.v, best_k), static_cast<std::uint32_t>(r));
      continue;
    }

    coboundary(e, work);
    while (!work.empty()) {
      const auto it = pivot_owner.find(work.front().vertices);
      if (it == pivot_owner.end()) break;
      const auto owner = it->second;
      auto rc = reduced.find(owner);
      if (rc == reduced.end()) {
        rc = reduced.emplace(owner, Column{}).first;
        coboundary(edges[owner], rc->second);
      }
      add_column(work, rc->second, scratch);
    }
    if (work.empty()) {
      ++diagram.essential_count;
      continue;
    }
    const TriangleKey pivot = work.front();
    pivot_owner.emplace(pivot.vertices, static_cast<std::uint32_t>(r));
    if (pivot.value > e.value) diagram.pairs.push_back({e.value, pivot.value});
    reduced.insert_or_assign(static_cast<std::uint32_t>(r), work);
  }
  sort_pairs(diagram.pairs);
  return diagram;
}

}  // namespace

PersistenceDiagram vr_persistence_h0(const DistanceMatrix& dm) {
  return h0_from_edges(dm.size(), sorted_edges(dm), nullptr);
}

PersistenceDiagram vr_persistence_h1(const DistanceMatrix& dm) {
  return vr_persistence_h0_h1(dm).second;
}

std::pair<PersistenceDiagram, PersistenceDiagram> vr_persistence_h0_h1(const DistanceMatrix& dm) {
  const auto edges = sorted_edges(dm);
  std::vector<char> merging;
  auto h0 = h0_from_edges(dm.size(), edges, &merging);
  auto h1 = h1_from_edges(dm, edges, merging);
  return {std::move(h0), std::move(h1)};
}

std::string dump_diagram(const PersistenceDiagram& diagram) {
  std::ostringstream out;
  out.precision(17);
  for (const auto& p : diagram.pairs) {
    out << diagram.degree << ' ' << p.birth << ' ' << p.death << '\n';
  }
  out << "# essential " << diagram.essential_count << '\n';
  return out.str();
}

}  // namespace topo
