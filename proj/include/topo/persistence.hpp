#pragma once

// Vietoris-Rips persistent homology in degrees 0 and 1 over F2.
//
// Simplices are totally ordered by (filtration value, dimension,
// lexicographic vertex list). Diagrams hold finite pairs only; classes that
// never die are counted in `essential_count`. Zero-length H0 pairs are kept
// (they mirror zero-weight MST edges), zero-length pairs in higher degrees
// are dropped.

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "topo/knn.hpp"

namespace topo {

/// Symmetric n x n float64 matrix with a zero diagonal.
class DistanceMatrix {
 public:
  DistanceMatrix() = default;
  /// Validates symmetry, zero diagonal, non-negative finite entries;
  /// throws SchemaError otherwise.
  DistanceMatrix(std::size_t n, std::vector<double> entries);

  std::size_t size() const { return n_; }
  double operator()(std::size_t i, std::size_t j) const { return entries_[i * n_ + j]; }
  const double* row(std::size_t i) const { return entries_.data() + i * n_; }
  std::span<const double> entries() const { return entries_; }

 private:
  std::size_t n_ = 0;
  std::vector<double> entries_;
};

struct PersistencePair {
  double birth = 0.0;
  double death = 0.0;

  double persistence() const { return death - birth; }
  auto operator<=>(const PersistencePair&) const = default;
};

struct PersistenceDiagram {
  int degree = 0;
  std::vector<PersistencePair> pairs;  // sorted ascending by (birth, death)
  std::size_t essential_count = 0;

  bool operator==(const PersistenceDiagram&) const = default;
};

/// d(i, j) = 1 - <x_i, x_j> clamped to [0, 2]. Members must be unit norm
/// within 1e-5 (NormalizationError otherwise).
DistanceMatrix cosine_distance_matrix(std::span<const float> members, std::size_t dim);
DistanceMatrix cosine_distance_matrix(const Neighborhood& nb);

/// Finite pairs are (0, w) for every edge weight w of a minimum spanning
/// tree; one essential class.
PersistenceDiagram vr_persistence_h0(const DistanceMatrix& dm);

/// Degree-1 pairs. Reduces the coboundary matrix (the anti-transposed
/// boundary matrix, which yields the same pairs) with clearing of MST edges
/// and the apparent-pair shortcut.
PersistenceDiagram vr_persistence_h1(const DistanceMatrix& dm);

/// Both degrees off one edge sort.
std::pair<PersistenceDiagram, PersistenceDiagram> vr_persistence_h0_h1(const DistanceMatrix& dm);

inline constexpr std::size_t kOracleMaxPoints = 16;

/// Full enumeration of simplices up to dimension max_degree + 1 and the
/// textbook left-to-right column reduction of the boundary matrix. Slow by
/// construction; intended for checking the kernels above.
std::vector<PersistenceDiagram> vr_persistence_oracle(const DistanceMatrix& dm, int max_degree);

/// One `degree birth death` record per line.
std::string dump_diagram(const PersistenceDiagram& diagram);

}  // namespace topo
