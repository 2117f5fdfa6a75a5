// Unoptimized reference: enumerate every simplex, sort the filtration,
// reduce the full boundary matrix column by column.

#include <algorithm>
#include <map>
#include <vector>

#include "topo/error.hpp"
#include "topo/persistence.hpp"

namespace topo {

namespace {

struct Simplex {
  double value;
  std::vector<std::size_t> vertices;  // ascending

  int dim() const { return static_cast<int>(vertices.size()) - 1; }
};

void enumerate(const DistanceMatrix& dm, std::size_t size, std::size_t start,
               std::vector<std::size_t>& current, std::vector<Simplex>& out) {
  if (current.size() == size) {
    double value = 0.0;
    for (std::size_t a = 0; a < current.size(); ++a) {
      for (std::size_t b = a + 1; b < current.size(); ++b) {
        value = std::max(value, dm(current[a], current[b]));
      }
    }
    out.push_back({value, current});
    return;
  }
  for (std::size_t v = start; v < dm.size(); ++v) {
    current.push_back(v);
    enumerate(dm, size, v + 1, current, out);
    current.pop_back();
  }
}

}  // namespace

std::vector<PersistenceDiagram> vr_persistence_oracle(const DistanceMatrix& dm, int max_degree) {
  if (dm.size() > kOracleMaxPoints) {
    throw ParameterError("oracle supports at most " + std::to_string(kOracleMaxPoints) +
                         " points, got " + std::to_string(dm.size()));
  }
  if (max_degree < 0 || max_degree > 2) throw ParameterError("oracle max_degree must be 0..2");

  std::vector<Simplex> simplices;
  std::vector<std::size_t> scratch;
  for (std::size_t size = 1; size <= static_cast<std::size_t>(max_degree) + 2; ++size) {
    enumerate(dm, size, 0, scratch, simplices);
  }
  std::sort(simplices.begin(), simplices.end(), [](const Simplex& a, const Simplex& b) {
    if (a.value != b.value) return a.value < b.value;
    if (a.dim() != b.dim()) return a.dim() < b.dim();
    return a.vertices < b.vertices;
  });

  std::map<std::vector<std::size_t>, std::size_t> index_of;
  for (std::size_t i = 0; i < simplices.size(); ++i) index_of[simplices[i].vertices] = i;

  // Columns hold sorted row indices of the boundary.
  std::vector<std::vector<std::size_t>> columns(simplices.size());
  for (std::size_t j = 0; j < simplices.size(); ++j) {
    const auto& verts = simplices[j].vertices;
    if (verts.size() < 2) continue;
    for (std::size_t drop = 0; drop < verts.size(); ++drop) {
      std::vector<std::size_t> face;
      for (std::size_t t = 0; t < verts.size(); ++t) {
        if (t != drop) face.push_back(verts[t]);
      }
      columns[j].push_back(index_of.at(face));
    }
    std::sort(columns[j].begin(), columns[j].end());
  }

  std::vector<PersistenceDiagram> diagrams(static_cast<std::size_t>(max_degree) + 1);
  for (int d = 0; d <= max_degree; ++d) diagrams[d].degree = d;

  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::vector<std::size_t> column_with_low(simplices.size(), kNone);
  std::vector<char> is_low(simplices.size(), 0);
  for (std::size_t j = 0; j < columns.size(); ++j) {
    auto& col = columns[j];
    while (!col.empty() && column_with_low[col.back()] != kNone) {
      const auto& other = columns[column_with_low[col.back()]];
      std::vector<std::size_t> sum;
      std::set_symmetric_difference(col.begin(), col.end(), other.begin(), other.end(),
                                    std::back_inserter(sum));
      col.swap(sum);
    }
    if (col.empty()) continue;
    const std::size_t low = col.back();
    column_with_low[low] = j;
    is_low[low] = 1;
    const int degree = simplices[low].dim();
    if (degree > max_degree) continue;
    const PersistencePair pair{simplices[low].value, simplices[j].value};
    if (degree == 0 || pair.death > pair.birth) diagrams[degree].pairs.push_back(pair);
  }
  // Positive simplices that are never killed are essential.
  for (std::size_t j = 0; j < simplices.size(); ++j) {
    const int degree = simplices[j].dim();
    if (degree > max_degree) continue;
    if (columns[j].empty() && !is_low[j]) ++diagrams[degree].essential_count;
  }
  for (auto& d : diagrams) std::sort(d.pairs.begin(), d.pairs.end());
  return diagrams;
}

}  // namespace topo
