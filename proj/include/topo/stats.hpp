#pragma once

// Kendall rank correlation (tau-b) between local topological measures and
// arbitrary numeric columns, and the pairwise correlation report.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace topo {

/// Pair counts behind tau-b. All pairs: n0 = concordant + discordant +
/// ties_x + ties_y - ties_xy.
struct KendallCounts {
  std::int64_t n0 = 0;
  std::int64_t concordant = 0;
  std::int64_t discordant = 0;
  std::int64_t ties_x = 0;   // pairs tied in x (including joint ties)
  std::int64_t ties_y = 0;   // pairs tied in y (including joint ties)
  std::int64_t ties_xy = 0;  // pairs tied in both

  bool operator==(const KendallCounts&) const = default;
};

/// O(n log n) counting: sort by (x, y), then count inversions of y with a
/// merge sort. Throws SchemaError on length mismatch or non-finite input.
KendallCounts kendall_counts(std::span<const double> x, std::span<const double> y);

struct KendallResult {
  double tau = 0.0;
  double p = 1.0;  // two-sided, normal approximation with tie-adjusted variance
};

/// Throws SchemaError for mismatched lengths or n < 2, DegenerateInputError
/// when both inputs are constant. If exactly one input is constant tau-b is
/// undefined and NaN is returned for tau and p.
KendallResult kendall_tau_b(std::span<const double> x, std::span<const double> y);

struct CorrelationReport {
  std::vector<std::string> column_names;
  std::vector<double> tau;  // row-major k x k
  std::vector<double> p;

  std::size_t size() const { return column_names.size(); }
  double tau_at(std::size_t i, std::size_t j) const { return tau[i * size() + j]; }
  double p_at(std::size_t i, std::size_t j) const { return p[i * size() + j]; }
};

using NumericColumns = std::map<std::string, std::vector<double>>;

/// Reads the named columns of a CSV file as doubles. Empty cells and "nan"
/// become NaN. Unknown or non-numeric columns throw SchemaError.
NumericColumns read_csv_columns(const std::filesystem::path& path,
                                const std::vector<std::string>& columns);

/// Pairwise tau-b over the selected columns; rows with a NaN in either column
/// of a pair are skipped for that pair. The diagonal is exactly 1.
CorrelationReport correlation_report(const NumericColumns& data,
                                     const std::vector<std::string>& columns,
                                     unsigned threads = 0);

/// Long-form CSV: column_a,column_b,tau,p.
void write_correlation_csv(const CorrelationReport& report, const std::filesystem::path& path);

}  // namespace topo
