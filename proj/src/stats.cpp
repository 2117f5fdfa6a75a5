#include "topo/stats.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "topo/error.hpp"
#include "topo/parallel.hpp"

namespace topo {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Counts inversions (i < j with v[i] > v[j]) while sorting v ascending.
std::int64_t merge_count(std::vector<double>& v, std::vector<double>& buf, std::size_t lo,
                         std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::int64_t swaps = merge_count(v, buf, lo, mid) + merge_count(v, buf, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      swaps += static_cast<std::int64_t>(mid - i);
      buf[k++] = v[j++];
    } else {
      buf[k++] = v[i++];
    }
  }
  while (i < mid) buf[k++] = v[i++];
  while (j < hi) buf[k++] = v[j++];
  std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo),
            buf.begin() + static_cast<std::ptrdiff_t>(hi), v.begin() + static_cast<std::ptrdiff_t>(lo));
  return swaps;
}

struct TieSums {
  double pairs = 0;  // sum t(t-1)/2
  double v0 = 0;     // sum t(t-1)(t-2)
  double v1 = 0;     // sum t(t-1)(2t+5)
};

TieSums tie_sums(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  TieSums s;
  for (std::size_t i = 0; i < values.size();) {
    std::size_t j = i;
    while (j < values.size() && values[j] == values[i]) ++j;
    const double t = static_cast<double>(j - i);
    s.pairs += t * (t - 1) / 2;
    s.v0 += t * (t - 1) * (t - 2);
    s.v1 += t * (t - 1) * (2 * t + 5);
    i = j;
  }
  return s;
}

std::int64_t tied_pairs_sorted(const std::vector<double>& sorted) {
  std::int64_t total = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const auto t = static_cast<std::int64_t>(j - i);
    total += t * (t - 1) / 2;
    i = j;
  }
  return total;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

}  // namespace

KendallCounts kendall_counts(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw SchemaError("kendall: length mismatch (" + std::to_string(x.size()) + " vs " +
                      std::to_string(y.size()) + ")");
  }
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) {
      throw SchemaError("kendall: non-finite value at index " + std::to_string(i));
    }
  }
  KendallCounts c;
  c.n0 = static_cast<std::int64_t>(n) * static_cast<std::int64_t>(n - (n > 0 ? 1 : 0)) / 2;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (x[a] != x[b]) return x[a] < x[b];
    return y[a] < y[b];
  });

  // Runs of equal x, and within them runs of equal (x, y).
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && x[order[j]] == x[order[i]]) ++j;
    const auto t = static_cast<std::int64_t>(j - i);
    c.ties_x += t * (t - 1) / 2;
    for (std::size_t a = i; a < j;) {
      std::size_t b = a;
      while (b < j && y[order[b]] == y[order[a]]) ++b;
      const auto u = static_cast<std::int64_t>(b - a);
      c.ties_xy += u * (u - 1) / 2;
      a = b;
    }
    i = j;
  }

  std::vector<double> ys(n), buf(n);
  for (std::size_t i = 0; i < n; ++i) ys[i] = y[order[i]];
  c.discordant = merge_count(ys, buf, 0, n);
  c.ties_y = tied_pairs_sorted(ys);
  c.concordant = c.n0 - c.ties_x - c.ties_y + c.ties_xy - c.discordant;
  return c;
}

KendallResult kendall_tau_b(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw SchemaError("kendall: length mismatch (" + std::to_string(x.size()) + " vs " +
                      std::to_string(y.size()) + ")");
  }
  if (x.size() < 2) throw SchemaError("kendall: need at least two observations");
  const auto c = kendall_counts(x, y);
  const bool x_const = c.ties_x == c.n0;
  const bool y_const = c.ties_y == c.n0;
  if (x_const && y_const) throw DegenerateInputError("kendall: both inputs are constant");
  if (x_const || y_const) return {kNaN, kNaN};

  const double s = static_cast<double>(c.concordant - c.discordant);
  const double denom = std::sqrt(static_cast<double>(c.n0 - c.ties_x) *
                                 static_cast<double>(c.n0 - c.ties_y));
  KendallResult r;
  r.tau = std::clamp(s / denom, -1.0, 1.0);

  const double n = static_cast<double>(x.size());
  const auto tx = tie_sums({x.begin(), x.end()});
  const auto ty = tie_sums({y.begin(), y.end()});
  const double m = n * (n - 1);
  double var = (m * (2 * n + 5) - tx.v1 - ty.v1) / 18.0 + (2.0 * tx.pairs * ty.pairs) / m;
  if (n > 2) var += tx.v0 * ty.v0 / (9.0 * m * (n - 2));
  if (var > 0) {
    const double z = s / std::sqrt(var);
    r.p = std::clamp(std::erfc(std::abs(z) / std::sqrt(2.0)), 0.0, 1.0);
  } else {
    r.p = kNaN;
  }
  return r;
}

NumericColumns read_csv_columns(const std::filesystem::path& path,
                                const std::vector<std::string>& columns) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("empty CSV file: " + path.string());
  const auto header = split_csv_line(line);
  std::vector<std::size_t> positions;
  for (const auto& name : columns) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      throw SchemaError("unknown column '" + name + "' in " + path.string());
    }
    positions.push_back(static_cast<std::size_t>(it - header.begin()));
  }
  NumericColumns data;
  for (const auto& name : columns) data[name];
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++row;
    const auto fields = split_csv_line(line);
    for (std::size_t c = 0; c < columns.size(); ++c) {
      const std::string& f = positions[c] < fields.size() ? fields[positions[c]] : std::string{};
      double v = kNaN;
      if (!f.empty() && f != "nan" && f != "NaN") {
        const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
        if (res.ec != std::errc{} || res.ptr != f.data() + f.size()) {
          throw SchemaError("column '" + columns[c] + "' is not numeric (row " +
                            std::to_string(row) + ": '" + f + "')");
        }
      }
      data[columns[c]].push_back(v);
    }
  }
  return data;
}

CorrelationReport correlation_report(const NumericColumns& data,
                                     const std::vector<std::string>& columns, unsigned threads) {
  CorrelationReport report;
  report.column_names = columns;
  const std::size_t k = columns.size();
  report.tau.assign(k * k, kNaN);
  report.p.assign(k * k, kNaN);
  std::vector<const std::vector<double>*> cols;
  for (const auto& name : columns) {
    const auto it = data.find(name);
    if (it == data.end()) throw SchemaError("unknown column '" + name + "'");
    cols.push_back(&it->second);
  }
  std::vector<std::pair<std::size_t, std::size_t>> jobs;
  for (std::size_t i = 0; i < k; ++i) {
    report.tau[i * k + i] = 1.0;
    report.p[i * k + i] = 0.0;
    for (std::size_t j = i + 1; j < k; ++j) jobs.emplace_back(i, j);
  }
  parallel_for(jobs.size(), threads, 1, [&](std::size_t begin, std::size_t end) {
    for (std::size_t t = begin; t < end; ++t) {
      const auto [i, j] = jobs[t];
      const auto& a = *cols[i];
      const auto& b = *cols[j];
      if (a.size() != b.size()) throw SchemaError("columns differ in length");
      std::vector<double> xa, xb;
      for (std::size_t r = 0; r < a.size(); ++r) {
        if (std::isnan(a[r]) || std::isnan(b[r])) continue;
        xa.push_back(a[r]);
        xb.push_back(b[r]);
      }
      KendallResult res{kNaN, kNaN};
      if (xa.size() >= 2) {
        try {
          res = kendall_tau_b(xa, xb);
        } catch (const DegenerateInputError&) {
        }
      }
      report.tau[i * k + j] = report.tau[j * k + i] = res.tau;
      report.p[i * k + j] = report.p[j * k + i] = res.p;
    }
  });
  return report;
}

void write_correlation_csv(const CorrelationReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << "column_a,column_b,tau,p\n";
  auto fmt = [](double v) {
    if (std::isnan(v)) return std::string("nan");
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
  };
  for (std::size_t i = 0; i < report.size(); ++i) {
    for (std::size_t j = 0; j < report.size(); ++j) {
      out << report.column_names[i] << ',' << report.column_names[j] << ','
          << fmt(report.tau_at(i, j)) << ',' << fmt(report.p_at(i, j)) << '\n';
    }
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace topo
