#include "topo/features.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>

#include "topo/binary_io.hpp"
#include "topo/error.hpp"
#include "topo/parallel.hpp"

namespace topo {

namespace {

constexpr std::string_view kFeatureMagic = "TFE1";

std::string format_float(float v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string zero_padded(std::size_t j, std::size_t width) {
  const std::size_t digits = width <= 10 ? 1 : (width <= 100 ? 2 : (width <= 1000 ? 3 : 4));
  std::string s = std::to_string(j);
  return std::string(digits > s.size() ? digits - s.size() : 0, '0') + s;
}

}  // namespace

void PersistenceImageParams::validate() const {
  if (!(bandwidth > 0.0)) throw ParameterError("persistence image bandwidth must be > 0");
  if (resolution == 0) throw ParameterError("persistence image resolution must be >= 1");
  if (!(y_lo < y_hi)) throw ParameterError("persistence image range must satisfy lo < hi");
  if (neighborhood_n == 0) throw ParameterError("neighborhood size must be >= 1");
}

std::vector<double> persistence_image(const PersistenceDiagram& diagram,
                                      const PersistenceImageParams& params) {
  params.validate();
  std::vector<double> image(params.resolution, 0.0);
  const double width = (params.y_hi - params.y_lo) / static_cast<double>(params.resolution);
  const double inv_two_var = 1.0 / (2.0 * params.bandwidth * params.bandwidth);
  const double scale = params.scale();
  for (const auto& pair : diagram.pairs) {
    const double p = pair.persistence();
    if (p == 0.0) continue;
    for (std::size_t j = 0; j < params.resolution; ++j) {
      const double center = params.y_lo + (static_cast<double>(j) + 0.5) * width;
      const double delta = p - center;
      image[j] += scale * p * std::exp(-delta * delta * inv_two_var);
    }
  }
  return image;
}

double wasserstein_norm(const PersistenceDiagram& diagram) {
  double total = 0.0;
  for (const auto& pair : diagram.pairs) total += pair.persistence();
  return total / std::sqrt(2.0);
}

double codensity(const NeighborCache& cache, std::size_t query_id, std::size_t n, double eps) {
  if (n == 0) throw ParameterError("codensity scale must be >= 1");
  if (query_id >= cache.query_count()) {
    throw ParameterError("query id " + std::to_string(query_id) + " out of range");
  }
  const auto idx = cache.indices(query_id);
  const auto dist = cache.distances(query_id);
  const auto center = resolve_center(idx, dist, eps);
  // With a matched center, cache entry 0 is the center itself.
  const std::size_t slot = center.matched ? n : n - 1;
  if (slot >= cache.k()) {
    throw CacheDepthError("codensity at n = " + std::to_string(n) + " needs " +
                          std::to_string(slot + 1) + " cached neighbors but the cache holds " +
                          std::to_string(cache.k()) + "; recompute the cache with larger k");
  }
  return std::sqrt(static_cast<double>(dist[slot]));
}

std::size_t FeatureConfig::required_depth() const {
  std::size_t depth = neighborhood_n;
  for (auto s : codensity_scales) depth = std::max(depth, s + 1);
  return depth;
}

std::vector<std::string> FeatureTable::column_names() const {
  std::vector<std::string> names;
  for (auto s : scales) names.push_back("coden_" + std::to_string(s));
  names.emplace_back("w0");
  names.emplace_back("w1");
  names.emplace_back("pi0");
  if (with_pi1) names.emplace_back("pi1");
  return names;
}

FeatureRow compute_feature_row(const Datastore& ds, const NeighborCache& cache,
                               const QueryMatrix& queries, std::size_t query_id,
                               const FeatureConfig& config) {
  FeatureRow row;
  row.query_id = query_id;
  row.coden.reserve(config.codensity_scales.size());
  for (auto s : config.codensity_scales) {
    row.coden.push_back(static_cast<float>(codensity(cache, query_id, s, config.center_eps)));
  }
  const auto nb = neighborhood(ds, cache, queries.row(query_id), query_id, config.neighborhood_n,
                               config.center_eps);
  const auto dm = cosine_distance_matrix(nb);
  const auto [h0, h1] = vr_persistence_h0_h1(dm);
  row.w0 = static_cast<float>(wasserstein_norm(h0));
  row.w1 = static_cast<float>(wasserstein_norm(h1));
  for (double v : persistence_image(h0, config.image)) row.pi0.push_back(static_cast<float>(v));
  if (config.with_pi1) {
    for (double v : persistence_image(h1, config.image)) row.pi1.push_back(static_cast<float>(v));
  }
  return row;
}

FeatureTable compute_feature_table(const Datastore& ds, const NeighborCache& cache,
                                   const QueryMatrix& queries, const FeatureConfig& config) {
  config.image.validate();
  if (queries.dim != ds.dim()) {
    throw SchemaError("query dimension " + std::to_string(queries.dim) +
                      " does not match store dimension " + std::to_string(ds.dim()));
  }
  if (cache.query_count() != queries.count()) {
    throw SchemaError("cache holds " + std::to_string(cache.query_count()) +
                      " query rows but " + std::to_string(queries.count()) + " queries were given");
  }
  if (cache.k() < config.required_depth()) {
    throw CacheDepthError("features need cache depth >= " +
                          std::to_string(config.required_depth()) + " but the cache holds " +
                          std::to_string(cache.k()) + "; recompute the cache with larger k");
  }
  FeatureTable table;
  table.scales = config.codensity_scales;
  table.pi_width = config.image.resolution;
  table.with_pi1 = config.with_pi1;
  table.rows.resize(queries.count());
  parallel_for(queries.count(), config.threads, 16, [&](std::size_t begin, std::size_t end) {
    for (std::size_t q = begin; q < end; ++q) {
      table.rows[q] = compute_feature_row(ds, cache, queries, q, config);
    }
  });
  return table;
}

void save_features(const FeatureTable& table, const std::filesystem::path& path) {
  io::BinaryWriter w(path);
  w.magic(kFeatureMagic);
  w.u32(kFeatureVersion);
  w.u64(table.rows.size());
  const auto names = table.column_names();
  w.u32(static_cast<std::uint32_t>(names.size()));
  for (const auto& name : names) {
    w.string16(name);
    const bool vector_column = name == "pi0" || name == "pi1";
    w.u32(static_cast<std::uint32_t>(vector_column ? table.pi_width : 1));
  }
  std::vector<float> buffer;
  for (const auto& row : table.rows) {
    buffer.clear();
    buffer.insert(buffer.end(), row.coden.begin(), row.coden.end());
    buffer.push_back(row.w0);
    buffer.push_back(row.w1);
    buffer.insert(buffer.end(), row.pi0.begin(), row.pi0.end());
    if (table.with_pi1) buffer.insert(buffer.end(), row.pi1.begin(), row.pi1.end());
    w.array(std::span<const float>(buffer));
  }
  w.close();
}

FeatureTable load_features(const std::filesystem::path& path) {
  io::BinaryReader r(path);
  r.expect_magic(kFeatureMagic);
  const auto version = r.u32();
  if (version != kFeatureVersion) {
    throw FormatError("unsupported feature file version " + std::to_string(version));
  }
  const auto rows = r.u64();
  const auto ncols = r.u32();
  FeatureTable table;
  std::size_t row_width = 0;
  std::vector<std::pair<std::string, std::uint32_t>> columns;
  for (std::uint32_t c = 0; c < ncols; ++c) {
    auto name = r.string16();
    const auto width = r.u32();
    row_width += width;
    if (name.rfind("coden_", 0) == 0) {
      table.scales.push_back(std::stoul(name.substr(6)));
    } else if (name == "pi0") {
      table.pi_width = width;
    } else if (name == "pi1") {
      table.with_pi1 = true;
    } else if (name != "w0" && name != "w1") {
      throw FormatError("unknown feature column '" + name + "'");
    }
    columns.emplace_back(std::move(name), width);
  }
  if (rows * row_width * sizeof(float) != r.remaining()) {
    throw FormatError("feature file header declares " + std::to_string(rows) +
                      " rows but the payload size does not match");
  }
  table.rows.resize(rows);
  std::vector<float> buffer(row_width);
  for (std::size_t i = 0; i < rows; ++i) {
    r.array(std::span<float>(buffer));
    auto& row = table.rows[i];
    row.query_id = i;
    std::size_t off = 0;
    for (const auto& [name, width] : columns) {
      const auto begin = buffer.begin() + static_cast<std::ptrdiff_t>(off);
      if (name.rfind("coden_", 0) == 0) {
        row.coden.push_back(*begin);
      } else if (name == "w0") {
        row.w0 = *begin;
      } else if (name == "w1") {
        row.w1 = *begin;
      } else if (name == "pi0") {
        row.pi0.assign(begin, begin + width);
      } else if (name == "pi1") {
        row.pi1.assign(begin, begin + width);
      }
      off += width;
    }
  }
  return table;
}

void export_features_csv(const FeatureTable& table, const std::vector<TokenMeta>& query_meta,
                         const std::filesystem::path& path) {
  if (!query_meta.empty() && query_meta.size() != table.rows.size()) {
    throw SchemaError("query metadata has " + std::to_string(query_meta.size()) +
                      " rows but the feature table has " + std::to_string(table.rows.size()));
  }
  std::set<std::string> extra_keys;
  for (const auto& m : query_meta) {
    for (const auto& [k, v] : m.extra_columns) extra_keys.insert(k);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << "query_id,utterance_id,position,token";
  for (auto s : table.scales) out << ",coden_" << s;
  out << ",w0,w1";
  for (std::size_t j = 0; j < table.pi_width; ++j) out << ",pi0_" << zero_padded(j, table.pi_width);
  if (table.with_pi1) {
    for (std::size_t j = 0; j < table.pi_width; ++j) out << ",pi1_" << zero_padded(j, table.pi_width);
  }
  for (const auto& k : extra_keys) out << ',' << csv_escape(k);
  out << '\n';
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    out << row.query_id;
    if (!query_meta.empty()) {
      const auto& m = query_meta[i];
      out << ',' << csv_escape(m.utterance_id) << ',' << m.position << ','
          << csv_escape(m.token_text);
    } else {
      out << ",,,";
    }
    for (float c : row.coden) out << ',' << format_float(c);
    out << ',' << format_float(row.w0) << ',' << format_float(row.w1);
    for (float v : row.pi0) out << ',' << format_float(v);
    if (table.with_pi1) {
      for (float v : row.pi1) out << ',' << format_float(v);
    }
    for (const auto& k : extra_keys) {
      out << ',';
      if (!query_meta.empty()) {
        const auto it = query_meta[i].extra_columns.find(k);
        if (it != query_meta[i].extra_columns.end()) out << format_double(it->second);
      }
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace topo
