#include "topo/vecstore.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <utility>

#include "json.hpp"

#include "topo/binary_io.hpp"
#include "topo/error.hpp"

namespace topo {

namespace {

constexpr std::string_view kStoreMagic = "TDS1";
constexpr double kUnitTolerance = 1e-5;

double l2_norm(std::span<const float> v) {
  double acc = 0.0;
  for (float x : v) acc += static_cast<double>(x) * x;
  return std::sqrt(acc);
}

nlohmann::ordered_json meta_to_json(const TokenMeta& m) {
  nlohmann::ordered_json j;
  j["utterance_id"] = m.utterance_id;
  j["position"] = m.position;
  j["word_index"] = m.word_index;
  j["subtoken_index"] = m.subtoken_index;
  j["token"] = m.token_text;
  if (m.gold_tag) j["tag"] = std::string(tag_name(*m.gold_tag));
  if (m.padding) j["padding"] = true;
  if (!m.extra_columns.empty()) {
    nlohmann::ordered_json extra = nlohmann::ordered_json::object();
    for (const auto& [k, v] : m.extra_columns) {
      if (std::isfinite(v)) {
        extra[k] = v;
      } else {
        extra[k] = nullptr;
      }
    }
    j["extra"] = std::move(extra);
  }
  return j;
}

TokenMeta meta_from_json(const nlohmann::json& j) {
  TokenMeta m;
  m.utterance_id = j.at("utterance_id").get<std::string>();
  m.position = j.at("position").get<std::int64_t>();
  m.word_index = j.value("word_index", std::int64_t{0});
  m.subtoken_index = j.value("subtoken_index", std::int64_t{0});
  m.token_text = j.value("token", std::string{});
  if (auto it = j.find("tag"); it != j.end() && !it->is_null()) {
    m.gold_tag = parse_tag(it->get<std::string>());
  }
  m.padding = j.value("padding", false);
  if (auto it = j.find("extra"); it != j.end()) {
    for (const auto& [k, v] : it->items()) {
      m.extra_columns[k] = v.is_null() ? std::numeric_limits<double>::quiet_NaN()
                                       : v.get<double>();
    }
  }
  return m;
}

}  // namespace

std::string_view tag_name(Tag t) {
  switch (t) {
    case Tag::O: return "O";
    case Tag::B: return "B";
    case Tag::I: return "I";
  }
  return "O";
}

Tag parse_tag(std::string_view s) {
  if (s == "O") return Tag::O;
  if (s == "B" || s == "B-TERM") return Tag::B;
  if (s == "I" || s == "I-TERM") return Tag::I;
  throw SchemaError("unknown tag '" + std::string(s) + "' (expected O, B or I)");
}

std::vector<float> normalize_l2(std::span<const float> v) {
  const double norm = l2_norm(v);
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw NormalizationError("cannot normalize a zero or non-finite vector");
  }
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = static_cast<float>(static_cast<double>(v[i]) / norm);
  }
  return out;
}

Datastore::Datastore(std::size_t dim, std::vector<float> vectors, std::vector<TokenMeta> meta,
                     bool normalized)
    : dim_(dim), vectors_(std::move(vectors)), meta_(std::move(meta)), normalized_(normalized) {
  if (dim_ == 0) throw SchemaError("datastore dimension must be >= 1");
  if (vectors_.size() != meta_.size() * dim_) {
    throw SchemaError("vector matrix holds " + std::to_string(vectors_.size() / dim_) +
                      " rows but metadata has " + std::to_string(meta_.size()));
  }
  if (normalized_) {
    for (std::size_t i = 0; i < count(); ++i) {
      if (std::abs(l2_norm(row(i)) - 1.0) > kUnitTolerance) {
        throw NormalizationError("row " + std::to_string(i) +
                                 " is not unit norm in a normalized store");
      }
    }
  }
  std::set<std::pair<std::string_view, std::int64_t>> seen;
  for (std::size_t i = 0; i < meta_.size(); ++i) {
    if (!seen.emplace(meta_[i].utterance_id, meta_[i].position).second) {
      throw SchemaError("duplicate (utterance_id, position) = (" + meta_[i].utterance_id + ", " +
                        std::to_string(meta_[i].position) + ") at row " + std::to_string(i));
    }
  }
}

Datastore build_datastore(std::span<const float> raw, std::size_t dim,
                          std::vector<TokenMeta> meta, const BuildOptions& opts) {
  if (dim == 0) throw SchemaError("datastore dimension must be >= 1");
  if (raw.size() % dim != 0 || raw.size() / dim != meta.size()) {
    throw SchemaError("matrix has " + std::to_string(raw.size() / dim) + " rows but " +
                      std::to_string(meta.size()) + " metadata records were given");
  }
  std::vector<float> vectors;
  std::vector<TokenMeta> kept;
  vectors.reserve(raw.size());
  kept.reserve(meta.size());
  for (std::size_t i = 0; i < meta.size(); ++i) {
    if (opts.drop_padding && meta[i].padding) continue;
    const auto row = raw.subspan(i * dim, dim);
    if (opts.normalize) {
      try {
        const auto unit = normalize_l2(row);
        vectors.insert(vectors.end(), unit.begin(), unit.end());
      } catch (const NormalizationError&) {
        throw NormalizationError("row " + std::to_string(i) + " is a zero vector");
      }
    } else {
      vectors.insert(vectors.end(), row.begin(), row.end());
    }
    kept.push_back(std::move(meta[i]));
  }
  return Datastore(dim, std::move(vectors), std::move(kept), opts.normalize);
}

std::vector<TokenMeta> load_meta_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("missing metadata file: " + path.string());
  std::vector<TokenMeta> meta;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      meta.push_back(meta_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("bad metadata record " + std::to_string(meta.size()) + " in " +
                        path.string() + ": " + e.what());
    }
  }
  return meta;
}

std::filesystem::path meta_sidecar_path(const std::filesystem::path& store_path) {
  auto p = store_path;
  p += ".meta.jsonl";
  return p;
}

void save_datastore(const Datastore& ds, const std::filesystem::path& path) {
  io::BinaryWriter w(path);
  w.magic(kStoreMagic);
  w.u32(kStoreVersion);
  w.u64(ds.count());
  w.u32(static_cast<std::uint32_t>(ds.dim()));
  w.u8(ds.normalized() ? 1 : 0);
  w.array(ds.vectors());
  w.close();

  const auto sidecar = meta_sidecar_path(path);
  std::ofstream out(sidecar, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + sidecar.string());
  for (const auto& m : ds.meta()) out << meta_to_json(m).dump() << '\n';
  if (!out) throw IoError("write failed: " + sidecar.string());
}

Datastore load_datastore(const std::filesystem::path& path) {
  io::BinaryReader r(path);
  r.expect_magic(kStoreMagic);
  const auto version = r.u32();
  if (version != kStoreVersion) {
    throw FormatError("unsupported store version " + std::to_string(version) + " in " +
                      path.string());
  }
  const auto count = r.u64();
  const auto dim = r.u32();
  const bool normalized = r.u8() != 0;
  if (dim == 0) throw FormatError("store header declares dim = 0");
  if (count * dim * sizeof(float) != r.remaining()) {
    throw FormatError("store header declares " + std::to_string(count) + " rows of dim " +
                      std::to_string(dim) + " but payload holds " +
                      std::to_string(r.remaining()) + " bytes");
  }
  std::vector<float> vectors(count * dim);
  r.array(std::span<float>(vectors));

  auto meta = load_meta_jsonl(meta_sidecar_path(path));
  if (meta.size() != count) {
    throw FormatError("metadata sidecar has " + std::to_string(meta.size()) +
                      " records but the store has " + std::to_string(count) + " rows");
  }
  return Datastore(dim, std::move(vectors), std::move(meta), normalized);
}

}  // namespace topo
