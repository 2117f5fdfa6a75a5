#pragma once

// Ambient corpus datastore: the multi-set of contextual embedding vectors of
// every token instance of a corpus, plus per-row token metadata.
//
// On disk a store is two files:
//   <path>             binary vectors ("TDS1" header, float32 row-major)
//   <path>.meta.jsonl  one JSON object per row, same order
// See docs/formats.md for the exact layout.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace topo {

enum class Tag : std::uint8_t { O = 0, B = 1, I = 2 };

std::string_view tag_name(Tag t);  // "O", "B", "I"
Tag parse_tag(std::string_view s);  // accepts O/B/I and B-TERM/I-TERM

struct TokenMeta {
  std::string token_text;
  std::string utterance_id;
  std::int64_t position = 0;
  std::int64_t word_index = 0;
  std::int64_t subtoken_index = 0;
  std::optional<Tag> gold_tag;
  std::map<std::string, double> extra_columns;
  bool padding = false;

  bool operator==(const TokenMeta&) const = default;
};

/// L2-normalizes `v`. Throws NormalizationError on an all-zero vector.
std::vector<float> normalize_l2(std::span<const float> v);

/// Immutable row-major float32 matrix with metadata. Safe to share across
/// threads once constructed.
class Datastore {
 public:
  Datastore() = default;
  Datastore(std::size_t dim, std::vector<float> vectors, std::vector<TokenMeta> meta,
            bool normalized);

  std::size_t count() const { return meta_.size(); }
  std::size_t dim() const { return dim_; }
  bool normalized() const { return normalized_; }

  std::span<const float> row(std::size_t i) const {
    return {vectors_.data() + i * dim_, dim_};
  }
  std::span<const float> vectors() const { return vectors_; }
  const TokenMeta& meta(std::size_t i) const { return meta_[i]; }
  const std::vector<TokenMeta>& meta() const { return meta_; }

  bool operator==(const Datastore&) const = default;

 private:
  std::size_t dim_ = 0;
  std::vector<float> vectors_;
  std::vector<TokenMeta> meta_;
  bool normalized_ = false;
};

struct BuildOptions {
  bool normalize = true;
  // Rows whose metadata is flagged as padding are excluded.
  bool drop_padding = true;
};

/// Builds a store from a row-major count x dim matrix. Row order is kept
/// (minus dropped padding rows).
Datastore build_datastore(std::span<const float> raw, std::size_t dim,
                          std::vector<TokenMeta> meta, const BuildOptions& opts = {});

inline constexpr std::uint32_t kStoreVersion = 1;

std::filesystem::path meta_sidecar_path(const std::filesystem::path& store_path);

/// Metadata records in the sidecar format, from any JSON-lines file.
std::vector<TokenMeta> load_meta_jsonl(const std::filesystem::path& path);

void save_datastore(const Datastore& ds, const std::filesystem::path& path);
Datastore load_datastore(const std::filesystem::path& path);

}  // namespace topo
