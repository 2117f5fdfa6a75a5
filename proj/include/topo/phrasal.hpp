#pragma once

// BIO span decoding and phrase-level scoring: predicted and gold phrases are
// lower-cased, trimmed and deduplicated, then matched exactly.

#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "topo/vecstore.hpp"

namespace topo {

struct PhrasalScore {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Maximal B I* spans become phrases. A dangling I (no preceding B or I)
/// opens a new phrase. With `word_ids`, subtokens of one word are
/// concatenated and words are joined by a space; without them every token is
/// its own word.
std::vector<std::string> decode_bio(std::span<const std::string> tokens, std::span<const Tag> tags,
                                    std::span<const std::int64_t> word_ids = {});

std::string normalize_phrase(std::string_view phrase);
std::set<std::string> normalize_dedup(std::span<const std::string> phrases);

/// Both empty: P = R = F1 = 1. Otherwise an undefined ratio is 0.
PhrasalScore phrasal_prf(const std::set<std::string>& pred, const std::set<std::string>& gold);

}  // namespace topo
