#pragma once

// Synthetic fixtures: a datastore whose term tokens sit in tight clusters on
// the unit sphere and whose background tokens are spread out, with word-level
// BIO labels. No language model involved.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "topo/config.hpp"
#include "topo/corpus.hpp"
#include "topo/vecstore.hpp"

namespace topo {

struct SynthSpec {
  std::size_t dim = 32;
  std::size_t utterances = 2000;
  std::size_t tokens_per_utterance = 10;
  double term_fraction = 0.3;
  double sigma_term = 0.01;  // per-coordinate noise around a term type
  double sigma_bg = 0.5;     // per-coordinate noise around a background word
  std::uint64_t seed = 0;

  // Utterances are split into contiguous domain blocks. Each domain owns a
  // family of term types around a shared hub; the last block is the test
  // split, the one before it validation, the rest training.
  std::size_t domains = 5;
  std::size_t term_types_per_domain = 12;
  double family_spread = 0.03;
  std::size_t background_words = 400;
  std::size_t max_phrase_words = 3;
  // Coordinate 0 carries +margin for a word-initial (B) subtoken and -margin
  // otherwise, for term and background tokens alike.
  double role_margin = 0.5;

  void validate() const;  // ParameterError
  static SynthSpec from_config(const ConfigFile& cfg);  // keys under [synth] or top level
};

struct SynthOutput {
  Datastore store;
  std::vector<LabelRecord> labels;
};

SynthOutput generate_synth(const SynthSpec& spec, unsigned threads = 0);

/// Writes <dir>/store.tds (+ sidecar) and <dir>/labels.jsonl.
void write_synth(const SynthOutput& out, const std::filesystem::path& dir);

}  // namespace topo
