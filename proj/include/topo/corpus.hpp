#pragma once

// Utterance-level label and prediction files (JSON lines). See
// docs/formats.md.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "topo/vecstore.hpp"

namespace topo {

/// One utterance of a label file. `word_tags` is empty for unlabeled text.
/// `subtoken_counts` is optional; when present it must agree with the store.
struct LabelRecord {
  std::string utterance_id;
  std::string split;
  std::vector<std::string> words;
  std::vector<Tag> word_tags;
  std::vector<std::size_t> subtoken_counts;

  bool operator==(const LabelRecord&) const = default;
};

std::vector<LabelRecord> load_labels(const std::filesystem::path& path);
void save_labels(const std::vector<LabelRecord>& records, const std::filesystem::path& path);

struct PredictionRecord {
  std::string utterance_id;
  std::vector<std::string> tokens;
  std::vector<std::int64_t> word_ids;
  std::vector<Tag> tags;
  std::vector<std::string> phrases;

  bool operator==(const PredictionRecord&) const = default;
};

std::vector<PredictionRecord> load_predictions(const std::filesystem::path& path);
void save_predictions(const std::vector<PredictionRecord>& records,
                      const std::filesystem::path& path);

}  // namespace topo
