#pragma once

// End-to-end runner: synth or store build -> knn -> features -> correlate ->
// tag train (fusion and LM-only baseline) -> tag predict -> eval -> report.
// A stage is skipped when the manifest records the same parameters and the
// same SHA-256 of its inputs and outputs; once a stage reruns, every stage
// after it reruns too.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "topo/config.hpp"
#include "topo/features.hpp"
#include "topo/synth.hpp"
#include "topo/tagger.hpp"

namespace topo {

/// Lower-case hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_text(const std::string& text);

struct PipelineConfig {
  std::filesystem::path work_dir = "pipeline-out";

  // Input: either a synth spec, a prebuilt store + labels, or raw vectors.
  bool use_synth = false;
  SynthSpec synth{};
  std::filesystem::path store;
  std::filesystem::path labels;
  std::filesystem::path raw_vectors;
  std::filesystem::path raw_meta;
  std::size_t raw_dim = 0;

  std::uint32_t k = kDefaultCacheDepth;
  FeatureConfig features{};
  std::vector<std::string> correlate_columns{"coden_1", "coden_127", "coden_511", "w0", "w1"};
  TrainConfig train{};
  std::string eval_split = "test";
  std::uint64_t seed = 0;
  unsigned threads = 0;

  /// Throws ConfigError when scales or n exceed k, or on bad input choices.
  void validate() const;
  /// Relative paths are resolved against the config file's directory.
  static PipelineConfig load(const std::filesystem::path& path);
};

struct StageOutcome {
  std::string name;
  bool ran = false;
  double seconds = 0.0;
};

struct PipelineOptions {
  bool force = false;
  bool verbose = false;
  /// Manifest and neighbor cache directory; defaults to TOPO_CACHE_DIR or
  /// the work directory.
  std::filesystem::path cache_dir;
};

/// Runs every stage in order. On failure the stage name is stored in
/// `failed_stage` and the original error propagates.
std::vector<StageOutcome> run_pipeline(const PipelineConfig& config, const PipelineOptions& opts,
                                       std::string* failed_stage = nullptr);

}  // namespace topo
