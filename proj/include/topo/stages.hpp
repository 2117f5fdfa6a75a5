#pragma once

// File-to-file operations behind the CLI subcommands. The pipeline runner
// calls the same functions, so a stage run standalone and a stage run inside
// the pipeline produce identical artifacts.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "topo/features.hpp"
#include "topo/phrasal.hpp"
#include "topo/stats.hpp"
#include "topo/synth.hpp"
#include "topo/tagger.hpp"

namespace topo::stages {

namespace fs = std::filesystem;

/// Raw row-major float32 matrix: a .npy file ('<f4', C order, 2-D) or a
/// headerless little-endian file (then `dim` is required).
std::vector<float> read_raw_matrix(const fs::path& path, std::size_t& dim);

struct StoreBuildArgs {
  fs::path vectors;
  std::size_t dim = 0;  // only for headerless input
  fs::path meta;
  fs::path out;
  BuildOptions options{};
};
Datastore store_build(const StoreBuildArgs& args);

/// `queries` empty: the store is its own query set.
NeighborCache knn(const fs::path& store, const fs::path& queries, std::uint32_t k,
                  const fs::path& out, unsigned threads);

FeatureTable features(const fs::path& store, const fs::path& cache, const fs::path& queries,
                      const FeatureConfig& config, const fs::path& out, const fs::path& csv);

CorrelationReport correlate(const fs::path& features_csv, const std::vector<std::string>& columns,
                            const fs::path& out, unsigned threads);

/// Keys under [train] (or top level): learning_rate, warmup_fraction,
/// batch_size, epochs, eval_every, eval_until, seed, weight_decay, beta1,
/// beta2, adam_eps, hidden, use_pi.
TrainConfig train_config_from(const ConfigFile& cfg, const std::string& section = "train");

TrainResult tag_train(const fs::path& store, const fs::path& features, const fs::path& labels,
                      const TrainConfig& config, const fs::path& out, const fs::path& history_csv,
                      bool verbose);

/// `labels` empty: every utterance of the store. `split` empty: all splits.
std::vector<PredictionRecord> tag_predict(const fs::path& ckpt, const fs::path& store,
                                          const fs::path& features, const fs::path& labels,
                                          const std::string& split, const fs::path& out);

struct UtteranceDiff {
  std::string utterance_id;
  std::vector<std::string> gold, pred, true_positive, false_positive, false_negative;
};

struct EvalReport {
  PhrasalScore score;
  std::size_t utterances = 0;
  std::vector<UtteranceDiff> diffs;
};

/// Corpus-level scoring: phrases of every evaluated utterance are pooled,
/// normalized and deduplicated before matching. Gold utterances missing from
/// the predictions contribute no predicted phrases.
EvalReport evaluate(const std::vector<PredictionRecord>& preds,
                    const std::vector<LabelRecord>& gold, const std::string& split);
EvalReport eval(const fs::path& pred, const fs::path& gold, const std::string& split,
                const fs::path& out);

void save_eval_report(const EvalReport& report, const fs::path& path);
EvalReport load_eval_report(const fs::path& path);

/// Per-system rows plus a "macro" row (mean P, R, F1) as CSV; optionally a
/// markdown side-by-side of the utterances where systems disagree.
void report(const std::vector<std::pair<std::string, fs::path>>& scores, const fs::path& out_csv,
            const fs::path& diff_md, std::size_t max_examples);

SynthOutput synth(const SynthSpec& spec, const fs::path& out_dir, unsigned threads);

}  // namespace topo::stages
