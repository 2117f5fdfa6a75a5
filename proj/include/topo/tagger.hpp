#pragma once

// Fusion BIO tagger. Two encoders (LM embedding, persistence image), each
// affine -> GELU -> affine -> LayerNorm, summed and classified per token by a
// two-layer head. Activations are column-major: one column per token.

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "topo/corpus.hpp"
#include "topo/features.hpp"
#include "topo/vecstore.hpp"

namespace topo {

inline constexpr std::size_t kNumClasses = 3;  // O, B, I
inline constexpr double kLayerNormEps = 1e-5;

/// B word with k subtokens -> [B, I x (k-1)]; I word -> [I x k]; O -> [O x k].
std::vector<Tag> align_tags_iob2(std::span<const Tag> word_tags,
                                 std::span<const std::size_t> subtoken_counts);

struct TaggerShape {
  std::size_t lm_dim = 768;
  std::size_t pi_dim = 100;
  std::size_t hidden = 512;

  bool operator==(const TaggerShape&) const = default;
};

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

template <typename T>
struct TaggerParams {
  // Biases, gains and LN offsets are stored as single-column matrices.
  Matrix<T> lm_w1, lm_b1, lm_w2, lm_b2, lm_gain, lm_bias;
  Matrix<T> pi_w1, pi_b1, pi_w2, pi_b2, pi_gain, pi_bias;
  Matrix<T> head_w1, head_b1, head_w2, head_b2;

  std::vector<std::pair<std::string_view, Matrix<T>*>> tensors();
  std::vector<std::pair<std::string_view, const Matrix<T>*>> tensors() const;

  /// All tensors shaped for `shape` and filled with zeros.
  static TaggerParams zeros(const TaggerShape& shape);

  template <typename U>
  TaggerParams<U> cast() const {
    TaggerParams<U> out;
    auto dst = out.tensors();
    auto src = tensors();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i].second = src[i].second->template cast<U>();
    return out;
  }

  bool operator==(const TaggerParams& o) const;
};

/// Only matrices named *.w1 / *.w2 take weight decay.
bool decays(std::string_view tensor_name);

/// Glorot-normal weights, zero biases, unit LN gains.
template <typename T>
TaggerParams<T> init_params(const TaggerShape& shape, std::mt19937_64& rng);

template <typename T>
struct EncoderCache {
  Matrix<T> a1, h1, xhat, out;
  Eigen::Matrix<T, 1, Eigen::Dynamic> inv_std;
};

template <typename T>
struct ForwardCache {
  EncoderCache<T> lm, pi;
  Matrix<T> fused, a3, h3, logits;
};

/// Logits (3 x tokens). Throws SchemaError on input shape mismatch and
/// NumericsError on any non-finite activation.
template <typename T>
Matrix<T> forward(const TaggerParams<T>& params, const Matrix<T>& x_lm, const Matrix<T>& x_pi,
                  ForwardCache<T>* cache = nullptr);

/// Mean token cross-entropy of `logits` against `labels`; fills the logit
/// gradient when `dlogits` is given.
template <typename T>
T cross_entropy(const Matrix<T>& logits, std::span<const Tag> labels, Matrix<T>* dlogits = nullptr);

template <typename T>
struct LossAndGrads {
  T loss{};
  TaggerParams<T> grads;
};

template <typename T>
LossAndGrads<T> loss_and_grads(const TaggerParams<T>& params, const Matrix<T>& x_lm,
                               const Matrix<T>& x_pi, std::span<const Tag> labels);

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Element-wise AdamW: w -= lr * wd * w (when `decay`), then the bias
/// corrected Adam step. `step` counts from 1.
template <typename T>
void adamw_update(std::span<T> w, std::span<const T> g, std::span<T> m, std::span<T> v,
                  std::size_t step, double lr, const AdamWHyper& hyper, bool decay);

template <typename T>
struct AdamWState {
  TaggerParams<T> m, v;
};

template <typename T>
void adamw_step(TaggerParams<T>& params, const TaggerParams<T>& grads, AdamWState<T>& state,
                std::size_t step, double lr, const AdamWHyper& hyper);

/// Linear warm-up over ceil(warmup_fraction * total) steps, then linear decay
/// to 0 at `total`. `step` counts from 1.
double scheduled_lr(double base_lr, std::size_t step, std::size_t total_steps,
                    double warmup_fraction);

struct TrainConfig {
  double learning_rate = 5e-5;
  double warmup_fraction = 0.10;
  std::size_t batch_size = 48;  // utterances
  std::size_t epochs = 10;
  std::size_t eval_every = 100;
  std::size_t eval_until = 3000;
  std::uint64_t seed = 0;
  AdamWHyper adam{};
  std::size_t hidden = 512;
  bool use_pi = true;  // false: PI input is zeroed (LM-only baseline)

  void validate() const;
};

/// A tokenized utterance whose per-token inputs are columns of the corpus
/// matrices.
struct TaggerExample {
  std::string utterance_id;
  std::string split;
  std::vector<std::size_t> columns;
  std::vector<std::string> tokens;
  std::vector<std::int64_t> word_ids;
  std::vector<Tag> labels;  // empty when unlabeled
  std::vector<std::string> gold_phrases;
};

struct TaggerCorpus {
  Matrix<float> lm;  // lm_dim x store rows
  Matrix<float> pi;  // pi_dim x store rows
  std::vector<TaggerExample> examples;

  std::vector<std::size_t> split_indices(std::string_view split) const;
};

/// Joins store rows, their feature rows and the label file. Utterances are
/// taken in label-file order (store order when `labels` is null); the tokens
/// of an utterance are its store rows sorted by position.
TaggerCorpus build_tagger_corpus(const Datastore& store, const FeatureTable& features,
                                 const std::vector<LabelRecord>* labels);

/// Per-dimension standardization of the PI input, fitted on the training
/// tokens: x -> (x - mean) * scale. Raw image values sit around 1e-5, far
/// below the layer-norm epsilon.
struct InputScaler {
  std::vector<float> mean;
  std::vector<float> scale;

  static InputScaler identity(std::size_t dim);
  /// scale = 1 / max(std, 1e-6 * largest std); 1 when every column is constant.
  static InputScaler fit(const Matrix<float>& x, std::span<const std::size_t> columns);
  bool operator==(const InputScaler&) const = default;
};

struct FusionTagger {
  TaggerShape shape;
  bool use_pi = true;
  InputScaler pi_scaler;
  TaggerParams<float> params;
  std::uint64_t best_step = 0;
  double best_val_f1 = 0.0;

  bool operator==(const FusionTagger&) const = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 2;

void save_checkpoint(const FusionTagger& model, const std::filesystem::path& path);
FusionTagger load_checkpoint(const std::filesystem::path& path);

struct EvalPoint {
  std::size_t step = 0;
  double mean_loss = 0.0;  // mean training loss since the previous evaluation
  double val_f1 = 0.0;
};

struct TrainResult {
  FusionTagger model;  // best validation checkpoint
  std::size_t total_steps = 0;
  std::vector<EvalPoint> history;
};

using TrainProgress = std::function<void(const EvalPoint&)>;

/// Trains on the "train" split and selects by corpus-level phrasal F1 on the
/// "validation" split (ties: earliest). Throws SchemaError on an empty split.
TrainResult train_tagger(const TaggerCorpus& corpus, const TrainConfig& config,
                         const TrainProgress& progress = {});

/// Argmax tags (ties to the lowest class index) for the chosen examples.
std::vector<std::vector<Tag>> predict_tags(const FusionTagger& model, const TaggerCorpus& corpus,
                                           std::span<const std::size_t> example_indices);

std::vector<PredictionRecord> predict_records(const FusionTagger& model,
                                              const TaggerCorpus& corpus,
                                              std::span<const std::size_t> example_indices);

/// Corpus-level phrasal F1 of `tags` against the gold phrases of the examples.
double phrasal_f1(const TaggerCorpus& corpus, std::span<const std::size_t> example_indices,
                  const std::vector<std::vector<Tag>>& tags);

}  // namespace topo
