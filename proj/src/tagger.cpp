#include "topo/tagger.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "topo/binary_io.hpp"
#include "topo/error.hpp"
#include "topo/phrasal.hpp"

namespace topo {

namespace {

constexpr std::string_view kCheckpointMagic = "TCK1";

template <typename T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::sqrt(T(2))));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::sqrt(T(2))));
  const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * T(M_PI));
  return cdf + x * pdf;
}

template <typename T>
void check_finite(const Matrix<T>& m, const char* where) {
  if (!m.allFinite()) throw NumericsError(std::string("non-finite activation in ") + where);
}

template <typename T>
struct EncoderRefs {
  const Matrix<T>& w1;
  const Matrix<T>& b1;
  const Matrix<T>& w2;
  const Matrix<T>& b2;
  const Matrix<T>& gain;
  const Matrix<T>& bias;
};

template <typename T>
struct EncoderGrads {
  Matrix<T>& w1;
  Matrix<T>& b1;
  Matrix<T>& w2;
  Matrix<T>& b2;
  Matrix<T>& gain;
  Matrix<T>& bias;
};

template <typename T>
void encoder_forward(const EncoderRefs<T>& p, const Matrix<T>& x, EncoderCache<T>& c,
                     const char* name) {
  c.a1 = p.w1 * x;
  c.a1.colwise() += p.b1.col(0);
  c.h1 = c.a1.unaryExpr([](T v) { return gelu(v); });
  Matrix<T> a2 = p.w2 * c.h1;
  a2.colwise() += p.b2.col(0);
  check_finite(a2, name);
  const auto h = static_cast<T>(a2.rows());
  const Eigen::Matrix<T, 1, Eigen::Dynamic> mean = a2.colwise().sum() / h;
  a2.rowwise() -= mean;
  const Eigen::Matrix<T, 1, Eigen::Dynamic> var = a2.array().square().colwise().sum() / h;
  c.inv_std = (var.array() + T(kLayerNormEps)).rsqrt();
  c.xhat = a2 * c.inv_std.asDiagonal();
  c.out = (c.xhat.array().colwise() * p.gain.col(0).array()).matrix();
  c.out.colwise() += p.bias.col(0);
}

template <typename T>
void encoder_backward(const EncoderRefs<T>& p, const Matrix<T>& x, const EncoderCache<T>& c,
                      const Matrix<T>& dout, EncoderGrads<T> g) {
  g.gain = dout.cwiseProduct(c.xhat).rowwise().sum();
  g.bias = dout.rowwise().sum();
  const Matrix<T> dxhat = (dout.array().colwise() * p.gain.col(0).array()).matrix();
  const auto h = static_cast<T>(dout.rows());
  const Eigen::Matrix<T, 1, Eigen::Dynamic> s1 = dxhat.colwise().sum();
  const Eigen::Matrix<T, 1, Eigen::Dynamic> s2 = dxhat.cwiseProduct(c.xhat).colwise().sum();
  Matrix<T> da2 = dxhat * h;
  da2.rowwise() -= s1;
  da2 -= c.xhat * s2.asDiagonal();
  da2 = da2 * (c.inv_std / h).asDiagonal();

  g.w2 = da2 * c.h1.transpose();
  g.b2 = da2.rowwise().sum();
  Matrix<T> da1 = p.w2.transpose() * da2;
  da1.array() *= c.a1.unaryExpr([](T v) { return gelu_grad(v); }).array();
  g.w1 = da1 * x.transpose();
  g.b1 = da1.rowwise().sum();
}

template <typename T>
EncoderRefs<T> lm_refs(const TaggerParams<T>& p) {
  return {p.lm_w1, p.lm_b1, p.lm_w2, p.lm_b2, p.lm_gain, p.lm_bias};
}
template <typename T>
EncoderRefs<T> pi_refs(const TaggerParams<T>& p) {
  return {p.pi_w1, p.pi_b1, p.pi_w2, p.pi_b2, p.pi_gain, p.pi_bias};
}

std::size_t argmax_lowest(const float* col) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < kNumClasses; ++k) {
    if (col[k] > col[best]) best = k;
  }
  return best;
}

}  // namespace

std::vector<Tag> align_tags_iob2(std::span<const Tag> word_tags,
                                 std::span<const std::size_t> subtoken_counts) {
  if (word_tags.size() != subtoken_counts.size()) {
    throw SchemaError("align_tags_iob2: " + std::to_string(word_tags.size()) + " tags but " +
                      std::to_string(subtoken_counts.size()) + " subtoken counts");
  }
  std::vector<Tag> out;
  for (std::size_t w = 0; w < word_tags.size(); ++w) {
    const std::size_t k = subtoken_counts[w];
    if (k == 0) throw SchemaError("align_tags_iob2: word " + std::to_string(w) + " has no subtokens");
    const Tag first = word_tags[w];
    const Tag rest = first == Tag::O ? Tag::O : Tag::I;
    out.push_back(first);
    out.insert(out.end(), k - 1, rest);
  }
  return out;
}

template <typename T>
std::vector<std::pair<std::string_view, Matrix<T>*>> TaggerParams<T>::tensors() {
  return {{"enc_lm.w1", &lm_w1},     {"enc_lm.b1", &lm_b1},     {"enc_lm.w2", &lm_w2},
          {"enc_lm.b2", &lm_b2},     {"enc_lm.ln_gain", &lm_gain}, {"enc_lm.ln_bias", &lm_bias},
          {"enc_pi.w1", &pi_w1},     {"enc_pi.b1", &pi_b1},     {"enc_pi.w2", &pi_w2},
          {"enc_pi.b2", &pi_b2},     {"enc_pi.ln_gain", &pi_gain}, {"enc_pi.ln_bias", &pi_bias},
          {"head.w1", &head_w1},     {"head.b1", &head_b1},     {"head.w2", &head_w2},
          {"head.b2", &head_b2}};
}

template <typename T>
std::vector<std::pair<std::string_view, const Matrix<T>*>> TaggerParams<T>::tensors() const {
  auto mut = const_cast<TaggerParams*>(this)->tensors();
  std::vector<std::pair<std::string_view, const Matrix<T>*>> out;
  out.reserve(mut.size());
  for (auto& [name, ptr] : mut) out.emplace_back(name, ptr);
  return out;
}

template <typename T>
TaggerParams<T> TaggerParams<T>::zeros(const TaggerShape& s) {
  TaggerParams p;
  const auto h = static_cast<Eigen::Index>(s.hidden);
  const auto lm = static_cast<Eigen::Index>(s.lm_dim);
  const auto pi = static_cast<Eigen::Index>(s.pi_dim);
  const auto c = static_cast<Eigen::Index>(kNumClasses);
  p.lm_w1.setZero(h, lm);
  p.pi_w1.setZero(h, pi);
  p.lm_w2.setZero(h, h);
  p.pi_w2.setZero(h, h);
  p.head_w1.setZero(h, h);
  p.head_w2.setZero(c, h);
  for (auto* b : {&p.lm_b1, &p.lm_b2, &p.lm_gain, &p.lm_bias, &p.pi_b1, &p.pi_b2, &p.pi_gain,
                  &p.pi_bias, &p.head_b1}) {
    b->setZero(h, 1);
  }
  p.head_b2.setZero(c, 1);
  return p;
}

template <typename T>
bool TaggerParams<T>::operator==(const TaggerParams& o) const {
  const auto a = tensors();
  const auto b = o.tensors();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& x = *a[i].second;
    const auto& y = *b[i].second;
    if (x.rows() != y.rows() || x.cols() != y.cols()) return false;
    if (!std::equal(x.data(), x.data() + x.size(), y.data())) return false;
  }
  return true;
}

bool decays(std::string_view name) {
  return name.ends_with(".w1") || name.ends_with(".w2");
}

template <typename T>
TaggerParams<T> init_params(const TaggerShape& shape, std::mt19937_64& rng) {
  auto p = TaggerParams<T>::zeros(shape);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& [name, m] : p.tensors()) {
    if (decays(name)) {
      const double sd = std::sqrt(2.0 / static_cast<double>(m->rows() + m->cols()));
      for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = static_cast<T>(sd * normal(rng));
    } else if (name.ends_with("ln_gain")) {
      m->setOnes();
    }
  }
  return p;
}

template <typename T>
Matrix<T> forward(const TaggerParams<T>& p, const Matrix<T>& x_lm, const Matrix<T>& x_pi,
                  ForwardCache<T>* cache) {
  if (x_lm.rows() != p.lm_w1.cols()) {
    throw SchemaError("LM input has dimension " + std::to_string(x_lm.rows()) +
                      " but the model expects " + std::to_string(p.lm_w1.cols()));
  }
  if (x_pi.rows() != p.pi_w1.cols()) {
    throw SchemaError("PI input has dimension " + std::to_string(x_pi.rows()) +
                      " but the model expects " + std::to_string(p.pi_w1.cols()));
  }
  if (x_lm.cols() != x_pi.cols()) throw SchemaError("LM and PI inputs differ in token count");
  ForwardCache<T> local;
  ForwardCache<T>& c = cache ? *cache : local;
  encoder_forward(lm_refs(p), x_lm, c.lm, "LM encoder");
  encoder_forward(pi_refs(p), x_pi, c.pi, "PI encoder");
  c.fused = c.lm.out + c.pi.out;
  c.a3 = p.head_w1 * c.fused;
  c.a3.colwise() += p.head_b1.col(0);
  c.h3 = c.a3.unaryExpr([](T v) { return gelu(v); });
  c.logits = p.head_w2 * c.h3;
  c.logits.colwise() += p.head_b2.col(0);
  check_finite(c.logits, "classification head");
  return c.logits;
}

template <typename T>
T cross_entropy(const Matrix<T>& logits, std::span<const Tag> labels, Matrix<T>* dlogits) {
  const auto n = static_cast<std::size_t>(logits.cols());
  if (labels.size() != n) {
    throw SchemaError("got " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                      " tokens");
  }
  if (logits.rows() != static_cast<Eigen::Index>(kNumClasses)) {
    throw SchemaError("logits must have 3 rows");
  }
  if (n == 0) throw SchemaError("cross_entropy on an empty batch");
  if (dlogits) dlogits->resize(logits.rows(), logits.cols());
  T total = 0;
  const T inv_n = T(1) / static_cast<T>(n);
  for (std::size_t t = 0; t < n; ++t) {
    const auto col = logits.col(static_cast<Eigen::Index>(t));
    Eigen::Index top = 0;
    for (Eigen::Index k = 1; k < col.size(); ++k) {
      if (col(k) > col(top)) top = k;
    }
    const T m = col(top);
    T rest = 0;
    for (Eigen::Index k = 0; k < col.size(); ++k) {
      if (k != top) rest += std::exp(col(k) - m);
    }
    // log-sum-exp = m + log1p(rest); exact near saturation
    const T lse = m + std::log1p(rest);
    const auto y = static_cast<Eigen::Index>(labels[t]);
    total += lse - col(y);
    if (dlogits) {
      for (Eigen::Index k = 0; k < col.size(); ++k) {
        const T prob = std::exp(col(k) - lse);
        (*dlogits)(k, static_cast<Eigen::Index>(t)) = (prob - (k == y ? T(1) : T(0))) * inv_n;
      }
    }
  }
  const T loss = total * inv_n;
  if (!std::isfinite(loss)) throw NumericsError("non-finite loss");
  return loss;
}

template <typename T>
LossAndGrads<T> loss_and_grads(const TaggerParams<T>& p, const Matrix<T>& x_lm,
                               const Matrix<T>& x_pi, std::span<const Tag> labels) {
  ForwardCache<T> c;
  forward(p, x_lm, x_pi, &c);
  LossAndGrads<T> out;
  Matrix<T> dlogits;
  out.loss = cross_entropy(c.logits, labels, &dlogits);
  auto& g = out.grads;
  g.head_w2 = dlogits * c.h3.transpose();
  g.head_b2 = dlogits.rowwise().sum();
  Matrix<T> da3 = p.head_w2.transpose() * dlogits;
  da3.array() *= c.a3.unaryExpr([](T v) { return gelu_grad(v); }).array();
  g.head_w1 = da3 * c.fused.transpose();
  g.head_b1 = da3.rowwise().sum();
  const Matrix<T> dfused = p.head_w1.transpose() * da3;
  encoder_backward(lm_refs(p), x_lm, c.lm, dfused,
                   EncoderGrads<T>{g.lm_w1, g.lm_b1, g.lm_w2, g.lm_b2, g.lm_gain, g.lm_bias});
  encoder_backward(pi_refs(p), x_pi, c.pi, dfused,
                   EncoderGrads<T>{g.pi_w1, g.pi_b1, g.pi_w2, g.pi_b2, g.pi_gain, g.pi_bias});
  return out;
}

template <typename T>
void adamw_update(std::span<T> w, std::span<const T> g, std::span<T> m, std::span<T> v,
                  std::size_t step, double lr, const AdamWHyper& hyper, bool decay) {
  if (step == 0) throw ParameterError("AdamW step index counts from 1");
  if (g.size() != w.size() || m.size() != w.size() || v.size() != w.size()) {
    throw SchemaError("AdamW buffers differ in size");
  }
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(step));
  const double shrink = decay ? 1.0 - lr * hyper.weight_decay : 1.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double gi = g[i];
    const double mi = hyper.beta1 * static_cast<double>(m[i]) + (1.0 - hyper.beta1) * gi;
    const double vi = hyper.beta2 * static_cast<double>(v[i]) + (1.0 - hyper.beta2) * gi * gi;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    const double mhat = mi / bc1;
    const double vhat = vi / bc2;
    const double wi = static_cast<double>(w[i]) * shrink;
    w[i] = static_cast<T>(wi - lr * mhat / (std::sqrt(vhat) + hyper.eps));
  }
}

template <typename T>
void adamw_step(TaggerParams<T>& params, const TaggerParams<T>& grads, AdamWState<T>& state,
                std::size_t step, double lr, const AdamWHyper& hyper) {
  auto pt = params.tensors();
  const auto gt = grads.tensors();
  auto mt = state.m.tensors();
  auto vt = state.v.tensors();
  for (std::size_t i = 0; i < pt.size(); ++i) {
    auto& w = *pt[i].second;
    const auto& g = *gt[i].second;
    if (g.rows() != w.rows() || g.cols() != w.cols()) {
      throw SchemaError("gradient shape mismatch for " + std::string(pt[i].first));
    }
    if (mt[i].second->size() != w.size()) {
      mt[i].second->setZero(w.rows(), w.cols());
      vt[i].second->setZero(w.rows(), w.cols());
    }
    const auto n = static_cast<std::size_t>(w.size());
    adamw_update<T>({w.data(), n}, {g.data(), n}, {mt[i].second->data(), n},
                    {vt[i].second->data(), n}, step, lr, hyper, decays(pt[i].first));
  }
}

double scheduled_lr(double base_lr, std::size_t step, std::size_t total_steps,
                    double warmup_fraction) {
  if (total_steps == 0 || step == 0) return 0.0;
  const auto warmup = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(warmup_fraction * static_cast<double>(total_steps))));
  if (step <= warmup) return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
  if (step >= total_steps) return 0.0;
  return base_lr * static_cast<double>(total_steps - step) /
         static_cast<double>(total_steps - warmup);
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
  if (!(warmup_fraction > 0 && warmup_fraction < 1)) {
    throw ConfigError("warmup_fraction must lie in (0, 1)");
  }
  if (batch_size == 0 || epochs == 0 || eval_every == 0 || hidden == 0) {
    throw ConfigError("batch_size, epochs, eval_every and hidden must be positive");
  }
  if (adam.weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
}

std::vector<std::size_t> TaggerCorpus::split_indices(std::string_view split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (examples[i].split == split) out.push_back(i);
  }
  return out;
}

TaggerCorpus build_tagger_corpus(const Datastore& store, const FeatureTable& features,
                                 const std::vector<LabelRecord>* labels) {
  if (features.rows.size() != store.count()) {
    throw SchemaError("feature table has " + std::to_string(features.rows.size()) +
                      " rows but the store has " + std::to_string(store.count()) +
                      "; features must be computed with the store as query set");
  }
  TaggerCorpus corpus;
  const auto dim = static_cast<Eigen::Index>(store.dim());
  const auto count = static_cast<Eigen::Index>(store.count());
  corpus.lm = Eigen::Map<const Matrix<float>>(store.vectors().data(), dim, count);
  const auto pi_dim = static_cast<Eigen::Index>(features.pi_width);
  corpus.pi.resize(pi_dim, count);
  for (Eigen::Index i = 0; i < count; ++i) {
    const auto& row = features.rows[static_cast<std::size_t>(i)].pi0;
    if (static_cast<Eigen::Index>(row.size()) != pi_dim) throw SchemaError("ragged pi0 column");
    corpus.pi.col(i) = Eigen::Map<const Eigen::VectorXf>(row.data(), pi_dim);
  }

  std::map<std::string, std::vector<std::size_t>> rows_of;
  std::vector<std::string> store_order;
  for (std::size_t r = 0; r < store.count(); ++r) {
    const auto& id = store.meta(r).utterance_id;
    auto [it, inserted] = rows_of.try_emplace(id);
    if (inserted) store_order.push_back(id);
    it->second.push_back(r);
  }
  for (auto& [id, rows] : rows_of) {
    std::sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
      return store.meta(a).position < store.meta(b).position;
    });
  }

  auto make_example = [&](const std::string& id) {
    const auto it = rows_of.find(id);
    if (it == rows_of.end()) throw SchemaError("utterance " + id + " has no rows in the store");
    TaggerExample ex;
    ex.utterance_id = id;
    ex.columns = it->second;
    for (auto r : ex.columns) {
      ex.tokens.push_back(store.meta(r).token_text);
      ex.word_ids.push_back(store.meta(r).word_index);
    }
    return ex;
  };

  if (!labels) {
    for (const auto& id : store_order) corpus.examples.push_back(make_example(id));
    return corpus;
  }
  for (const auto& rec : *labels) {
    auto ex = make_example(rec.utterance_id);
    ex.split = rec.split;
    // Subtoken counts per word from the store's word indices.
    std::vector<std::size_t> counts;
    for (std::size_t t = 0; t < ex.word_ids.size(); ++t) {
      if (t == 0 || ex.word_ids[t] != ex.word_ids[t - 1]) {
        counts.push_back(1);
      } else {
        ++counts.back();
      }
    }
    if (!rec.subtoken_counts.empty() && rec.subtoken_counts != counts) {
      throw SchemaError("utterance " + rec.utterance_id +
                        ": subtoken_counts disagree with the store's word alignment");
    }
    if (!rec.word_tags.empty()) {
      if (rec.word_tags.size() != counts.size()) {
        throw SchemaError("utterance " + rec.utterance_id + ": " +
                          std::to_string(rec.word_tags.size()) + " word tags but the store has " +
                          std::to_string(counts.size()) + " words");
      }
      ex.labels = align_tags_iob2(rec.word_tags, counts);
      ex.gold_phrases = decode_bio(rec.words, rec.word_tags);
    }
    corpus.examples.push_back(std::move(ex));
  }
  return corpus;
}

namespace {

struct Batch {
  Matrix<float> lm, pi;
  std::vector<Tag> labels;
};

Batch gather(const TaggerCorpus& corpus, std::span<const std::size_t> examples,
             const InputScaler* pi_scaler, bool with_labels) {
  const bool use_pi = pi_scaler != nullptr;
  std::size_t tokens = 0;
  for (auto e : examples) tokens += corpus.examples[e].columns.size();
  Batch b;
  b.lm.resize(corpus.lm.rows(), static_cast<Eigen::Index>(tokens));
  b.pi.setZero(corpus.pi.rows(), static_cast<Eigen::Index>(tokens));
  Eigen::Index col = 0;
  for (auto e : examples) {
    const auto& ex = corpus.examples[e];
    for (auto c : ex.columns) {
      b.lm.col(col) = corpus.lm.col(static_cast<Eigen::Index>(c));
      if (use_pi) {
        for (Eigen::Index d = 0; d < b.pi.rows(); ++d) {
          const auto i = static_cast<std::size_t>(d);
          b.pi(d, col) = (corpus.pi(d, static_cast<Eigen::Index>(c)) - pi_scaler->mean[i]) *
                         pi_scaler->scale[i];
        }
      }
      ++col;
    }
    if (with_labels) {
      if (ex.labels.size() != ex.columns.size()) {
        throw SchemaError("utterance " + ex.utterance_id + " has no token labels");
      }
      b.labels.insert(b.labels.end(), ex.labels.begin(), ex.labels.end());
    }
  }
  return b;
}

std::vector<std::vector<Tag>> predict_with(const TaggerParams<float>& params,
                                           const InputScaler* pi_scaler,
                                           const TaggerCorpus& corpus,
                                           std::span<const std::size_t> example_indices) {
  std::vector<std::vector<Tag>> out;
  out.reserve(example_indices.size());
  constexpr std::size_t kChunkTokens = 4096;
  std::size_t begin = 0;
  while (begin < example_indices.size()) {
    std::size_t end = begin, tokens = 0;
    while (end < example_indices.size() &&
           (tokens == 0 || tokens + corpus.examples[example_indices[end]].columns.size() <= kChunkTokens)) {
      tokens += corpus.examples[example_indices[end]].columns.size();
      ++end;
    }
    const auto chunk = example_indices.subspan(begin, end - begin);
    const Batch b = gather(corpus, chunk, pi_scaler, false);
    const Matrix<float> logits = forward(params, b.lm, b.pi);
    Eigen::Index col = 0;
    for (auto e : chunk) {
      std::vector<Tag> tags;
      for (std::size_t t = 0; t < corpus.examples[e].columns.size(); ++t, ++col) {
        tags.push_back(static_cast<Tag>(argmax_lowest(logits.col(col).data())));
      }
      out.push_back(std::move(tags));
    }
    begin = end;
  }
  return out;
}

}  // namespace

InputScaler InputScaler::identity(std::size_t dim) {
  return InputScaler{std::vector<float>(dim, 0.f), std::vector<float>(dim, 1.f)};
}

InputScaler InputScaler::fit(const Matrix<float>& x, std::span<const std::size_t> columns) {
  const auto dim = static_cast<std::size_t>(x.rows());
  if (columns.empty()) return identity(dim);
  std::vector<double> mean(dim, 0.0), sd(dim, 0.0);
  for (auto c : columns) {
    for (std::size_t d = 0; d < dim; ++d) mean[d] += x(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(c));
  }
  for (auto& m : mean) m /= static_cast<double>(columns.size());
  for (auto c : columns) {
    for (std::size_t d = 0; d < dim; ++d) {
      const double v = x(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(c)) - mean[d];
      sd[d] += v * v;
    }
  }
  double largest = 0.0;
  for (auto& v : sd) {
    v = std::sqrt(v / static_cast<double>(columns.size()));
    largest = std::max(largest, v);
  }
  InputScaler s;
  for (std::size_t d = 0; d < dim; ++d) {
    s.mean.push_back(static_cast<float>(mean[d]));
    s.scale.push_back(largest > 0.0 ? static_cast<float>(1.0 / std::max(sd[d], 1e-6 * largest))
                                    : 1.f);
  }
  return s;
}

double phrasal_f1(const TaggerCorpus& corpus, std::span<const std::size_t> example_indices,
                  const std::vector<std::vector<Tag>>& tags) {
  std::vector<std::string> pred, gold;
  for (std::size_t i = 0; i < example_indices.size(); ++i) {
    const auto& ex = corpus.examples[example_indices[i]];
    for (auto& p : decode_bio(ex.tokens, tags[i], ex.word_ids)) pred.push_back(std::move(p));
    gold.insert(gold.end(), ex.gold_phrases.begin(), ex.gold_phrases.end());
  }
  return phrasal_prf(normalize_dedup(pred), normalize_dedup(gold)).f1;
}

TrainResult train_tagger(const TaggerCorpus& corpus, const TrainConfig& config,
                         const TrainProgress& progress) {
  config.validate();
  const auto train_idx = corpus.split_indices("train");
  const auto val_idx = corpus.split_indices("validation");
  if (train_idx.empty()) throw SchemaError("training split is empty");
  if (val_idx.empty()) throw SchemaError("validation split is empty");

  TaggerShape shape{static_cast<std::size_t>(corpus.lm.rows()),
                    static_cast<std::size_t>(corpus.pi.rows()), config.hidden};
  std::mt19937_64 rng(config.seed);
  TrainResult result;
  result.model.shape = shape;
  result.model.use_pi = config.use_pi;
  {
    std::vector<std::size_t> train_cols;
    for (auto e : train_idx) {
      const auto& c = corpus.examples[e].columns;
      train_cols.insert(train_cols.end(), c.begin(), c.end());
    }
    result.model.pi_scaler = InputScaler::fit(corpus.pi, train_cols);
  }
  const InputScaler* scaler = config.use_pi ? &result.model.pi_scaler : nullptr;
  auto params = init_params<float>(shape, rng);
  AdamWState<float> state;

  const std::size_t per_epoch = (train_idx.size() + config.batch_size - 1) / config.batch_size;
  result.total_steps = per_epoch * config.epochs;

  bool have_best = false;
  double loss_sum = 0.0;
  std::size_t loss_count = 0, last_eval = 0, step = 0;
  auto evaluate = [&] {
    const auto tags = predict_with(params, scaler, corpus, val_idx);
    EvalPoint point{step, loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0,
                    phrasal_f1(corpus, val_idx, tags)};
    result.history.push_back(point);
    if (progress) progress(point);
    if (!have_best || point.val_f1 > result.model.best_val_f1) {
      have_best = true;
      result.model.params = params;
      result.model.best_step = step;
      result.model.best_val_f1 = point.val_f1;
    }
    loss_sum = 0.0;
    loss_count = 0;
    last_eval = step;
  };

  std::vector<std::size_t> order = train_idx;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::size_t lo = b * config.batch_size;
      const std::size_t hi = std::min(order.size(), lo + config.batch_size);
      const auto batch = gather(corpus, std::span(order).subspan(lo, hi - lo), scaler, true);
      const auto lg = loss_and_grads(params, batch.lm, batch.pi, batch.labels);
      ++step;
      adamw_step(params, lg.grads, state, step,
                 scheduled_lr(config.learning_rate, step, result.total_steps,
                              config.warmup_fraction),
                 config.adam);
      loss_sum += lg.loss;
      ++loss_count;
      if (step <= config.eval_until && step % config.eval_every == 0) evaluate();
    }
    if (last_eval != step) evaluate();
  }
  return result;
}

std::vector<std::vector<Tag>> predict_tags(const FusionTagger& model, const TaggerCorpus& corpus,
                                           std::span<const std::size_t> example_indices) {
  if (static_cast<std::size_t>(corpus.lm.rows()) != model.shape.lm_dim ||
      static_cast<std::size_t>(corpus.pi.rows()) != model.shape.pi_dim) {
    throw SchemaError("corpus dimensions (" + std::to_string(corpus.lm.rows()) + ", " +
                      std::to_string(corpus.pi.rows()) + ") do not match the checkpoint (" +
                      std::to_string(model.shape.lm_dim) + ", " +
                      std::to_string(model.shape.pi_dim) + ")");
  }
  if (model.pi_scaler.mean.size() != model.shape.pi_dim ||
      model.pi_scaler.scale.size() != model.shape.pi_dim) {
    throw SchemaError("checkpoint input scaler does not match pi_dim");
  }
  return predict_with(model.params, model.use_pi ? &model.pi_scaler : nullptr, corpus,
                      example_indices);
}

std::vector<PredictionRecord> predict_records(const FusionTagger& model,
                                              const TaggerCorpus& corpus,
                                              std::span<const std::size_t> example_indices) {
  const auto tags = predict_tags(model, corpus, example_indices);
  std::vector<PredictionRecord> out;
  for (std::size_t i = 0; i < example_indices.size(); ++i) {
    const auto& ex = corpus.examples[example_indices[i]];
    PredictionRecord r;
    r.utterance_id = ex.utterance_id;
    r.tokens = ex.tokens;
    r.word_ids = ex.word_ids;
    r.tags = tags[i];
    r.phrases = decode_bio(ex.tokens, tags[i], ex.word_ids);
    out.push_back(std::move(r));
  }
  return out;
}

void save_checkpoint(const FusionTagger& model, const std::filesystem::path& path) {
  io::BinaryWriter w(path);
  w.magic(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(model.shape.lm_dim));
  w.u32(static_cast<std::uint32_t>(model.shape.pi_dim));
  w.u32(static_cast<std::uint32_t>(model.shape.hidden));
  w.u8(model.use_pi ? 1 : 0);
  w.u64(model.best_step);
  w.scalar(model.best_val_f1);
  w.array(std::span<const float>(model.pi_scaler.mean));
  w.array(std::span<const float>(model.pi_scaler.scale));
  const auto tensors = model.params.tensors();
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, m] : tensors) {
    w.string16(name);
    w.u32(static_cast<std::uint32_t>(m->rows()));
    w.u32(static_cast<std::uint32_t>(m->cols()));
    w.array(std::span<const float>(m->data(), static_cast<std::size_t>(m->size())));
  }
  w.close();
}

FusionTagger load_checkpoint(const std::filesystem::path& path) {
  io::BinaryReader r(path);
  r.expect_magic(kCheckpointMagic);
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  FusionTagger model;
  model.shape.lm_dim = r.u32();
  model.shape.pi_dim = r.u32();
  model.shape.hidden = r.u32();
  model.use_pi = r.u8() != 0;
  model.best_step = r.u64();
  model.best_val_f1 = r.scalar<double>();
  model.pi_scaler.mean.resize(model.shape.pi_dim);
  model.pi_scaler.scale.resize(model.shape.pi_dim);
  r.array(std::span<float>(model.pi_scaler.mean));
  r.array(std::span<float>(model.pi_scaler.scale));
  model.params = TaggerParams<float>::zeros(model.shape);
  auto tensors = model.params.tensors();
  const auto count = r.u32();
  if (count != tensors.size()) throw FormatError("checkpoint tensor count mismatch");
  for (auto& [name, m] : tensors) {
    const auto got = r.string16();
    if (got != name) throw FormatError("checkpoint tensor '" + got + "' where '" + std::string(name) + "' expected");
    const auto rows = r.u32();
    const auto cols = r.u32();
    if (rows != m->rows() || cols != m->cols()) {
      throw FormatError("checkpoint tensor " + got + " has the wrong shape");
    }
    r.array(std::span<float>(m->data(), static_cast<std::size_t>(m->size())));
  }
  r.expect_end();
  return model;
}

#define TOPO_INSTANTIATE(T)                                                                      \
  template struct TaggerParams<T>;                                                               \
  template TaggerParams<T> init_params<T>(const TaggerShape&, std::mt19937_64&);                 \
  template Matrix<T> forward<T>(const TaggerParams<T>&, const Matrix<T>&, const Matrix<T>&,      \
                                ForwardCache<T>*);                                               \
  template T cross_entropy<T>(const Matrix<T>&, std::span<const Tag>, Matrix<T>*);               \
  template LossAndGrads<T> loss_and_grads<T>(const TaggerParams<T>&, const Matrix<T>&,           \
                                             const Matrix<T>&, std::span<const Tag>);            \
  template void adamw_update<T>(std::span<T>, std::span<const T>, std::span<T>, std::span<T>,    \
                                std::size_t, double, const AdamWHyper&, bool);                   \
  template void adamw_step<T>(TaggerParams<T>&, const TaggerParams<T>&, AdamWState<T>&,          \
                              std::size_t, double, const AdamWHyper&);

TOPO_INSTANTIATE(float)
TOPO_INSTANTIATE(double)

#undef TOPO_INSTANTIATE

}  // namespace topo
