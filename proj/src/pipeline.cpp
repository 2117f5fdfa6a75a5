#include "topo/pipeline.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "json.hpp"
#include "topo/error.hpp"
#include "topo/stages.hpp"

namespace topo {

namespace fs = std::filesystem;

namespace {

using nlohmann::json;

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) {
      throw Error("SHA-256 initialisation failed");
    }
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx_, data, n) != 1) throw Error("SHA-256 update failed");
  }
  std::string hex() {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_, digest, &len) != 1) throw Error("SHA-256 finalisation failed");
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    for (unsigned i = 0; i < len; ++i) {
      out += kHex[digest[i] >> 4];
      out += kHex[digest[i] & 15];
    }
    return out;
  }

 private:
  EVP_MD_CTX* ctx_;
};

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& x : v) s += x + ",";
  return s;
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (auto x : v) s += std::to_string(x) + ",";
  return s;
}

struct Stage {
  std::string name;
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;
  std::string params;
  std::function<void()> run;
};

class Manifest {
 public:
  explicit Manifest(fs::path path) : path_(std::move(path)) {
    if (!fs::exists(path_)) return;
    std::ifstream in(path_, std::ios::binary);
    try {
      data_ = json::parse(in);
    } catch (const json::exception&) {
      data_ = json::object();  // unreadable manifest: everything is stale
    }
  }

  static json fingerprint(const std::vector<fs::path>& files) {
    json j = json::object();
    for (const auto& f : files) j[f.string()] = fs::exists(f) ? sha256_file(f) : "";
    return j;
  }

  bool up_to_date(const Stage& s) const {
    if (!data_.contains(s.name)) return false;
    const auto& e = data_.at(s.name);
    for (const auto& f : s.outputs) {
      if (!fs::exists(f)) return false;
    }
    return e.value("params", std::string{}) == sha256_text(s.params) &&
           e.value("inputs", json::object()) == fingerprint(s.inputs) &&
           e.value("outputs", json::object()) == fingerprint(s.outputs);
  }

  void record(const Stage& s) {
    data_[s.name] = {{"params", sha256_text(s.params)},
                     {"inputs", fingerprint(s.inputs)},
                     {"outputs", fingerprint(s.outputs)}};
    fs::create_directories(path_.parent_path());
    std::ofstream out(path_, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write manifest: " + path_.string());
    out << data_.dump(1) << '\n';
  }

 private:
  fs::path path_;
  json data_ = json::object();
};

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for hashing: " + path.string());
  Sha256 h;
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    const auto got = in.gcount();
    if (got > 0) h.update(buf.data(), static_cast<std::size_t>(got));
  }
  return h.hex();
}

std::string sha256_text(const std::string& text) {
  Sha256 h;
  h.update(text.data(), text.size());
  return h.hex();
}

void PipelineConfig::validate() const {
  const int sources = (use_synth ? 1 : 0) + (!store.empty() ? 1 : 0) + (!raw_vectors.empty() ? 1 : 0);
  if (sources != 1) {
    throw ConfigError("pipeline input must be exactly one of [synth], input.store or input.vectors");
  }
  if (!use_synth && labels.empty()) throw ConfigError("pipeline needs input.labels");
  if (!raw_vectors.empty() && raw_meta.empty()) throw ConfigError("input.vectors needs input.meta");
  if (features.neighborhood_n > k) {
    throw ConfigError("features.n = " + std::to_string(features.neighborhood_n) +
                      " exceeds cache depth k = " + std::to_string(k));
  }
  for (auto s : features.codensity_scales) {
    if (s >= k) {
      throw ConfigError("codensity scale " + std::to_string(s) + " needs cache depth > " +
                        std::to_string(s) + " but k = " + std::to_string(k));
    }
  }
  features.image.validate();
  train.validate();
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
  const auto cfg = ConfigFile::load(path);
  const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");
  for (const auto& key : cfg.keys()) {
    const auto section = key.substr(0, key.find('.'));
    static const std::set<std::string> sections{"pipeline", "input",     "synth", "knn",
                                                "features", "correlate", "train", "eval"};
    if (key.find('.') == std::string::npos || !sections.count(section)) {
      throw ConfigError(path.string() + ": unknown key '" + key + "'");
    }
  }
  cfg.reject_unknown("pipeline", {"work_dir", "seed", "threads"});
  cfg.reject_unknown("input", {"store", "labels", "vectors", "meta", "dim"});
  cfg.reject_unknown("knn", {"k"});
  cfg.reject_unknown("features", {"n", "scales", "bandwidth", "resolution", "y_lo", "y_hi", "pi1"});
  cfg.reject_unknown("correlate", {"columns"});
  cfg.reject_unknown("eval", {"split"});

  PipelineConfig c;
  c.work_dir = resolve(base, cfg.get_string("pipeline.work_dir", "pipeline-out"));
  c.seed = static_cast<std::uint64_t>(cfg.get_int("pipeline.seed", 0));
  c.threads = static_cast<unsigned>(cfg.get_size("pipeline.threads", 0));

  for (const auto& key : cfg.keys()) {
    if (key.rfind("synth.", 0) == 0) c.use_synth = true;
  }
  if (c.use_synth) c.synth = SynthSpec::from_config(cfg);
  c.store = resolve(base, cfg.get_string("input.store", ""));
  c.labels = resolve(base, cfg.get_string("input.labels", ""));
  c.raw_vectors = resolve(base, cfg.get_string("input.vectors", ""));
  c.raw_meta = resolve(base, cfg.get_string("input.meta", ""));
  c.raw_dim = cfg.get_size("input.dim", 0);

  c.k = static_cast<std::uint32_t>(cfg.get_size("knn.k", kDefaultCacheDepth));
  c.features.neighborhood_n = cfg.get_size("features.n", c.features.neighborhood_n);
  c.features.image.neighborhood_n = c.features.neighborhood_n;
  c.features.codensity_scales = cfg.get_size_list("features.scales", c.features.codensity_scales);
  c.features.image.bandwidth = cfg.get_double("features.bandwidth", c.features.image.bandwidth);
  c.features.image.resolution = cfg.get_size("features.resolution", c.features.image.resolution);
  c.features.image.y_lo = cfg.get_double("features.y_lo", c.features.image.y_lo);
  c.features.image.y_hi = cfg.get_double("features.y_hi", c.features.image.y_hi);
  c.features.with_pi1 = cfg.get_bool("features.pi1", false);
  c.correlate_columns = cfg.get_string_list("correlate.columns", c.correlate_columns);
  c.train = stages::train_config_from(cfg, "train");
  c.eval_split = cfg.get_string("eval.split", c.eval_split);
  return c;
}

std::vector<StageOutcome> run_pipeline(const PipelineConfig& config_in, const PipelineOptions& opts,
                                       std::string* failed_stage) {
  PipelineConfig config = config_in;
  // One seed drives every random choice.
  config.synth.seed = config.seed;
  config.train.seed = config.seed;
  config.features.threads = config.threads;
  config.features.image.neighborhood_n = config.features.neighborhood_n;
  config.validate();

  const fs::path work = config.work_dir;
  fs::path cache_dir = opts.cache_dir;
  if (cache_dir.empty()) {
    const char* env = std::getenv("TOPO_CACHE_DIR");
    cache_dir = env && *env ? fs::path(env) : work;
  }
  fs::create_directories(work);
  fs::create_directories(cache_dir);
  Manifest manifest(cache_dir / "manifest.json");

  auto with_sidecar = [](const fs::path& store) {
    return std::vector<fs::path>{store, meta_sidecar_path(store)};
  };
  const fs::path store = config.use_synth ? work / "synth" / "store.tds"
                         : !config.raw_vectors.empty() ? work / "store.tds"
                                                        : config.store;
  const fs::path labels = config.use_synth ? work / "synth" / "labels.jsonl" : config.labels;
  const fs::path cache = cache_dir / "cache.tnb";
  const fs::path feats = work / "features.tfe";
  const fs::path feats_csv = work / "features.csv";
  const fs::path corr = work / "correlation.csv";

  std::vector<Stage> plan;
  if (config.use_synth) {
    const auto& s = config.synth;
    std::ostringstream p;
    p.precision(17);
    p << s.dim << ' ' << s.utterances << ' ' << s.tokens_per_utterance << ' ' << s.term_fraction
      << ' ' << s.sigma_term << ' ' << s.sigma_bg << ' ' << s.seed << ' ' << s.domains << ' '
      << s.term_types_per_domain << ' ' << s.family_spread << ' ' << s.background_words << ' '
      << s.max_phrase_words << ' ' << s.role_margin;
    plan.push_back({"synth", {}, {store, meta_sidecar_path(store), labels}, p.str(), [&, s] {
                      stages::synth(s, store.parent_path(), config.threads);
                    }});
  } else if (!config.raw_vectors.empty()) {
    plan.push_back({"store", {config.raw_vectors, config.raw_meta}, with_sidecar(store),
                    std::to_string(config.raw_dim), [&] {
                      stages::StoreBuildArgs a;
                      a.vectors = config.raw_vectors;
                      a.meta = config.raw_meta;
                      a.dim = config.raw_dim;
                      a.out = store;
                      stages::store_build(a);
                    }});
  }

  plan.push_back({"knn", with_sidecar(store), {cache}, "k=" + std::to_string(config.k), [&] {
                    stages::knn(store, {}, config.k, cache, config.threads);
                  }});

  {
    const auto& f = config.features;
    std::ostringstream p;
    p.precision(17);
    p << f.neighborhood_n << ' ' << join(f.codensity_scales) << ' ' << f.image.bandwidth << ' '
      << f.image.y_lo << ' ' << f.image.y_hi << ' ' << f.image.resolution << ' ' << f.with_pi1;
    auto inputs = with_sidecar(store);
    inputs.push_back(cache);
    plan.push_back({"features", inputs, {feats, feats_csv}, p.str(), [&] {
                      stages::features(store, cache, {}, config.features, feats, feats_csv);
                    }});
  }

  plan.push_back({"correlate", {feats_csv}, {corr}, join(config.correlate_columns), [&] {
                    stages::correlate(feats_csv, config.correlate_columns, corr, config.threads);
                  }});

  struct Model {
    std::string name;
    bool use_pi;
  };
  const std::vector<Model> models{{"topo", true}, {"baseline", false}};
  std::vector<std::pair<std::string, fs::path>> scores;
  for (const auto& m : models) {
    TrainConfig tc = config.train;
    tc.use_pi = m.use_pi;
    const fs::path ckpt = work / (m.name + ".ckpt");
    const fs::path hist = work / (m.name + ".history.csv");
    const fs::path preds = work / (m.name + ".preds.jsonl");
    const fs::path score = work / (m.name + ".score.json");
    std::ostringstream p;
    p.precision(17);
    p << tc.learning_rate << ' ' << tc.warmup_fraction << ' ' << tc.batch_size << ' ' << tc.epochs
      << ' ' << tc.eval_every << ' ' << tc.eval_until << ' ' << tc.seed << ' '
      << tc.adam.weight_decay << ' ' << tc.adam.beta1 << ' ' << tc.adam.beta2 << ' '
      << tc.adam.eps << ' ' << tc.hidden << ' ' << tc.use_pi;
    auto inputs = with_sidecar(store);
    inputs.push_back(feats);
    inputs.push_back(labels);
    plan.push_back({"train:" + m.name, inputs, {ckpt, hist}, p.str(), [&, tc, ckpt, hist] {
                      stages::tag_train(store, feats, labels, tc, ckpt, hist, opts.verbose);
                    }});
    auto pinputs = inputs;
    pinputs.push_back(ckpt);
    plan.push_back({"predict:" + m.name, pinputs, {preds}, config.eval_split,
                    [&, ckpt, preds] {
                      stages::tag_predict(ckpt, store, feats, labels, config.eval_split, preds);
                    }});
    plan.push_back({"eval:" + m.name, {preds, labels}, {score}, config.eval_split,
                    [&, preds, score] { stages::eval(preds, labels, config.eval_split, score); }});
    scores.emplace_back(m.name, score);
  }

  std::vector<fs::path> score_paths;
  for (const auto& s : scores) score_paths.push_back(s.second);
  plan.push_back({"report", score_paths, {work / "report.csv", work / "report.md"}, "20", [&] {
                    stages::report(scores, work / "report.csv", work / "report.md", 20);
                  }});

  std::vector<StageOutcome> outcomes;
  bool upstream_ran = false;
  for (const auto& stage : plan) {
    StageOutcome o{stage.name, false, 0.0};
    try {
      if (opts.force || upstream_ran || !manifest.up_to_date(stage)) {
        for (const auto& in : stage.inputs) {
          if (!fs::exists(in)) throw IoError("missing input file: " + in.string());
        }
        const auto t0 = std::chrono::steady_clock::now();
        stage.run();
        o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        o.ran = true;
        upstream_ran = true;
        manifest.record(stage);
      }
    } catch (...) {
      if (failed_stage) *failed_stage = stage.name;
      throw;
    }
    if (opts.verbose) {
      std::fprintf(stderr, "[%s] %s%s\n", stage.name.c_str(), o.ran ? "ran" : "cached",
                   o.ran ? (" in " + std::to_string(o.seconds) + " s").c_str() : "");
    }
    outcomes.push_back(o);
  }
  return outcomes;
}

}  // namespace topo
