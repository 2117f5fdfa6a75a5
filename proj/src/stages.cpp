#include "topo/stages.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include "json.hpp"
#include "topo/binary_io.hpp"
#include "topo/error.hpp"

namespace topo::stages {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::size_t parse_npy_dim(const std::string& header, std::size_t& rows) {
  if (header.find("'<f4'") == std::string::npos && header.find("\"<f4\"") == std::string::npos) {
    throw FormatError("npy input must have dtype '<f4'");
  }
  if (header.find("'fortran_order': False") == std::string::npos) {
    throw FormatError("npy input must be C-ordered");
  }
  const auto open = header.find('(', header.find("shape"));
  const auto close = header.find(')', open);
  if (open == std::string::npos || close == std::string::npos) {
    throw FormatError("npy header has no shape");
  }
  std::vector<std::size_t> dims;
  std::string cur;
  for (std::size_t i = open + 1; i <= close; ++i) {
    const char c = header[i];
    if (c >= '0' && c <= '9') {
      cur += c;
    } else if (!cur.empty()) {
      dims.push_back(std::stoull(cur));
      cur.clear();
    }
  }
  if (dims.size() != 2) throw FormatError("npy input must be two-dimensional");
  rows = dims[0];
  return dims[1];
}

}  // namespace

std::vector<float> read_raw_matrix(const fs::path& path, std::size_t& dim) {
  io::BinaryReader r(path);
  if (path.extension() == ".npy") {
    r.expect_magic("\x93NUMPY");
    const auto major = r.u8();
    r.u8();
    const std::size_t header_len = major == 1 ? r.u16() : r.u32();
    std::string header(header_len, '\0');
    r.bytes(header.data(), header.size());
    std::size_t rows = 0;
    dim = parse_npy_dim(header, rows);
    if (rows * dim * sizeof(float) != r.remaining()) {
      throw FormatError("npy payload size does not match its shape: " + path.string());
    }
    std::vector<float> out(rows * dim);
    r.array(std::span<float>(out));
    return out;
  }
  if (dim == 0) throw ParameterError("headerless vector input needs --dim");
  if (r.size() % (dim * sizeof(float)) != 0) {
    throw FormatError("raw vector file size is not a multiple of dim * 4 bytes");
  }
  std::vector<float> out(r.size() / sizeof(float));
  r.array(std::span<float>(out));
  return out;
}

Datastore store_build(const StoreBuildArgs& args) {
  std::size_t dim = args.dim;
  const auto raw = read_raw_matrix(args.vectors, dim);
  auto meta = load_meta_jsonl(args.meta);
  auto ds = build_datastore(raw, dim, std::move(meta), args.options);
  save_datastore(ds, args.out);
  return ds;
}

NeighborCache knn(const fs::path& store, const fs::path& queries, std::uint32_t k,
                  const fs::path& out, unsigned threads) {
  const auto ds = load_datastore(store);
  KnnOptions opts;
  opts.threads = threads;
  NeighborCache cache;
  if (queries.empty() || queries == store) {
    cache = exact_knn(ds, as_queries(ds), k, opts);
  } else {
    const auto qs = load_datastore(queries);
    cache = exact_knn(ds, as_queries(qs), k, opts);
  }
  save_cache(cache, out);
  return cache;
}

FeatureTable features(const fs::path& store, const fs::path& cache_path, const fs::path& queries,
                      const FeatureConfig& config, const fs::path& out, const fs::path& csv) {
  const auto ds = load_datastore(store);
  const auto cache = load_cache(cache_path);
  // A cache from an earlier configuration: report it as such rather than as
  // a depth failure deep inside the feature kernel.
  if (cache.k() < config.required_depth()) {
    throw ConfigError(cache_path.string() + " holds " + std::to_string(cache.k()) +
                      " neighbors per query but the feature settings need " +
                      std::to_string(config.required_depth()) + "; rebuild it with a larger --k");
  }
  FeatureTable table;
  std::vector<TokenMeta> query_meta;
  if (queries.empty() || queries == store) {
    table = compute_feature_table(ds, cache, as_queries(ds), config);
    query_meta = ds.meta();
  } else {
    const auto qs = load_datastore(queries);
    table = compute_feature_table(ds, cache, as_queries(qs), config);
    query_meta = qs.meta();
  }
  save_features(table, out);
  if (!csv.empty()) export_features_csv(table, query_meta, csv);
  return table;
}

CorrelationReport correlate(const fs::path& features_csv, const std::vector<std::string>& columns,
                            const fs::path& out, unsigned threads) {
  const auto data = read_csv_columns(features_csv, columns);
  auto rep = correlation_report(data, columns, threads);
  write_correlation_csv(rep, out);
  return rep;
}

TrainConfig train_config_from(const ConfigFile& cfg, const std::string& section) {
  std::string p;
  for (const auto& k : cfg.keys()) {
    if (k.rfind(section + ".", 0) == 0) p = section + ".";
  }
  static const std::set<std::string> allowed{
      "learning_rate", "warmup_fraction", "batch_size", "epochs",      "eval_every",
      "eval_until",    "seed",            "weight_decay", "beta1",     "beta2",
      "adam_eps",      "hidden",          "use_pi"};
  if (!p.empty()) cfg.reject_unknown(section, allowed);
  TrainConfig c;
  c.learning_rate = cfg.get_double(p + "learning_rate", c.learning_rate);
  c.warmup_fraction = cfg.get_double(p + "warmup_fraction", c.warmup_fraction);
  c.batch_size = cfg.get_size(p + "batch_size", c.batch_size);
  c.epochs = cfg.get_size(p + "epochs", c.epochs);
  c.eval_every = cfg.get_size(p + "eval_every", c.eval_every);
  c.eval_until = cfg.get_size(p + "eval_until", c.eval_until);
  c.seed = static_cast<std::uint64_t>(cfg.get_int(p + "seed", static_cast<std::int64_t>(c.seed)));
  c.adam.weight_decay = cfg.get_double(p + "weight_decay", c.adam.weight_decay);
  c.adam.beta1 = cfg.get_double(p + "beta1", c.adam.beta1);
  c.adam.beta2 = cfg.get_double(p + "beta2", c.adam.beta2);
  c.adam.eps = cfg.get_double(p + "adam_eps", c.adam.eps);
  c.hidden = cfg.get_size(p + "hidden", c.hidden);
  c.use_pi = cfg.get_bool(p + "use_pi", c.use_pi);
  c.validate();
  return c;
}

TrainResult tag_train(const fs::path& store, const fs::path& features, const fs::path& labels,
                      const TrainConfig& config, const fs::path& out, const fs::path& history_csv,
                      bool verbose) {
  const auto ds = load_datastore(store);
  const auto table = load_features(features);
  const auto records = load_labels(labels);
  const auto corpus = build_tagger_corpus(ds, table, &records);
  TrainProgress progress;
  if (verbose) {
    progress = [](const EvalPoint& p) {
      std::fprintf(stderr, "step %zu  loss %.5f  val_f1 %.4f\n", p.step, p.mean_loss, p.val_f1);
    };
  }
  auto result = train_tagger(corpus, config, progress);
  save_checkpoint(result.model, out);
  if (!history_csv.empty()) {
    std::ofstream h(history_csv, std::ios::binary | std::ios::trunc);
    if (!h) throw IoError("cannot open for writing: " + history_csv.string());
    h << "step,mean_loss,val_f1\n";
    for (const auto& p : result.history) {
      h << p.step << ',' << fmt(p.mean_loss) << ',' << fmt(p.val_f1) << '\n';
    }
  }
  return result;
}

std::vector<PredictionRecord> tag_predict(const fs::path& ckpt, const fs::path& store,
                                          const fs::path& features, const fs::path& labels,
                                          const std::string& split, const fs::path& out) {
  const auto model = load_checkpoint(ckpt);
  const auto ds = load_datastore(store);
  const auto table = load_features(features);
  std::vector<LabelRecord> records;
  if (!labels.empty()) records = load_labels(labels);
  const auto corpus = build_tagger_corpus(ds, table, labels.empty() ? nullptr : &records);
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < corpus.examples.size(); ++i) {
    if (split.empty() || corpus.examples[i].split == split) idx.push_back(i);
  }
  if (idx.empty()) throw SchemaError("no utterances to predict (split '" + split + "')");
  auto records_out = predict_records(model, corpus, idx);
  save_predictions(records_out, out);
  return records_out;
}

EvalReport evaluate(const std::vector<PredictionRecord>& preds,
                    const std::vector<LabelRecord>& gold, const std::string& split) {
  std::map<std::string, const PredictionRecord*> by_id;
  for (const auto& p : preds) {
    if (!by_id.emplace(p.utterance_id, &p).second) {
      throw SchemaError("duplicate prediction for utterance " + p.utterance_id);
    }
  }
  std::set<std::string> gold_ids;
  EvalReport rep;
  std::vector<std::string> all_pred, all_gold;
  for (const auto& g : gold) {
    if (!split.empty() && g.split != split) continue;
    gold_ids.insert(g.utterance_id);
    if (g.word_tags.empty()) throw SchemaError("gold utterance " + g.utterance_id + " has no tags");
    UtteranceDiff d;
    d.utterance_id = g.utterance_id;
    const auto gold_phrases = decode_bio(g.words, g.word_tags);
    std::vector<std::string> pred_phrases;
    if (const auto it = by_id.find(g.utterance_id); it != by_id.end()) {
      const auto& p = *it->second;
      pred_phrases = !p.phrases.empty() || p.tags.empty()
                         ? p.phrases
                         : decode_bio(p.tokens, p.tags, p.word_ids);
    }
    all_gold.insert(all_gold.end(), gold_phrases.begin(), gold_phrases.end());
    all_pred.insert(all_pred.end(), pred_phrases.begin(), pred_phrases.end());
    const auto gs = normalize_dedup(gold_phrases);
    const auto ps = normalize_dedup(pred_phrases);
    d.gold.assign(gs.begin(), gs.end());
    d.pred.assign(ps.begin(), ps.end());
    for (const auto& p : ps) (gs.count(p) ? d.true_positive : d.false_positive).push_back(p);
    for (const auto& g2 : gs) {
      if (!ps.count(g2)) d.false_negative.push_back(g2);
    }
    rep.diffs.push_back(std::move(d));
  }
  for (const auto& p : preds) {
    if (!gold_ids.count(p.utterance_id) && split.empty()) {
      throw SchemaError("prediction for unknown utterance " + p.utterance_id);
    }
  }
  rep.utterances = rep.diffs.size();
  rep.score = phrasal_prf(normalize_dedup(all_pred), normalize_dedup(all_gold));
  return rep;
}

EvalReport eval(const fs::path& pred, const fs::path& gold, const std::string& split,
                const fs::path& out) {
  auto rep = evaluate(load_predictions(pred), load_labels(gold), split);
  save_eval_report(rep, out);
  return rep;
}

void save_eval_report(const EvalReport& rep, const fs::path& path) {
  ordered_json j;
  j["tp"] = rep.score.tp;
  j["fp"] = rep.score.fp;
  j["fn"] = rep.score.fn;
  j["precision"] = rep.score.precision;
  j["recall"] = rep.score.recall;
  j["f1"] = rep.score.f1;
  j["utterances"] = rep.utterances;
  ordered_json diffs = ordered_json::array();
  for (const auto& d : rep.diffs) {
    ordered_json e;
    e["utterance_id"] = d.utterance_id;
    e["gold"] = d.gold;
    e["pred"] = d.pred;
    e["true_positive"] = d.true_positive;
    e["false_positive"] = d.false_positive;
    e["false_negative"] = d.false_negative;
    diffs.push_back(std::move(e));
  }
  j["per_utterance"] = std::move(diffs);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << j.dump(1) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

EvalReport load_eval_report(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  EvalReport rep;
  try {
    const auto j = json::parse(in);
    rep.score.tp = j.at("tp").get<std::int64_t>();
    rep.score.fp = j.at("fp").get<std::int64_t>();
    rep.score.fn = j.at("fn").get<std::int64_t>();
    rep.score.precision = j.at("precision").get<double>();
    rep.score.recall = j.at("recall").get<double>();
    rep.score.f1 = j.at("f1").get<double>();
    rep.utterances = j.value("utterances", std::size_t{0});
    for (const auto& e : j.value("per_utterance", json::array())) {
      UtteranceDiff d;
      d.utterance_id = e.at("utterance_id").get<std::string>();
      d.gold = e.value("gold", std::vector<std::string>{});
      d.pred = e.value("pred", std::vector<std::string>{});
      d.true_positive = e.value("true_positive", std::vector<std::string>{});
      d.false_positive = e.value("false_positive", std::vector<std::string>{});
      d.false_negative = e.value("false_negative", std::vector<std::string>{});
      rep.diffs.push_back(std::move(d));
    }
  } catch (const json::exception& e) {
    throw SchemaError("bad score file " + path.string() + ": " + e.what());
  }
  return rep;
}

void report(const std::vector<std::pair<std::string, fs::path>>& scores, const fs::path& out_csv,
            const fs::path& diff_md, std::size_t max_examples) {
  if (scores.empty()) throw ParameterError("report needs at least one score file");
  std::vector<EvalReport> reps;
  for (const auto& [name, path] : scores) reps.push_back(load_eval_report(path));

  std::ofstream csv(out_csv, std::ios::binary | std::ios::trunc);
  if (!csv) throw IoError("cannot open for writing: " + out_csv.string());
  csv << "system,tp,fp,fn,precision,recall,f1\n";
  double sp = 0, sr = 0, sf = 0;
  for (std::size_t i = 0; i < reps.size(); ++i) {
    const auto& s = reps[i].score;
    csv << scores[i].first << ',' << s.tp << ',' << s.fp << ',' << s.fn << ',' << fmt(s.precision)
        << ',' << fmt(s.recall) << ',' << fmt(s.f1) << '\n';
    sp += s.precision;
    sr += s.recall;
    sf += s.f1;
  }
  const double n = static_cast<double>(reps.size());
  csv << "macro,,,," << fmt(sp / n) << ',' << fmt(sr / n) << ',' << fmt(sf / n) << '\n';
  if (!csv) throw IoError("write failed: " + out_csv.string());

  if (diff_md.empty()) return;
  std::ofstream md(diff_md, std::ios::binary | std::ios::trunc);
  if (!md) throw IoError("cannot open for writing: " + diff_md.string());
  std::vector<std::map<std::string, const UtteranceDiff*>> by_id(reps.size());
  for (std::size_t i = 0; i < reps.size(); ++i) {
    for (const auto& d : reps[i].diffs) by_id[i][d.utterance_id] = &d;
  }
  auto cell = [](const UtteranceDiff* d) {
    if (!d) return std::string("(missing)");
    std::string s;
    for (const auto& p : d->true_positive) s += (s.empty() ? "" : "; ") + p + " [TP]";
    for (const auto& p : d->false_positive) s += (s.empty() ? "" : "; ") + p + " [FP]";
    return s.empty() ? std::string("-") : s;
  };
  md << "| utterance | gold |";
  for (const auto& [name, path] : scores) md << ' ' << name << " |";
  md << "\n|---|---|";
  for (std::size_t i = 0; i < scores.size(); ++i) md << "---|";
  md << '\n';
  std::size_t shown = 0;
  for (const auto& d0 : reps[0].diffs) {
    if (shown >= max_examples) break;
    bool differs = false;
    for (std::size_t i = 1; i < reps.size(); ++i) {
      const auto it = by_id[i].find(d0.utterance_id);
      if (it == by_id[i].end() || it->second->pred != d0.pred) differs = true;
    }
    if (reps.size() > 1 && !differs) continue;
    std::string gold;
    for (const auto& g : d0.gold) gold += (gold.empty() ? "" : "; ") + g;
    md << "| " << d0.utterance_id << " | " << (gold.empty() ? "-" : gold) << " |";
    for (std::size_t i = 0; i < reps.size(); ++i) {
      const auto it = by_id[i].find(d0.utterance_id);
      md << ' ' << cell(it == by_id[i].end() ? nullptr : it->second) << " |";
    }
    md << '\n';
    ++shown;
  }
  if (!md) throw IoError("write failed: " + diff_md.string());
}

SynthOutput synth(const SynthSpec& spec, const fs::path& out_dir, unsigned threads) {
  auto out = generate_synth(spec, threads);
  write_synth(out, out_dir);
  return out;
}

}  // namespace topo::stages
