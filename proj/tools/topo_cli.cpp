// topo: command-line front end. Every subcommand maps onto one function in
// topo/stages.hpp; `pipeline` chains them with content-hash caching.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "topo/error.hpp"
#include "topo/pipeline.hpp"
#include "topo/stages.hpp"

namespace fs = std::filesystem;
using namespace topo;

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (c != ' ') {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Local topological features and BIO term tagging"};
  app.require_subcommand(1);
  unsigned threads = 0;
  app.add_option("--threads", threads, "Worker threads for every stage (0 = all cores)");

  // store build
  auto* store_cmd = app.add_subcommand("store", "Datastore operations");
  store_cmd->require_subcommand(1);
  auto* build_cmd = store_cmd->add_subcommand("build", "Build a datastore from raw vectors");
  stages::StoreBuildArgs build;
  bool no_normalize = false, keep_padding = false;
  build_cmd->add_option("--vectors", build.vectors, ".npy (float32, 2-D) or raw float32 file")
      ->required();
  build_cmd->add_option("--dim", build.dim, "Row width of a headerless vector file");
  build_cmd->add_option("--meta", build.meta, "Token metadata, JSON lines, one per row")->required();
  build_cmd->add_option("--out", build.out, "Output store path")->required();
  build_cmd->add_flag("--no-normalize", no_normalize, "Keep vectors as given");
  build_cmd->add_flag("--keep-padding", keep_padding, "Keep rows flagged as padding");

  // knn
  auto* knn_cmd = app.add_subcommand("knn", "Exact k-nearest-neighbor cache");
  fs::path knn_store, knn_queries, knn_out;
  std::uint32_t knn_k = kDefaultCacheDepth;
  knn_cmd->add_option("--store", knn_store)->required();
  knn_cmd->add_option("--queries", knn_queries, "Query store (default: the store itself)");
  knn_cmd->add_option("--k", knn_k, "Neighbors per query")->capture_default_str();
  knn_cmd->add_option("--out", knn_out)->required();

  // features
  auto* feat_cmd = app.add_subcommand("features", "Codensity, Wasserstein norms, persistence images");
  fs::path feat_store, feat_cache, feat_queries, feat_out, feat_csv;
  FeatureConfig fc;
  std::string scales = "1,127,511";
  feat_cmd->add_option("--store", feat_store)->required();
  feat_cmd->add_option("--cache", feat_cache)->required();
  feat_cmd->add_option("--queries", feat_queries, "Query store (default: the store itself)");
  feat_cmd->add_option("--out", feat_out)->required();
  feat_cmd->add_option("--csv", feat_csv, "Also export CSV");
  feat_cmd->add_option("--n", fc.neighborhood_n, "Neighborhood size")->capture_default_str();
  feat_cmd->add_option("--scales", scales, "Codensity scales")->capture_default_str();
  feat_cmd->add_option("--bandwidth", fc.image.bandwidth)->capture_default_str();
  feat_cmd->add_option("--resolution", fc.image.resolution)->capture_default_str();
  feat_cmd->add_flag("--pi1", fc.with_pi1, "Also compute degree-1 persistence images");

  // correlate
  auto* corr_cmd = app.add_subcommand("correlate", "Pairwise Kendall tau-b between CSV columns");
  fs::path corr_in, corr_out;
  std::string corr_cols;
  corr_cmd->add_option("--features", corr_in, "Feature CSV")->required();
  corr_cmd->add_option("--columns", corr_cols, "Comma-separated column names")->required();
  corr_cmd->add_option("--out", corr_out)->required();

  // tag train / tag predict
  auto* tag_cmd = app.add_subcommand("tag", "Fusion tagger");
  tag_cmd->require_subcommand(1);
  auto* train_cmd = tag_cmd->add_subcommand("train", "Train and keep the best validation checkpoint");
  fs::path tr_store, tr_feats, tr_labels, tr_config, tr_out, tr_history;
  std::int64_t tr_seed = -1;
  bool tr_baseline = false, tr_quiet = false;
  train_cmd->add_option("--store", tr_store)->required();
  train_cmd->add_option("--features", tr_feats)->required();
  train_cmd->add_option("--labels", tr_labels)->required();
  train_cmd->add_option("--config", tr_config, "TOML file with a [train] section");
  train_cmd->add_option("--out", tr_out)->required();
  train_cmd->add_option("--history", tr_history, "CSV of validation evaluations");
  train_cmd->add_option("--seed", tr_seed, "Overrides the config seed");
  train_cmd->add_flag("--baseline", tr_baseline, "Zero the PI input (LM-only baseline)");
  train_cmd->add_flag("--quiet", tr_quiet);

  auto* pred_cmd = tag_cmd->add_subcommand("predict", "Tag utterances with a checkpoint");
  fs::path pr_ckpt, pr_store, pr_feats, pr_labels, pr_out;
  std::string pr_split;
  pred_cmd->add_option("--ckpt", pr_ckpt)->required();
  pred_cmd->add_option("--store", pr_store)->required();
  pred_cmd->add_option("--features", pr_feats)->required();
  pred_cmd->add_option("--labels", pr_labels, "Label file selecting utterances (optional)");
  pred_cmd->add_option("--split", pr_split, "Only utterances of this split");
  pred_cmd->add_option("--out", pr_out)->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Phrasal precision, recall and F1");
  fs::path ev_pred, ev_gold, ev_out;
  std::string ev_split;
  eval_cmd->add_option("--pred", ev_pred)->required();
  eval_cmd->add_option("--gold", ev_gold)->required();
  eval_cmd->add_option("--split", ev_split, "Only gold utterances of this split");
  eval_cmd->add_option("--out", ev_out)->required();

  // report
  auto* rep_cmd = app.add_subcommand("report", "Macro-average score files, diff systems");
  std::vector<std::string> rep_scores;
  fs::path rep_out, rep_diff;
  std::size_t rep_max = 20;
  rep_cmd->add_option("--scores", rep_scores, "score.json files, optionally name=path")
      ->required()
      ->delimiter(',');
  rep_cmd->add_option("--out", rep_out, "CSV summary")->required();
  rep_cmd->add_option("--diff", rep_diff, "Markdown side-by-side of disagreeing utterances");
  rep_cmd->add_option("--max-examples", rep_max)->capture_default_str();

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic fixture");
  fs::path synth_spec, synth_out;
  std::int64_t synth_seed = -1;
  synth_cmd->add_option("--spec", synth_spec, "TOML spec (defaults when omitted)");
  synth_cmd->add_option("--out", synth_out)->required();
  synth_cmd->add_option("--seed", synth_seed, "Overrides the spec seed");

  // pipeline
  auto* pipe_cmd = app.add_subcommand("pipeline", "Run every stage with content-hash caching");
  fs::path pipe_config;
  std::int64_t pipe_seed = -1;
  bool pipe_force = false, pipe_quiet = false;
  pipe_cmd->add_option("--config", pipe_config)->required();
  pipe_cmd->add_option("--seed", pipe_seed, "Overrides pipeline.seed");
  pipe_cmd->add_flag("--force", pipe_force, "Ignore the manifest and rerun everything");
  pipe_cmd->add_flag("--quiet", pipe_quiet);

  CLI11_PARSE(app, argc, argv);

  std::string failed_stage;
  try {
    if (build_cmd->parsed()) {
      build.options.normalize = !no_normalize;
      build.options.drop_padding = !keep_padding;
      const auto ds = stages::store_build(build);
      std::printf("store: %zu rows, dim %zu\n", ds.count(), ds.dim());
    } else if (knn_cmd->parsed()) {
      stages::knn(knn_store, knn_queries, knn_k, knn_out, threads);
    } else if (feat_cmd->parsed()) {
      fc.codensity_scales.clear();
      for (const auto& s : split_list(scales)) fc.codensity_scales.push_back(std::stoul(s));
      fc.image.neighborhood_n = fc.neighborhood_n;
      fc.threads = threads;
      stages::features(feat_store, feat_cache, feat_queries, fc, feat_out, feat_csv);
    } else if (corr_cmd->parsed()) {
      stages::correlate(corr_in, split_list(corr_cols), corr_out, threads);
    } else if (train_cmd->parsed()) {
      TrainConfig tc = tr_config.empty() ? TrainConfig{}
                                         : stages::train_config_from(ConfigFile::load(tr_config));
      if (tr_seed >= 0) tc.seed = static_cast<std::uint64_t>(tr_seed);
      if (tr_baseline) tc.use_pi = false;
      const auto r = stages::tag_train(tr_store, tr_feats, tr_labels, tc, tr_out, tr_history, !tr_quiet);
      std::printf("best validation F1 %.4f at step %llu of %zu\n", r.model.best_val_f1,
                  static_cast<unsigned long long>(r.model.best_step), r.total_steps);
    } else if (pred_cmd->parsed()) {
      const auto recs = stages::tag_predict(pr_ckpt, pr_store, pr_feats, pr_labels, pr_split, pr_out);
      std::printf("predicted %zu utterances\n", recs.size());
    } else if (eval_cmd->parsed()) {
      const auto r = stages::eval(ev_pred, ev_gold, ev_split, ev_out);
      std::printf("tp %lld fp %lld fn %lld  P %.4f R %.4f F1 %.4f\n",
                  static_cast<long long>(r.score.tp), static_cast<long long>(r.score.fp),
                  static_cast<long long>(r.score.fn), r.score.precision, r.score.recall,
                  r.score.f1);
    } else if (rep_cmd->parsed()) {
      std::vector<std::pair<std::string, fs::path>> named;
      for (const auto& s : rep_scores) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) {
          named.emplace_back(fs::path(s).stem().string(), s);
        } else {
          named.emplace_back(s.substr(0, eq), s.substr(eq + 1));
        }
      }
      stages::report(named, rep_out, rep_diff, rep_max);
    } else if (synth_cmd->parsed()) {
      SynthSpec spec = synth_spec.empty() ? SynthSpec{} : SynthSpec::from_config(ConfigFile::load(synth_spec));
      if (synth_seed >= 0) spec.seed = static_cast<std::uint64_t>(synth_seed);
      const auto out = stages::synth(spec, synth_out, threads);
      std::printf("synth: %zu tokens, %zu utterances -> %s\n", out.store.count(),
                  out.labels.size(), synth_out.string().c_str());
    } else if (pipe_cmd->parsed()) {
      auto cfg = PipelineConfig::load(pipe_config);
      if (pipe_seed >= 0) cfg.seed = static_cast<std::uint64_t>(pipe_seed);
      if (threads != 0) cfg.threads = threads;
      PipelineOptions opts;
      opts.force = pipe_force;
      opts.verbose = !pipe_quiet;
      const auto outcomes = run_pipeline(cfg, opts, &failed_stage);
      std::size_t ran = 0;
      for (const auto& o : outcomes) ran += o.ran ? 1 : 0;
      std::printf("pipeline: %zu of %zu stages ran\n", ran, outcomes.size());
    }
  } catch (const topo::Error& e) {
    if (!failed_stage.empty()) {
      std::fprintf(stderr, "topo: stage '%s' failed: %s\n", failed_stage.c_str(), e.what());
    } else {
      std::fprintf(stderr, "topo: %s\n", e.what());
    }
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "topo: unexpected error: %s\n", e.what());
    return 2;
  }
  return 0;
}
