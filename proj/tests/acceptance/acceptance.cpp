// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
// Runs in ctest; the end-to-end and determinism checks write under the
// current directory (acceptance-e2e/, acceptance-det-*/).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "support/grad_check.hpp"
#include "support/oracles.hpp"
#include "topo/error.hpp"
#include "topo/features.hpp"
#include "topo/knn.hpp"
#include "topo/persistence.hpp"
#include "topo/phrasal.hpp"
#include "topo/pipeline.hpp"
#include "topo/stages.hpp"
#include "topo/stats.hpp"
#include "topo/synth.hpp"
#include "topo/tagger.hpp"

using namespace topo;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

PersistenceDiagram random_diagram(std::mt19937_64& rng, std::size_t max_pairs, int degree = 0) {
  std::uniform_int_distribution<std::size_t> count(0, max_pairs);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PersistenceDiagram d;
  d.degree = degree;
  const auto m = count(rng);
  for (std::size_t i = 0; i < m; ++i) {
    const double b = 0.5 * u(rng);
    d.pairs.push_back({b, b + 0.5 * u(rng)});
  }
  std::sort(d.pairs.begin(), d.pairs.end());
  return d;
}

Outcome persistence_oracle() {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<std::size_t> npts(1, 12), dims(2, 8);
  int mismatches = 0;
  const auto t0 = Clock::now();
  for (int t = 0; t < 500; ++t) {
    const auto dm = oracle::random_cosine_matrix(npts(rng), dims(rng), rng);
    const auto want = vr_persistence_oracle(dm, 1);
    const auto h0 = vr_persistence_h0(dm);
    const auto h1 = vr_persistence_h1(dm);
    const bool ok = oracle::sorted_pairs(h0) == oracle::sorted_pairs(want[0]) &&
                    oracle::sorted_pairs(h1) == oracle::sorted_pairs(want[1]) &&
                    h0.essential_count == want[0].essential_count &&
                    h1.essential_count == want[1].essential_count;
    mismatches += ok ? 0 : 1;
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < 60.0,
          fmt("500 clouds of <=12 points, %d mismatches, %.2f s (limit 60 s)", mismatches, secs)};
}

Outcome h0_is_mst() {
  std::mt19937_64 rng(202);
  std::uniform_int_distribution<std::size_t> npts(2, 50), dims(2, 16);
  int mismatches = 0;
  for (int t = 0; t < 500; ++t) {
    const auto dm = oracle::random_cosine_matrix(npts(rng), dims(rng), rng);
    std::vector<double> bars;
    for (const auto& p : vr_persistence_h0(dm).pairs) bars.push_back(p.death - p.birth);
    std::sort(bars.begin(), bars.end());
    mismatches += bars == oracle::mst_weights(dm) ? 0 : 1;
  }
  return {mismatches == 0, fmt("500 clouds of <=50 points, %d mismatches (exact)", mismatches)};
}

Outcome h1_square() {
  const double s = std::numbers::sqrt2;
  const DistanceMatrix dm(4, {0, 1, s, 1, 1, 0, 1, s, s, 1, 0, 1, 1, s, 1, 0});
  const auto h1 = vr_persistence_h1(dm);
  if (h1.pairs.size() != 1) return {false, fmt("%zu pairs, want 1", h1.pairs.size())};
  const double eb = std::abs(h1.pairs[0].birth - 1.0), ed = std::abs(h1.pairs[0].death - s);
  return {eb <= 1e-12 && ed <= 1e-12,
          fmt("(%.17g, %.17g), |err| %.1e / %.1e (tol 1e-12)", h1.pairs[0].birth,
              h1.pairs[0].death, eb, ed)};
}

Outcome knn_exact() {
  std::mt19937_64 rng(303);
  const std::size_t dim = 64, rows = 2000;
  auto raw = oracle::random_unit_cloud(rows, dim, rng);
  // a few exact duplicates so the index tie-break is exercised
  for (std::size_t r = 0; r < 40; ++r) {
    std::copy_n(raw.begin() + static_cast<std::ptrdiff_t>(r * dim), dim,
                raw.begin() + static_cast<std::ptrdiff_t>((rows - 1 - r) * dim));
  }
  std::vector<TokenMeta> meta(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    meta[i].utterance_id = "u" + std::to_string(i / 10);
    meta[i].position = static_cast<std::int64_t>(i % 10);
  }
  const auto ds = build_datastore(raw, dim, meta);
  auto qraw = oracle::random_unit_cloud(100, dim, rng);
  std::copy_n(ds.row(5).begin(), dim, qraw.begin());  // one query that is a store row
  const QueryMatrix q{qraw, dim};
  const auto want = oracle::brute_knn(ds, q, 1024);
  std::string detail = "100 queries x 2000 rows x dim 64, k 1024:";
  bool ok = true;
  for (unsigned threads : {1u, 4u, 8u}) {
    KnnOptions o;
    o.threads = threads;
    const bool same = exact_knn(ds, q, 1024, o) == want;
    ok = ok && same;
    detail += fmt(" %u thr %s;", threads, same ? "bit-exact" : "MISMATCH");
  }
  return {ok, detail};
}

Outcome wasserstein() {
  std::mt19937_64 rng(404);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const auto d = random_diagram(rng, 8);
    worst = std::max(worst, std::abs(wasserstein_norm(d) - oracle::w1_to_empty(d)));
  }
  PersistenceDiagram unit;
  unit.pairs = {{0.0, 1.0}};
  const double w = wasserstein_norm(unit);
  const double e = std::abs(w - 0.7071067);
  return {worst <= 1e-9 && e <= 1e-7,
          fmt("100 diagrams max |W - Hungarian| %.1e (tol 1e-9); {(0,1)} -> %.10f (tol 1e-7)",
              worst, w)};
}

Outcome persistence_image_check() {
  const PersistenceImageParams p;  // sigma 0.01, 100 bins, n 128
  PersistenceDiagram one;
  one.pairs = {{0.0, 0.505}};
  const auto img = persistence_image(one, p);
  const double peak = 0.505 / 12800.0;
  double formula_err = 0.0;
  for (std::size_t j = 0; j < img.size(); ++j) {
    const double c = (static_cast<double>(j) + 0.5) / 100.0;
    const double direct = 0.505 / 12800.0 * std::exp(-(0.505 - c) * (0.505 - c) / (2 * 0.01 * 0.01));
    formula_err = std::max(formula_err, std::abs(img[j] - direct));
  }
  const double peak_err = std::abs(img[50] - peak);
  const bool is_max = img[50] == *std::max_element(img.begin(), img.end());

  std::mt19937_64 rng(505);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double lin_err = 0.0;
  bool zero_ok = true;
  for (int t = 0; t < 100; ++t) {
    const auto a = random_diagram(rng, 8), b = random_diagram(rng, 8);
    auto ab = a;
    ab.pairs.insert(ab.pairs.end(), b.pairs.begin(), b.pairs.end());
    const auto ia = persistence_image(a, p), ib = persistence_image(b, p),
               iab = persistence_image(ab, p);
    auto aa = a;
    aa.pairs.insert(aa.pairs.end(), a.pairs.begin(), a.pairs.end());
    const auto iaa = persistence_image(aa, p);
    for (std::size_t j = 0; j < ia.size(); ++j) {
      lin_err = std::max({lin_err, std::abs(iab[j] - (ia[j] + ib[j])), std::abs(iaa[j] - 2 * ia[j])});
    }
    // zero-persistence pairs carry no mass
    PersistenceDiagram zeros;
    auto padded = a;
    for (int k = 0; k < 4; ++k) {
      const double x = u(rng);
      zeros.pairs.push_back({x, x});
      padded.pairs.push_back({x, x});
    }
    const auto iz = persistence_image(zeros, p);
    zero_ok = zero_ok && std::all_of(iz.begin(), iz.end(), [](double v) { return v == 0.0; }) &&
              persistence_image(padded, p) == ia;
  }
  return {peak_err <= 1e-9 && formula_err <= 1e-9 && is_max && lin_err <= 1e-15 && zero_ok,
          fmt("peak %.12e vs %.12e (|err| %.1e, tol 1e-9), max bin err vs formula %.1e; "
              "100 diagrams: linearity err %.1e, zero-mass %s",
              img[50], peak, peak_err, formula_err, lin_err, zero_ok ? "ok" : "VIOLATED")};
}

Outcome kendall() {
  std::mt19937_64 rng(606);
  std::uniform_int_distribution<std::size_t> len(2, 500);
  int mismatches = 0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = len(rng);
    std::uniform_int_distribution<int> lx(0, 1 + t % 20), ly(0, 1 + (t * 7) % 25);
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = lx(rng);
      y[i] = ly(rng);
    }
    const auto want = oracle::kendall_pairs(x, y);
    bool ok = kendall_counts(x, y) == want;
    if (want.ties_x < want.n0 && want.ties_y < want.n0) {
      ok = ok && kendall_tau_b(x, y).tau == oracle::tau_b_from_counts(want);
    }
    mismatches += ok ? 0 : 1;
  }
  const double tau = kendall_tau_b(std::vector<double>{1, 2, 3, 4}, std::vector<double>{1, 3, 2, 4}).tau;
  const double e = std::abs(tau - 2.0 / 3.0);
  return {mismatches == 0 && e <= 1e-15,
          fmt("200 tied sequences (n<=500) vs pair counting: %d mismatches; "
              "[1,2,3,4]/[1,3,2,4] -> %.17g",
              mismatches, tau)};
}

Outcome gradients() {
  std::mt19937_64 rng(707);
  double worst = 0.0;
  for (int d = 0; d < 20; ++d) worst = std::max(worst, oracle::gradient_relative_error(rng));

  // one step from w=1, g=1, zero moments: w - lr * 1/(1 + eps)
  AdamWHyper hyper{0.9, 0.999, 1e-8, 0.0};
  std::vector<double> w{1.0}, g{1.0}, m{0.0}, v{0.0};
  adamw_update<double>(w, g, m, v, 1, 0.1, hyper, true);
  const double want = 1.0 - 0.1 / (1.0 + 1e-8);
  // with decay 0.01: w*(1 - lr*wd) first
  hyper.weight_decay = 0.01;
  std::vector<double> w2{2.0}, g2{-0.5}, m2{0.0}, v2{0.0};
  adamw_update<double>(w2, g2, m2, v2, 1, 0.1, hyper, true);
  const double want2 = 2.0 * (1 - 0.1 * 0.01) + 0.1 * 0.5 / (0.5 + 1e-8);
  const double e1 = std::abs(w[0] - want), e2 = std::abs(w2[0] - want2);
  return {worst < 1e-4 && e1 <= 1e-9 && e2 <= 1e-9,
          fmt("20 draws max rel err %.2e (tol 1e-4); AdamW step |err| %.1e, %.1e (tol 1e-9)", worst,
              e1, e2)};
}

Outcome water_seed() {
  auto label = [](std::string id, std::vector<std::string> words, std::string tags) {
    LabelRecord r;
    r.utterance_id = std::move(id);
    r.split = "test";
    r.words = std::move(words);
    for (char c : tags) r.word_tags.push_back(parse_tag(std::string(1, c)));
    r.subtoken_counts.assign(r.words.size(), 1);
    return r;
  };
  auto pred = [](std::string id, std::vector<std::string> tokens, std::string tags) {
    PredictionRecord p;
    p.utterance_id = std::move(id);
    p.tokens = std::move(tokens);
    for (std::size_t i = 0; i < p.tokens.size(); ++i) p.word_ids.push_back(static_cast<std::int64_t>(i));
    for (char c : tags) p.tags.push_back(parse_tag(std::string(1, c)));
    return p;
  };
  const std::vector<LabelRecord> gold{
      label("u1", {"the", "water", "seed", "concert", "tonight"}, "OBIIO"),
      label("u2", {"buy", "water", "seed"}, "OBI"),
      label("u3", {"the", "water", "seed", "event"}, "OOOO")};
  const std::vector<PredictionRecord> preds{
      pred("u1", {"the", "water", "seed", "concert", "tonight"}, "BIIOO"),
      pred("u2", {"buy", "Water", "Seed"}, "OBI"),
      pred("u3", {"the", "water", "seed", "event"}, "OBII")};
  const auto s = stages::evaluate(preds, gold, "test").score;
  const bool ok = s.tp == 1 && s.fp == 2 && s.fn == 1 && std::abs(s.precision - 1.0 / 3) <= 1e-15 &&
                  std::abs(s.recall - 0.5) <= 1e-15 && std::abs(s.f1 - 0.4) <= 1e-15;
  return {ok, fmt("tp %lld fp %lld fn %lld, P %.6f R %.6f F1 %.6f", static_cast<long long>(s.tp),
                  static_cast<long long>(s.fp), static_cast<long long>(s.fn), s.precision, s.recall,
                  s.f1)};
}

Outcome end_to_end() {
  const fs::path work = fs::current_path() / "acceptance-e2e";
  fs::remove_all(work);
  auto cfg = PipelineConfig::load(fs::path(TOPO_SOURCE_DIR) / "fixtures" / "synth20k.toml");
  cfg.work_dir = work;
  PipelineOptions opts;
  opts.force = true;
  opts.cache_dir = work;
  const auto t0 = Clock::now();
  run_pipeline(cfg, opts);
  const double pipeline_secs = seconds_since(t0);

  const auto store = work / "synth" / "store.tds";
  const auto labels = work / "synth" / "labels.jsonl";
  const auto feats = work / "features.tfe";
  std::vector<double> topo_f1{stages::load_eval_report(work / "topo.score.json").score.f1};
  std::vector<double> base_f1{stages::load_eval_report(work / "baseline.score.json").score.f1};

  // Seeds 2..5 retrain both models on the same store and features.
  const fs::path seeds_dir = work / "seeds";
  fs::create_directories(seeds_dir);
  for (std::uint64_t seed = 2; seed <= 5; ++seed) {
    for (bool use_pi : {true, false}) {
      TrainConfig tc = cfg.train;
      tc.seed = seed;
      tc.use_pi = use_pi;
      const std::string stem = (use_pi ? "topo" : "baseline") + std::string(".") + std::to_string(seed);
      const auto ckpt = seeds_dir / (stem + ".ckpt");
      const auto preds = seeds_dir / (stem + ".preds.jsonl");
      stages::tag_train(store, feats, labels, tc, ckpt, seeds_dir / (stem + ".history.csv"), false);
      stages::tag_predict(ckpt, store, feats, labels, cfg.eval_split, preds);
      const double f1 =
          stages::eval(preds, labels, cfg.eval_split, seeds_dir / (stem + ".score.json")).score.f1;
      (use_pi ? topo_f1 : base_f1).push_back(f1);
    }
  }
  double mt = 0, mb = 0;
  std::string per_seed;
  for (std::size_t i = 0; i < topo_f1.size(); ++i) {
    mt += topo_f1[i] / 5;
    mb += base_f1[i] / 5;
    per_seed += fmt(" %.3f/%.3f", topo_f1[i], base_f1[i]);
  }
  const double gap = 100 * (mt - mb);
  return {gap >= 5.0 && pipeline_secs < 900.0,
          fmt("test F1 topo/baseline per seed:%s; mean %.2f vs %.2f, gap %.2f points (need >= 5); "
              "full pipeline %.0f s (limit 900 s)",
              per_seed.c_str(), 100 * mt, 100 * mb, gap, pipeline_secs)};
}

Outcome performance() {
  SynthSpec spec;
  spec.seed = 1;
  const auto synth = generate_synth(spec);
  const auto& ds = synth.store;
  FeatureConfig fc;
  fc.threads = 1;
  const QueryMatrix all = as_queries(ds);
  const QueryMatrix q{all.data.subspan(0, 1000 * ds.dim()), ds.dim()};
  const auto cache = exact_knn(ds, q, static_cast<std::uint32_t>(fc.required_depth()));

  std::vector<double> times;
  const auto t0 = Clock::now();
  for (std::size_t i = 0; i < q.count(); ++i) {
    const auto t = Clock::now();
    const auto row = compute_feature_row(ds, cache, q, i, fc);
    times.push_back(seconds_since(t));
    if (row.pi0.size() != fc.image.resolution) throw NumericsError("bad row");
  }
  const double total = seconds_since(t0);
  std::sort(times.begin(), times.end());
  const double median = 0.5 * (times[499] + times[500]);
  return {total < 300.0 && median < 1.0,
          fmt("1000 neighborhoods of n=128, 1 thread: total %.1f s (limit 300 s), median %.1f ms "
              "(limit 1000 ms), max %.1f ms",
              total, 1e3 * median, 1e3 * times.back())};
}

std::map<std::string, std::string> hash_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = sha256_file(e.path());
  }
  return out;
}

Outcome determinism() {
  auto cfg = PipelineConfig::load(fs::path(TOPO_SOURCE_DIR) / "fixtures" / "pipeline200.toml");
  auto run = [&](const fs::path& dir, unsigned threads) {
    cfg.work_dir = dir;
    cfg.threads = threads;
    PipelineOptions opts;
    opts.force = true;
    opts.cache_dir = dir;
    run_pipeline(cfg, opts);
    return hash_tree(dir);
  };
  const fs::path a = fs::current_path() / "acceptance-det-a";
  const fs::path b = fs::current_path() / "acceptance-det-b";
  fs::remove_all(a);
  fs::remove_all(b);
  const auto first = run(a, 1);
  const auto second = run(a, 4);
  auto other = run(b, 0);

  std::vector<std::string> diffs;
  if (first != second) diffs.push_back("rerun in place");
  // Manifest entries are keyed by path, so only artifacts compare across dirs.
  auto artifacts = first;
  artifacts.erase("manifest.json");
  other.erase("manifest.json");
  if (artifacts != other) {
    for (const auto& [name, h] : artifacts) {
      const auto it = other.find(name);
      if (it == other.end() || it->second != h) diffs.push_back(name);
    }
  }
  std::string detail = fmt("%zu files; reruns with 1/4/all threads in two directories: ", first.size());
  if (diffs.empty()) return {true, detail + "byte-identical"};
  for (const auto& d : diffs) detail += d + " ";
  return {false, detail + "differ"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"persistence-oracle-equivalence", persistence_oracle},
      {"h0-equals-mst", h0_is_mst},
      {"h1-square-fixture", h1_square},
      {"knn-exactness", knn_exact},
      {"wasserstein-norm", wasserstein},
      {"persistence-image", persistence_image_check},
      {"kendall-tau-b", kendall},
      {"tagger-gradients-adamw", gradients},
      {"phrasal-water-seed", water_seed},
      {"end-to-end-synthetic", end_to_end},
      {"performance-envelope", performance},
      {"determinism", determinism},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    const auto t0 = Clock::now();
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::printf("%s %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
