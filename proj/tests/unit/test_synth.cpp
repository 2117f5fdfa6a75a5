#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "support/tmpdir.hpp"
#include "topo/error.hpp"
#include "topo/features.hpp"
#include "topo/synth.hpp"
#include "topo/tagger.hpp"

using namespace topo;
using testing_util::TempDir;

namespace {

// P(term value < background value), ties counted half.
double auc_lower(std::vector<double> term, std::vector<double> bg) {
  std::vector<std::pair<double, int>> all;
  for (double v : term) all.emplace_back(v, 1);
  for (double v : bg) all.emplace_back(v, 0);
  std::sort(all.begin(), all.end());
  double rank_sum = 0;  // ranks of term values, 1-based, ties averaged
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (all[k].second) rank_sum += avg;
    }
    i = j;
  }
  const double nt = static_cast<double>(term.size()), nb = static_cast<double>(bg.size());
  const double u = rank_sum - nt * (nt + 1) / 2;  // pairs with term > bg
  return 1.0 - u / (nt * nb);
}

double median(std::vector<double> v) {
  std::nth_element(v.begin(), v.begin() + static_cast<long>(v.size() / 2), v.end());
  return v[v.size() / 2];
}

SynthSpec small_spec() {
  SynthSpec s;
  s.utterances = 150;
  s.seed = 4;
  return s;
}

}  // namespace

TEST_SUITE("synth") {
  TEST_CASE("spec validation") {
    SynthSpec s;
    s.term_fraction = 1.0;
    CHECK_THROWS_AS(s.validate(), ParameterError);
    s = {};
    s.sigma_term = 0.6;
    CHECK_THROWS_AS(s.validate(), ParameterError);
    s = {};
    s.domains = 2;
    CHECK_THROWS_AS(s.validate(), ParameterError);

    const auto cfg = ConfigFile::parse("[synth]\nutterances = 40\nsigma_bg = 0.4\n");
    const auto parsed = SynthSpec::from_config(cfg);
    CHECK(parsed.utterances == 40);
    CHECK(parsed.sigma_bg == 0.4);
    CHECK_THROWS_AS(SynthSpec::from_config(ConfigFile::parse("[synth]\nbogus = 1\n")), ConfigError);
  }

  TEST_CASE("structure of a small fixture") {
    const auto out = generate_synth(small_spec(), 2);
    CHECK(out.store.count() == 150 * 10);
    CHECK(out.store.dim() == 32);
    CHECK(out.labels.size() == 150);
    for (std::size_t i = 0; i < out.store.count(); ++i) {
      double n2 = 0;
      for (float x : out.store.row(i)) n2 += double(x) * x;
      CHECK(std::abs(std::sqrt(n2) - 1.0) <= 1e-7);
    }
    std::size_t train = 0, val = 0, test = 0;
    for (const auto& r : out.labels) {
      train += r.split == "train";
      val += r.split == "validation";
      test += r.split == "test";
      std::size_t subtokens = 0;
      for (auto c : r.subtoken_counts) subtokens += c;
      CHECK(subtokens == 10);
      // IOB2: no I directly after O or at the start
      for (std::size_t w = 0; w < r.word_tags.size(); ++w) {
        if (r.word_tags[w] == Tag::I) CHECK((w > 0 && r.word_tags[w - 1] != Tag::O));
      }
    }
    CHECK(train == 90);
    CHECK(val == 30);
    CHECK(test == 30);

    // the labels line up with the store, so a tagger corpus can be built
    FeatureTable ft;
    ft.pi_width = 3;
    ft.rows.resize(out.store.count());
    for (auto& r : ft.rows) r.pi0.assign(3, 0.f);
    const auto corpus = build_tagger_corpus(out.store, ft, &out.labels);
    CHECK(corpus.examples.size() == 150);
  }

  TEST_CASE("same seed, same bytes; thread count does not matter") {
    TempDir a, b;
    write_synth(generate_synth(small_spec(), 1), a.path());
    write_synth(generate_synth(small_spec(), 4), b.path());
    for (const char* f : {"store.tds", "store.tds.meta.jsonl", "labels.jsonl"}) {
      CHECK(testing_util::slurp(a / f) == testing_util::slurp(b / f));
    }
    auto other = small_spec();
    other.seed = 5;
    TempDir c;
    write_synth(generate_synth(other, 1), c.path());
    CHECK(testing_util::slurp(a / "store.tds") != testing_util::slurp(c / "store.tds"));
  }

  TEST_CASE("default fixture: term share and codensity separation") {
    const auto out = generate_synth(SynthSpec{}, 0);
    REQUIRE(out.store.count() == 20000);
    std::size_t tagged = 0;
    for (const auto& m : out.store.meta()) tagged += m.gold_tag && *m.gold_tag != Tag::O;
    CHECK(std::abs(static_cast<double>(tagged) / 20000.0 - 0.3) <= 0.02);

    const auto cache = exact_knn(out.store, as_queries(out.store), 128);
    std::vector<double> term, bg;
    for (std::size_t i = 0; i < out.store.count(); ++i) {
      const double c = codensity(cache, i, 127);
      (out.store.meta(i).extra_columns.at("is_term") > 0.5 ? term : bg).push_back(c);
    }
    CHECK(auc_lower(term, bg) > 0.9);
    CHECK(median(term) < median(bg));
  }
}
