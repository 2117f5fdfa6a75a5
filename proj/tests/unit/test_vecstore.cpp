#include <cmath>
#include <cstring>
#include <random>

#include "doctest.h"
#include "support/tmpdir.hpp"
#include "topo/binary_io.hpp"
#include "topo/error.hpp"
#include "topo/vecstore.hpp"

using namespace topo;
using testing_util::TempDir;

namespace {

std::vector<TokenMeta> make_meta(std::size_t n) {
  std::vector<TokenMeta> meta(n);
  for (std::size_t i = 0; i < n; ++i) {
    meta[i].token_text = "tok" + std::to_string(i);
    meta[i].utterance_id = "u" + std::to_string(i / 4);
    meta[i].position = static_cast<std::int64_t>(i % 4);
    meta[i].word_index = static_cast<std::int64_t>(i % 4);
    meta[i].gold_tag = static_cast<Tag>(i % 3);
    meta[i].extra_columns["score"] = 0.25 * static_cast<double>(i);
  }
  return meta;
}

}  // namespace

TEST_SUITE("vecstore") {
  TEST_CASE("normalize_l2 examples") {
    const std::vector<float> a{3.f, 4.f};
    const auto n = normalize_l2(a);
    CHECK(n[0] == doctest::Approx(0.6).epsilon(1e-7));
    CHECK(n[1] == doctest::Approx(0.8).epsilon(1e-7));
    const std::vector<float> b{1.f, 0.f};
    CHECK(normalize_l2(b) == b);
    const std::vector<float> z{0.f, 0.f};
    CHECK_THROWS_AS(normalize_l2(z), NormalizationError);
  }

  TEST_CASE("normalization is idempotent") {
    std::mt19937_64 rng(7);
    std::normal_distribution<float> g;
    for (int t = 0; t < 100; ++t) {
      std::vector<float> v(17);
      for (auto& x : v) x = g(rng);
      const auto once = normalize_l2(v);
      const auto twice = normalize_l2(once);
      for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::abs(once[i] - twice[i]) <= 1e-7);
    }
  }

  TEST_CASE("build_datastore shapes and normalization") {
    const std::vector<float> raw{3, 4, 0, 0, 0, 5};
    auto ds = build_datastore(raw, 3, make_meta(2), {.normalize = false});
    CHECK(ds.count() == 2);
    CHECK(ds.dim() == 3);
    CHECK_FALSE(ds.normalized());
    CHECK_THROWS_AS(build_datastore(raw, 3, make_meta(3), {.normalize = false}), SchemaError);

    auto nds = build_datastore(raw, 3, make_meta(2));
    CHECK(nds.normalized());
    CHECK(nds.row(0)[0] == doctest::Approx(0.6));
    CHECK(nds.row(0)[1] == doctest::Approx(0.8));
    CHECK(nds.row(0)[2] == 0.f);
    CHECK(nds.row(1)[2] == 1.f);
  }

  TEST_CASE("padding rows are dropped by default") {
    const std::vector<float> raw{1, 0, 0, 1, 1, 1};
    auto meta = make_meta(3);
    meta[1].padding = true;
    CHECK(build_datastore(raw, 2, meta).count() == 2);
    CHECK(build_datastore(raw, 2, meta, {.normalize = true, .drop_padding = false}).count() == 3);
  }

  TEST_CASE("duplicate utterance positions are rejected") {
    auto meta = make_meta(2);
    meta[1].position = meta[0].position;
    const std::vector<float> raw{1, 0, 0, 1};
    CHECK_THROWS_AS(build_datastore(raw, 2, meta), SchemaError);
  }

  TEST_CASE("save/load roundtrip is bit exact and keeps order") {
    TempDir dir;
    std::mt19937_64 rng(3);
    std::normal_distribution<float> g;
    std::vector<float> raw(10 * 4);
    for (auto& x : raw) x = g(rng);
    const auto ds = build_datastore(raw, 4, make_meta(10));
    save_datastore(ds, dir / "s.tds");
    const auto back = load_datastore(dir / "s.tds");
    CHECK(back == ds);
    CHECK(std::memcmp(back.vectors().data(), ds.vectors().data(), raw.size() * 4) == 0);
    for (std::size_t i = 0; i < 10; ++i) CHECK(back.meta(i).token_text == "tok" + std::to_string(i));
  }

  TEST_CASE("corrupt store files") {
    TempDir dir;
    std::vector<float> raw(50 * 2, 1.f);
    const auto ds = build_datastore(raw, 2, make_meta(50));
    save_datastore(ds, dir / "s.tds");

    auto bytes = testing_util::slurp(dir / "s.tds");
    auto bad = bytes;
    bad[0] = 'X';
    testing_util::spit(dir / "s.tds", bad);
    CHECK_THROWS_AS(load_datastore(dir / "s.tds"), FormatError);

    // count field sits after magic and version
    auto wrong_count = bytes;
    const std::uint64_t hundred = 100;
    std::memcpy(wrong_count.data() + 8, &hundred, sizeof hundred);
    testing_util::spit(dir / "s.tds", wrong_count);
    CHECK_THROWS_AS(load_datastore(dir / "s.tds"), FormatError);

    CHECK_THROWS_AS(load_datastore(dir / "missing.tds"), IoError);
  }

  TEST_CASE("tag names") {
    CHECK(parse_tag("B-TERM") == Tag::B);
    CHECK(parse_tag("I") == Tag::I);
    CHECK(tag_name(Tag::O) == "O");
    CHECK_THROWS_AS(parse_tag("X"), SchemaError);
  }
}
