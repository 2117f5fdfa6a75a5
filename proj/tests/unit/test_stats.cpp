#include <cmath>
#include <random>

#include "doctest.h"
#include "support/oracles.hpp"
#include "support/tmpdir.hpp"
#include "topo/error.hpp"
#include "topo/stats.hpp"

using namespace topo;

namespace {

std::vector<double> tied_sequence(std::mt19937_64& rng, std::size_t n, int levels) {
  std::uniform_int_distribution<int> d(0, levels - 1);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

}  // namespace

TEST_SUITE("stats") {
  TEST_CASE("tau-b examples") {
    const std::vector<double> x{1, 2, 3};
    CHECK(kendall_tau_b(x, std::vector<double>{10, 20, 30}).tau == 1.0);
    CHECK(kendall_tau_b(x, std::vector<double>{3, 2, 1}).tau == -1.0);
    const auto r = kendall_tau_b(std::vector<double>{1, 2, 3, 4}, std::vector<double>{1, 3, 2, 4});
    CHECK(r.tau == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  }

  TEST_CASE("tau-b errors") {
    const std::vector<double> c{1, 1, 1}, x{1, 2, 3};
    CHECK_THROWS_AS(kendall_tau_b(c, c), DegenerateInputError);
    const auto one = kendall_tau_b(c, x);
    CHECK(std::isnan(one.tau));
    CHECK(std::isnan(one.p));
    CHECK_THROWS_AS(kendall_tau_b(x, std::vector<double>{1, 2}), SchemaError);
    CHECK_THROWS_AS(kendall_tau_b(std::vector<double>{1}, std::vector<double>{1}), SchemaError);
    CHECK_THROWS_AS(kendall_tau_b(x, std::vector<double>{1, NAN, 2}), SchemaError);
  }

  TEST_CASE("merge-sort counts equal pair enumeration") {
    std::mt19937_64 rng(123);
    std::uniform_int_distribution<std::size_t> len(2, 500);
    for (int t = 0; t < 200; ++t) {
      const std::size_t n = len(rng);
      const auto x = tied_sequence(rng, n, 1 + t % 12);
      const auto y = tied_sequence(rng, n, 1 + (t * 7) % 15);
      const auto want = oracle::kendall_pairs(x, y);
      CHECK(kendall_counts(x, y) == want);
      const bool xc = want.ties_x == want.n0, yc = want.ties_y == want.n0;
      if (xc && yc) continue;
      if (xc || yc) {
        CHECK(std::isnan(kendall_tau_b(x, y).tau));
      } else {
        CHECK(kendall_tau_b(x, y).tau == oracle::tau_b_from_counts(want));
      }
    }
  }

  TEST_CASE("invariance and antisymmetry") {
    std::mt19937_64 rng(9);
    for (int t = 0; t < 50; ++t) {
      const auto x = tied_sequence(rng, 100, 10);
      std::vector<double> y(100);
      std::normal_distribution<double> g;
      for (auto& v : y) v = g(rng);
      std::vector<double> ex(x.size()), ny(y.size());
      for (std::size_t i = 0; i < x.size(); ++i) {
        ex[i] = std::exp(x[i]) + 3;
        ny[i] = -y[i];
      }
      const double tau = kendall_tau_b(x, y).tau;
      CHECK(kendall_tau_b(ex, y).tau == tau);
      CHECK(kendall_tau_b(x, ny).tau == -tau);
    }
  }

  TEST_CASE("p-value sanity") {
    std::vector<double> x(200), y(200);
    for (int i = 0; i < 200; ++i) {
      x[i] = i;
      y[i] = i + (i % 7) * 3.0;
    }
    const auto r = kendall_tau_b(x, y);
    CHECK(r.tau > 0.8);
    CHECK(r.p < 1e-10);
  }

  TEST_CASE("correlation report") {
    testing_util::TempDir dir;
    std::mt19937_64 rng(4);
    std::normal_distribution<double> g;
    NumericColumns data;
    for (int i = 0; i < 1000; ++i) {
      const double a = g(rng);
      data["a"].push_back(a);
      data["b"].push_back(a + g(rng));
      data["neg"].push_back(-a);
      data["c"].push_back(std::round(g(rng) * 2));
    }
    const std::vector<std::string> cols{"a", "b", "neg", "c"};
    const auto rep = correlation_report(data, cols, 3);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(rep.tau_at(i, i) == 1.0);
      for (std::size_t j = 0; j < 4; ++j) {
        CHECK(rep.tau_at(i, j) == rep.tau_at(j, i));
        if (i != j) {
          CHECK(rep.tau_at(i, j) == kendall_tau_b(data[cols[i]], data[cols[j]]).tau);
        }
      }
    }
    CHECK(rep.tau_at(0, 2) == -1.0);

    write_correlation_csv(rep, dir / "c.csv");
    const auto text = testing_util::slurp(dir / "c.csv");
    CHECK(text.rfind("column_a,column_b,tau,p\n", 0) == 0);

    testing_util::spit(dir / "in.csv", "x,y,name\n1,2,a\n2,,b\n3,5,c\n4,6,d\n");
    const auto cols2 = read_csv_columns(dir / "in.csv", {"x", "y"});
    CHECK(std::isnan(cols2.at("y")[1]));
    CHECK_THROWS_AS(read_csv_columns(dir / "in.csv", {"nope"}), SchemaError);
    CHECK_THROWS_AS(read_csv_columns(dir / "in.csv", {"name"}), SchemaError);
    const auto r2 = correlation_report(cols2, {"x", "y"});
    CHECK(r2.tau_at(0, 1) == 1.0);
  }
}
