#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "doctest.h"
#include "exal/error.hpp"
#include "exal/sampling.hpp"
#include "support/oracles.hpp"

using namespace exal;

namespace {

std::vector<std::size_t> iota_ids(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

}  // namespace

TEST_CASE("strategy names round trip") {
  for (Strategy s : {Strategy::virtual_ambient, Strategy::virtual_latent, Strategy::random,
                     Strategy::maxmin, Strategy::uncertainty}) {
    CHECK(parse_strategy(strategy_name(s)) == s);
  }
  CHECK_THROWS_AS(parse_strategy("coreset"), InvalidArgument);
}

TEST_CASE("unused_ids") {
  const Matrix f(6, 2);
  const std::vector<std::size_t> pool{5, 1, 3, 0}, used{3};
  CHECK(unused_ids({f, pool, used}) == std::vector<std::size_t>{0, 1, 5});
  const std::vector<std::size_t> bad{9};
  CHECK_THROWS_AS(unused_ids({f, bad, {}}), InvalidArgument);
}

TEST_CASE("select_virtual") {
  const Matrix f{{0, 0}, {1, 0}, {5, 5}, {5, 6}, {10, 0}};
  const auto pool = iota_ids(5);
  SUBCASE("nearest unused sample per exemplar") {
    const Matrix v{{0.9, 5.2}, {0.1, 5.6}};  // columns (0.9,0.1) and (5.2,5.6)
    const Display d = select_virtual({f, pool, {}}, v, 2);
    CHECK(d.ids == std::vector<std::size_t>{1, 3});
    CHECK(d.strategy == Strategy::virtual_ambient);
  }
  SUBCASE("used samples and earlier picks are skipped") {
    const Matrix v{{1, 1, 1}, {0, 0, 0}};
    const std::vector<std::size_t> used{1};
    const Display d = select_virtual({f, pool, used}, v, 3);
    CHECK(d.ids == std::vector<std::size_t>{0, 2, 3});
  }
  SUBCASE("equidistant candidates go to the smaller id") {
    const Matrix v{{0.5}, {0}};
    CHECK(select_virtual({f, pool, {}}, v, 1).ids == std::vector<std::size_t>{0});
  }
  SUBCASE("agrees with a brute force scan") {
    Rng rng(4);
    const Matrix big = oracle::gaussian(300, 6, rng);
    const Matrix v = oracle::gaussian(6, 10, rng);
    const auto all = iota_ids(300);
    const Display d = select_virtual({big, all, {}}, v, 10);
    std::set<std::size_t> taken;
    for (std::size_t j = 0; j < 10; ++j) {
      std::size_t best = 0;
      double bd = INFINITY;
      for (std::size_t i = 0; i < 300; ++i) {
        if (taken.count(i)) continue;
        double s = 0;
        for (std::size_t r = 0; r < 6; ++r) s += (big(i, r) - v(r, j)) * (big(i, r) - v(r, j));
        if (s < bd) {
          bd = s;
          best = i;
        }
      }
      taken.insert(best);
      CHECK(d.ids[j] == best);
    }
  }
  CHECK_THROWS_AS(select_virtual({f, pool, {}}, Matrix(3, 2), 2), InvalidArgument);
  CHECK_THROWS_AS(select_virtual({f, pool, pool}, Matrix(2, 2), 2), InvalidArgument);
}

TEST_CASE("select_random") {
  const Matrix f(10, 1);
  const auto pool = iota_ids(10);
  const std::vector<std::size_t> used{0, 1};
  Rng a(3), b(3);
  CHECK(select_random({f, pool, used}, 4, a).ids == select_random({f, pool, used}, 4, b).ids);

  // Every unused id is equally likely to be shown.
  std::map<std::size_t, int> counts;
  Rng rng(11);
  const int trials = 40000;
  for (int t = 0; t < trials; ++t) {
    const Display d = select_random({f, pool, used}, 2, rng);
    REQUIRE(d.ids.size() == 2);
    REQUIRE(d.ids[0] != d.ids[1]);
    for (std::size_t id : d.ids) {
      REQUIRE(id >= 2);
      ++counts[id];
    }
  }
  const double expect = trials * 2.0 / 8.0;
  double chi2 = 0;
  for (auto [id, c] : counts) chi2 += (c - expect) * (c - expect) / expect;
  CHECK(counts.size() == 8);
  CHECK(chi2 < 24.3);  // 7 dof, p = 0.001
  CHECK_THROWS_AS(select_random({f, pool, used}, 9, rng), InvalidArgument);
}

TEST_CASE("select_maxmin") {
  SUBCASE("hand case on a line") {
    const Matrix f{{0}, {1}, {2}, {3}, {10}};
    const auto pool = iota_ids(5);
    const std::vector<std::size_t> labeled{0};
    CHECK(select_maxmin({f, pool, labeled}, labeled, 2).ids == std::vector<std::size_t>{4, 3});
  }
  SUBCASE("ties go to the smaller id") {
    const Matrix f{{0}, {-2}, {2}};
    const auto pool = iota_ids(3);
    const std::vector<std::size_t> labeled{0};
    CHECK(select_maxmin({f, pool, labeled}, labeled, 1).ids == std::vector<std::size_t>{1});
  }
  SUBCASE("matches the from-scratch greedy oracle") {
    Rng rng(6);
    const Matrix f = oracle::gaussian(150, 5, rng);
    const auto pool = iota_ids(150);
    const std::vector<std::size_t> labeled{3, 70, 121};
    const Display d = select_maxmin({f, pool, labeled}, labeled, 12);
    CHECK(d.ids == oracle::greedy_maxmin(oracle::to_mat(f), pool, labeled, 12));
  }
  const Matrix f(3, 1);
  const auto pool = iota_ids(3);
  CHECK_THROWS_AS(select_maxmin({f, pool, {}}, {}, 1), InvalidArgument);
}

TEST_CASE("select_uncertainty") {
  GcnArchitecture arch;
  arch.grid_h = 2;
  arch.grid_w = 2;
  arch.channels = 1;
  const InvertibleGcn net = InvertibleGcn::orthonormal(arch, 5);
  Rng rng(7);
  const Matrix f = oracle::gaussian(60, 4, rng, 3.0);
  const auto pool = iota_ids(60);
  const std::vector<std::size_t> used{0, 1, 2};
  const Display d = select_uncertainty({f, pool, used}, net, 7);

  // Sort oracle: entropy from the probabilities, descending, ids ascending on ties.
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t i = 3; i < 60; ++i) {
    const auto p = net.class_probs(f.row(i));
    scored.push_back({-(p[0] * std::log(p[0]) + p[1] * std::log(p[1])), i});
  }
  std::stable_sort(scored.begin(), scored.end(), [](auto& a, auto& b) { return a.first > b.first; });
  for (std::size_t j = 0; j < 7; ++j) CHECK(d.ids[j] == scored[j].second);

  CHECK(class_entropy(0.5, 0.5) == doctest::Approx(std::log(2.0)));
  CHECK(class_entropy(1.0, 0.0) == 0.0);

  // Identical rows all score the same, so the smallest ids win.
  const Matrix flat(10, 4, 0.3);
  const auto p10 = iota_ids(10);
  CHECK(select_uncertainty({flat, p10, {}}, net, 3).ids == std::vector<std::size_t>{0, 1, 2});
}
