#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "exal/error.hpp"
#include "exal/eval.hpp"
#include "support/oracles.hpp"

using namespace exal;
namespace fs = std::filesystem;

TEST_CASE("compute_eer examples") {
  CHECK(compute_eer({{0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}}) == doctest::Approx(0.0));
  CHECK(compute_eer({{0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1}}) == doctest::Approx(100.0));
  CHECK(compute_eer({{0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}}) == doctest::Approx(50.0));
  // One negative above one positive: far = frr = 1/2 at threshold 0.5.
  CHECK(compute_eer({{0.1, 0.6, 0.4, 0.8}, {0, 0, 1, 1}}) == doctest::Approx(50.0));
  // 1 of 4 negatives above the lowest of 2 positives: crossing at 25%.
  CHECK(compute_eer({{0.1, 0.2, 0.3, 0.7, 0.5, 0.9}, {0, 0, 0, 0, 1, 1}}) == doctest::Approx(25.0));

  CHECK_THROWS_AS(compute_eer({{0.1, 0.2}, {0, 0}}), InvalidArgument);
  CHECK_THROWS_AS(compute_eer({{0.1, 0.2}, {0}}), InvalidArgument);
  CHECK_THROWS_AS(compute_eer({{0.1, NAN}, {0, 1}}), InvalidArgument);
  CHECK_THROWS_AS(compute_eer({{0.1, 0.2}, {0, 2}}), InvalidArgument);
}

TEST_CASE("compute_eer against a threshold-grid sweep") {
  Rng rng(17);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = 50 + rng.below(300);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    const double sep = rng.uniform(0.0, 3.0);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = rng.uniform() < 0.3 ? 1 : 0;
      // Quantised to 1e-3 so the 1e5-step grid lands between every pair of distinct scores.
      const double raw = rng.normal(labels[i] ? sep : 0.0, 1.0);
      scores[i] = std::round(raw * 1000.0) / 1000.0;
    }
    labels[0] = 0;
    labels[1] = 1;
    const double got = compute_eer({scores, labels});
    CHECK(std::abs(got - oracle::grid_eer(scores, labels)) <= 1e-6);

    // Invariant under strictly increasing transforms.
    std::vector<double> warped(n);
    for (std::size_t i = 0; i < n; ++i) warped[i] = std::exp(3.0 * scores[i]) - 7.0;
    CHECK(compute_eer({warped, labels}) == doctest::Approx(got).epsilon(1e-12));
  }
}

TEST_CASE("auc_of_eers") {
  const std::vector<double> e{10, 20, 30};
  CHECK(auc_of_eers(e) == 20.0);
  CHECK_THROWS_AS(auc_of_eers(std::vector<double>{}), InvalidArgument);
}

TEST_CASE("ablation grid") {
  const auto grid = ablation_grid();
  REQUIRE(grid.size() == 7);
  CHECK(grid[0].label() == "rep");
  CHECK(grid[1].label() == "div");
  CHECK(grid[2].label() == "amb");
  CHECK(grid[3].label() == "rep+div");
  CHECK(grid[6].label() == "rep+div+amb");

  SolverConfig base;
  base.alpha = 0.3;
  base.beta = 2.0;
  base.gamma = 0.7;
  const SolverConfig only_amb = apply_ablation(base, grid[2]);
  CHECK(only_amb.rep_weight == 0.0);
  CHECK(only_amb.alpha == 0.0);
  CHECK(only_amb.beta == 2.0);
  CHECK(only_amb.gamma == 0.7);
  const SolverConfig full = apply_ablation(base, grid[6]);
  CHECK(full.rep_weight == 1.0);
  CHECK(full.alpha == 0.3);
  CHECK_THROWS_AS(apply_ablation(base, {false, false, false}), InvalidArgument);
}

TEST_CASE("reports") {
  Report r;
  r.kind = "comparison";
  r.iterations = {2, 3};
  r.samp = {1.5, 2.25};
  GridRow row;
  row.label = "virtual";
  row.eer_mean = {10.0, NAN};
  row.eer_std = {1.0, 0.0};
  row.auc_mean = 10.0;
  row.auc_per_seed = {10.0};
  r.rows.push_back(row);
  r.curves.push_back({"virtual", 3, 2, 1.5, 10.0});
  r.fully_supervised_eer = {4.0, 6.0};
  r.meta_json = R"({"seeds":[3]})";

  const auto doc = nlohmann::json::parse(report_json(r));
  CHECK(doc.at("kind") == "comparison");
  CHECK(doc.at("grid")[0][0] == 10.0);
  CHECK(doc.at("grid")[0][1].is_null());
  CHECK(doc.at("auc")[0] == 10.0);
  CHECK(doc.at("fully_supervised").at("eer_mean") == 5.0);
  CHECK(doc.at("meta").at("seeds")[0] == 3);
  CHECK(curves_csv(r) == "strategy,seed,iter,samp_percent,eer_percent\nvirtual,3,2,1.5,10\n");

  const fs::path dir = fs::temp_directory_path() / "exal_test_report";
  fs::remove_all(dir);
  write_report(r, dir);
  CHECK(fs::exists(dir / "report.json"));
  CHECK(fs::exists(dir / "curves.csv"));
  fs::remove_all(dir);
}

TEST_CASE("read_scores_csv") {
  const fs::path p = fs::temp_directory_path() / "exal_test_scores.csv";
  std::ofstream(p) << "id,score,label\n0,0.25,0\n1, 0.75 ,1\n\n# comment\n2,0.5,1\n";
  const ScoredSet s = read_scores_csv(p);
  CHECK(s.scores == std::vector<double>{0.25, 0.75, 0.5});
  CHECK(s.labels == std::vector<int>{0, 1, 1});
  std::ofstream(p) << "0,0.25,0\n1,abc,1\n";
  CHECK_THROWS_AS(read_scores_csv(p), InvalidArgument);
  std::ofstream(p) << "0,0.25\n";
  CHECK_THROWS_AS(read_scores_csv(p), InvalidArgument);
  fs::remove(p);
  CHECK_THROWS_AS(read_scores_csv(p), IoError);
}

TEST_CASE("harness on a tiny dataset") {
  SyntheticConfig c;
  c.n_pairs = 120;
  c.positive_count = 20;
  c.h = c.w = 4;
  const PatchPairDataset ds = generate_synthetic(c);
  SessionConfig base;
  base.budget = 3;
  base.solver.display_size = 5;
  base.solver.maxiter = 40;
  base.train.epochs = 10;
  HarnessOptions opts;
  opts.seeds = {0, 1};
  const std::vector<AblationSpec> specs{{true, false, false}, {true, true, true}};
  const Report a = run_ablation(ds, base, specs, opts);
  CHECK(a.kind == "ablation");
  CHECK(a.iterations == std::vector<std::size_t>{2, 3});
  REQUIRE(a.rows.size() == 2);
  CHECK(a.rows[1].label == "rep+div+amb");
  CHECK(a.curves.size() == 2 * 2 * 3);
  for (const GridRow& row : a.rows) {
    CHECK(row.errors.empty());
    CHECK(row.auc_per_seed.size() == 2);
    CHECK(row.auc_mean == doctest::Approx((row.auc_per_seed[0] + row.auc_per_seed[1]) / 2));
  }
  CHECK(a.samp[0] == doctest::Approx(sampling_rate(2, 5, 120)));

  // Parallel workers give the same report.
  HarnessOptions par = opts;
  par.workers = 3;
  CHECK(report_json(run_ablation(ds, base, specs, par)) == report_json(a));

  const Report cmp = run_comparison(ds, base, {Strategy::random, Strategy::maxmin}, opts);
  CHECK(cmp.rows.size() == 2);
  CHECK(cmp.fully_supervised_eer.size() == 2);
}
