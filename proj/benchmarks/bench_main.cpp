#include <benchmark/benchmark.h>

#include "exal/eval.hpp"
#include "exal/exemplar.hpp"
#include "exal/gcn.hpp"
#include "exal/rng.hpp"

using namespace exal;

namespace {

GcnArchitecture arch_192() {
  GcnArchitecture a;
  a.grid_h = 8;
  a.grid_w = 8;
  a.channels = 3;
  return a;
}

Matrix gaussian(std::size_t rows, std::size_t cols, std::uint64_t seed, double sd = 1.0) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.normal(0.0, sd);
  return m;
}

}  // namespace

static void BM_DistanceMatrix(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix x = gaussian(192, n, 1), v = gaussian(192, 16, 2);
  for (auto _ : state) benchmark::DoNotOptimize(distance_matrix(v, x));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n) * 16);
}
BENCHMARK(BM_DistanceMatrix)->Arg(200)->Arg(1000)->Arg(2000);

static void BM_MuStep(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix x = gaussian(192, n, 1), v = gaussian(192, 16, 2);
  const Matrix mu(n, 16, 1.0 / 16);
  SolverConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(mu_step(x, v, mu, cfg));
}
BENCHMARK(BM_MuStep)->Arg(200)->Arg(1000);

// Full solve, beta = 0 and beta = 1, on n spread samples.
static void BM_Solve(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix x = gaussian(192, n, 3, 30.0);
  const InvertibleGcn net = InvertibleGcn::orthonormal(arch_192(), 4);
  SolverConfig cfg;
  cfg.beta = static_cast<double>(state.range(1));
  cfg.maxiter = 100;
  std::size_t sweeps = 0;
  for (auto _ : state) {
    const SolveResult r = solve(x, &net, cfg);
    sweeps += r.iterations;
  }
  state.counters["sweeps"] = benchmark::Counter(static_cast<double>(sweeps),
                                                benchmark::Counter::kAvgIterations);
}
BENCHMARK(BM_Solve)->Args({200, 0})->Args({200, 1})->Args({1000, 1})->Unit(benchmark::kMillisecond);

static void BM_ForwardTrunk(benchmark::State& state) {
  const InvertibleGcn net = InvertibleGcn::orthonormal(arch_192(), 4);
  const Matrix x = gaussian(static_cast<std::size_t>(state.range(0)), 192, 5);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward_trunk_rows(x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardTrunk)->Arg(1)->Arg(256);

static void BM_InvertTrunk(benchmark::State& state) {
  const InvertibleGcn net = InvertibleGcn::orthonormal(arch_192(), 4);
  const Matrix h = net.forward_trunk_rows(gaussian(static_cast<std::size_t>(state.range(0)), 192, 5));
  for (auto _ : state) benchmark::DoNotOptimize(net.invert_trunk_rows(h));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_InvertTrunk)->Arg(1)->Arg(256);

static void BM_AmbiguityGradient(benchmark::State& state) {
  const InvertibleGcn net = InvertibleGcn::orthonormal(arch_192(), 4);
  const Matrix v = gaussian(192, 16, 6);
  for (auto _ : state) benchmark::DoNotOptimize(ambiguity_gradient(v, net));
}
BENCHMARK(BM_AmbiguityGradient);

static void BM_Eer(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(7);
  ScoredSet s;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = rng.uniform() < 0.1 ? 1 : 0;
    s.labels.push_back(y);
    s.scores.push_back(rng.normal(y ? 1.5 : 0.0, 1.0));
  }
  for (auto _ : state) benchmark::DoNotOptimize(compute_eer(s));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_Eer)->Arg(1000)->Arg(100000);

BENCHMARK_MAIN();
