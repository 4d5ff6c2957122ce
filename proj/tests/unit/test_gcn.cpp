#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "exal/dataset.hpp"
#include "exal/error.hpp"
#include "exal/gcn.hpp"
#include "exal/numcore.hpp"
#include "support/oracles.hpp"

using namespace exal;

namespace {

GcnArchitecture arch_of(std::size_t h, std::size_t w, std::size_t c, std::size_t graph,
                        std::size_t dense) {
  GcnArchitecture a;
  a.grid_h = h;
  a.grid_w = w;
  a.channels = c;
  a.graph_layers = graph;
  a.dense_layers = dense;
  return a;
}

double slope(double v) { return v >= 0 ? 0.99 : 0.95; }

// Layer formula written out with explicit loops.
std::vector<double> reference_forward(const InvertibleGcn& net, std::vector<double> x) {
  const auto& a = net.architecture();
  const std::size_t s = a.channels, n = a.nodes(), d = a.dim();
  for (const auto& layer : net.layers()) {
    std::vector<double> y(d, 0.0);
    if (layer.uses_adjacency) {
      std::vector<double> agg(d, 0.0);  // agg[i*n+m] = sum_j U[i][j] A[m][j]
      for (std::size_t i = 0; i < s; ++i)
        for (std::size_t m = 0; m < n; ++m) {
          double acc = 0;
          for (std::size_t j = 0; j < n; ++j) acc += x[i * n + j] * net.adjacency()(m, j);
          agg[i * n + m] = a.aggregation == AggregationActivation::leaky_relu ? acc * slope(acc) : acc;
        }
      for (std::size_t o = 0; o < s; ++o)
        for (std::size_t m = 0; m < n; ++m) {
          double acc = 0;
          for (std::size_t i = 0; i < s; ++i) acc += layer.weight(i, o) * agg[i * n + m];
          y[o * n + m] = acc;
        }
    } else {
      for (std::size_t o = 0; o < d; ++o) {
        double acc = 0;
        for (std::size_t i = 0; i < d; ++i) acc += layer.weight(i, o) * x[i];
        y[o] = acc;
      }
    }
    for (double& v : y) v *= slope(v);
    x = std::move(y);
  }
  return x;
}

std::vector<double> random_vec(std::size_t d, Rng& rng, double sd = 1.0) {
  std::vector<double> v(d);
  for (double& e : v) e = rng.normal(0.0, sd);
  return v;
}

// Smallest |pre-activation| met anywhere in the forward pass.
double kink_margin(const InvertibleGcn& net, const std::vector<double>& x) {
  double margin = INFINITY;
  const auto& a = net.architecture();
  std::vector<double> cur = x;
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    InvertibleGcn one(a, net.adjacency(), {net.layers()[l]}, net.lambda());
    const auto& layer = net.layers()[l];
    // Recover the pre-activation by inverting the activation of the output.
    auto out = one.forward_trunk(cur);
    for (double v : out) margin = std::min(margin, std::abs(v));
    if (layer.uses_adjacency && a.aggregation == AggregationActivation::leaky_relu) {
      const std::size_t s = a.channels, n = a.nodes();
      for (std::size_t i = 0; i < s; ++i)
        for (std::size_t m = 0; m < n; ++m) {
          double acc = 0;
          for (std::size_t j = 0; j < n; ++j) acc += cur[i * n + j] * net.adjacency()(m, j);
          margin = std::min(margin, std::abs(acc));
        }
    }
    cur = out;
  }
  return margin;
}

}  // namespace

TEST_CASE("forward_trunk hand cases") {
  const auto a = arch_of(2, 2, 3, 1, 0);
  const InvertibleGcn net(a, Matrix::identity(4), {{Matrix::identity(3), true}}, 1.0 / 12);
  std::vector<double> x(12);
  for (std::size_t i = 0; i < 12; ++i) x[i] = 0.1 * static_cast<double>(i);
  const auto y = net.forward_trunk(x);
  for (std::size_t i = 0; i < 12; ++i) CHECK(y[i] == doctest::Approx(0.99 * x[i]).epsilon(1e-15));
  for (double v : net.forward_trunk(std::vector<double>(12, 0.0))) CHECK(v == 0.0);
  CHECK_THROWS_AS(net.forward_trunk(std::vector<double>(11, 0.0)), InvalidArgument);
}

TEST_CASE("forward_trunk matches a straight-line reimplementation") {
  Rng rng(21);
  for (auto agg : {AggregationActivation::identity, AggregationActivation::leaky_relu}) {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      auto a = arch_of(3, 4, 3, 1, 1);
      a.aggregation = agg;
      const InvertibleGcn net = InvertibleGcn::orthonormal(a, seed);
      for (int t = 0; t < 5; ++t) {
        const auto x = random_vec(a.dim(), rng);
        const auto got = net.forward_trunk(x);
        const auto want = reference_forward(net, x);
        for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) <= 1e-12);
      }
    }
  }
  // Batched rows agree with single samples.
  const auto a = arch_of(3, 3, 2, 2, 1);
  const InvertibleGcn net = InvertibleGcn::orthonormal(a, 3);
  const Matrix xs = oracle::gaussian(5, a.dim(), rng);
  const Matrix ys = net.forward_trunk_rows(xs);
  for (std::size_t r = 0; r < 5; ++r) {
    const auto y = net.forward_trunk(xs.row(r));
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(ys(r, i) == doctest::Approx(y[i]).epsilon(1e-14));
  }
}

TEST_CASE("class_probs") {
  const auto a = arch_of(2, 2, 2, 0, 1);
  const InvertibleGcn net(a, Matrix(), {{Matrix::identity(8), false}}, 1.0 / 8);
  std::vector<double> x(8, 0.3);
  auto p = net.class_probs(x);
  CHECK(p[0] == doctest::Approx(0.5));
  x[0] = std::log(9.0) / 0.99;
  x[1] = 0.0;
  p = net.class_probs(x);
  CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(0.1).epsilon(1e-12));

  Rng rng(4);
  const InvertibleGcn r = InvertibleGcn::orthonormal(arch_of(4, 4, 3, 1, 2), 9);
  const Matrix xs = oracle::gaussian(1000, r.dim(), rng, 2.0);
  const Matrix probs = r.class_probs_rows(xs);
  for (std::size_t i = 0; i < 1000; ++i) {
    CHECK((probs(i, 0) > 0 && probs(i, 0) < 1));
    CHECK(std::abs(probs(i, 0) + probs(i, 1) - 1.0) <= 1e-12);
  }
}

TEST_CASE("invert_trunk") {
  const auto a1 = arch_of(2, 2, 3, 1, 0);
  const InvertibleGcn twice(a1, Matrix::identity(4), {{2.0 * Matrix::identity(3), true}}, 0.1);
  std::vector<double> h(12);
  for (std::size_t i = 0; i < 12; ++i) h[i] = 0.5 + static_cast<double>(i);
  const auto x = twice.invert_trunk(h);
  for (std::size_t i = 0; i < 12; ++i) CHECK(x[i] == doctest::Approx(h[i] / (2 * 0.99)).epsilon(1e-14));

  Rng rng(12);
  for (auto agg : {AggregationActivation::identity, AggregationActivation::leaky_relu}) {
    auto a = arch_of(8, 8, 3, 1, 2);
    a.aggregation = agg;
    const InvertibleGcn net = InvertibleGcn::orthonormal(a, 17);
    const Matrix xs = oracle::gaussian(100, a.dim(), rng);
    const Matrix back = net.invert_trunk_rows(net.forward_trunk_rows(xs));
    CHECK(max_abs(back - xs) <= 1e-6);
  }

  Matrix w = Matrix::identity(3);
  w(2, 2) = 1e-12;
  const InvertibleGcn singular(a1, Matrix::identity(4), {{w, true}}, 0.1);
  CHECK_THROWS_AS(singular.check_invertible(), SingularMatrix);
  CHECK_THROWS_AS(singular.invert_trunk(h), SingularMatrix);
}

TEST_CASE("input_gradient") {
  SUBCASE("closed form for an identity net") {
    const auto a = arch_of(2, 2, 2, 0, 1);
    const InvertibleGcn net(a, Matrix(), {{Matrix::identity(8), false}}, 1.0 / 8);
    std::vector<double> x{0.4, 0.1, 0.2, 0.3, 0.5, 0.6, 0.7, 0.8};
    const auto p = net.class_probs(x);
    const auto g1 = net.input_gradient(x, 1);
    const auto g0 = net.input_gradient(x, 0);
    const double s = p[0] * p[1] * 0.99;
    CHECK(g1[0] == doctest::Approx(-s).epsilon(1e-12));
    CHECK(g1[1] == doctest::Approx(s).epsilon(1e-12));
    for (std::size_t i = 2; i < 8; ++i) CHECK(g1[i] == 0.0);
    for (std::size_t i = 0; i < 8; ++i) CHECK(g0[i] == -g1[i]);
  }
  SUBCASE("central differences on random nets") {
    Rng rng(31);
    int checked = 0;
    for (std::uint64_t seed = 0; checked < 20; ++seed) {
      auto a = arch_of(3, 3, 2, 1, 2);
      a.aggregation = seed % 2 ? AggregationActivation::leaky_relu : AggregationActivation::identity;
      const InvertibleGcn net = InvertibleGcn::orthonormal(a, seed);
      const auto x = random_vec(a.dim(), rng);
      if (kink_margin(net, x) < 1e-3) continue;
      ++checked;
      for (int c = 0; c < 2; ++c) {
        const auto g = net.input_gradient(x, c);
        double num = 0, den = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
          auto xp = x, xm = x;
          xp[i] += 1e-4;
          xm[i] -= 1e-4;
          const double fd = (net.class_probs(xp)[c] - net.class_probs(xm)[c]) / 2e-4;
          num += (fd - g[i]) * (fd - g[i]);
          den += g[i] * g[i];
        }
        CHECK(std::sqrt(num / den) <= 1e-3);
      }
      const auto g0 = net.input_gradient(x, 0), g1 = net.input_gradient(x, 1);
      for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(g0[i] + g1[i]) <= 1e-10);
    }
  }
  SUBCASE("batched gradients agree") {
    Rng rng(2);
    const InvertibleGcn net = InvertibleGcn::orthonormal(arch_of(4, 4, 3, 1, 2), 5);
    const Matrix v = oracle::gaussian(6, net.dim(), rng);
    const ClassGradients cg = net.class_gradients_rows(v);
    for (std::size_t r = 0; r < 6; ++r) {
      const auto g = net.input_gradient(v.row(r), 1);
      for (std::size_t i = 0; i < g.size(); ++i) CHECK(cg.grad_change(r, i) == doctest::Approx(g[i]));
    }
  }
}

TEST_CASE("diagnostics") {
  const auto a = arch_of(8, 8, 3, 1, 2);
  const InvertibleGcn net = InvertibleGcn::orthonormal(a, 1);
  CHECK(net.ortho_residual() < 1e-10);
  CHECK(net.lipschitz_estimate() == doctest::Approx(std::pow(0.99, 3)).epsilon(1e-8));
  CHECK(net.lambda() == doctest::Approx(1.0 / 192));

  const auto ad = arch_of(2, 2, 2, 0, 1);
  const InvertibleGcn doubled(ad, Matrix(), {{2.0 * Matrix::identity(8), false}}, 1.0 / 8);
  CHECK(doubled.ortho_residual() == doctest::Approx(3.0 * std::sqrt(8.0)));
  CHECK(doubled.lipschitz_estimate() == doctest::Approx(2 * 0.99));

  // The grid-derived adjacency starts orthonormal; the raw grid does not.
  CHECK(ortho_penalty(net.adjacency()) < 1e-10);
  CHECK(ortho_penalty(build_grid_adjacency(8, 8)) > 1.0);
  const InvertibleGcn ident = InvertibleGcn::orthonormal(a, 1, AdjacencyInit::identity);
  CHECK(ident.adjacency() == Matrix::identity(64));
}

TEST_CASE("ortho penalty gradient matches finite differences") {
  Rng rng(6);
  const Matrix m = oracle::gaussian(5, 5, rng);
  const Matrix g = ortho_penalty_gradient(m);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      Matrix p = m, q = m;
      p(i, j) += 1e-6;
      q(i, j) -= 1e-6;
      CHECK(g(i, j) == doctest::Approx((ortho_penalty(p) - ortho_penalty(q)) / 2e-6).epsilon(1e-5));
    }
  CHECK(max_abs(ortho_penalty_gradient(Matrix::identity(4))) == 0.0);
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(14);
  auto a = arch_of(2, 3, 2, 1, 1);
  a.aggregation = AggregationActivation::leaky_relu;
  InvertibleGcn net = InvertibleGcn::orthonormal(a, 3);
  // Perturb away from orthonormality so the penalty gradient is non-trivial.
  GcnGradients kick;
  kick.adjacency = oracle::gaussian(6, 6, rng, 0.1);
  for (const auto& l : net.layers()) kick.weights.push_back(oracle::gaussian(l.weight.rows(), l.weight.cols(), rng, 0.1));
  net.apply_step(kick, -1.0);
  const Matrix x = oracle::gaussian(7, a.dim(), rng);
  const std::vector<int> y{0, 1, 1, 0, 1, 0, 0};
  const std::vector<double> w{1, 2, 2, 1, 2, 1, 1};
  const double lambda = 0.3;
  auto loss = [&](const InvertibleGcn& n) {
    double pen = ortho_penalty(n.adjacency());
    for (const auto& l : n.layers()) pen += ortho_penalty(l.weight);
    return n.cross_entropy(x, y, w) + lambda * pen;
  };
  const GcnGradients g = net.loss_gradients(x, y, 1.0, lambda, w);
  auto probe = [&](auto&& pick, const Matrix& analytic) {
    for (std::size_t i = 0; i < analytic.rows(); ++i)
      for (std::size_t j = 0; j < analytic.cols(); ++j) {
        GcnGradients e;
        e.adjacency = Matrix(6, 6);
        for (const auto& l : net.layers()) e.weights.emplace_back(l.weight.rows(), l.weight.cols());
        pick(e)(i, j) = 1.0;
        InvertibleGcn p = net, m = net;
        p.apply_step(e, -1e-6);
        m.apply_step(e, 1e-6);
        const double fd = (loss(p) - loss(m)) / 2e-6;
        CHECK(analytic(i, j) == doctest::Approx(fd).epsilon(1e-5).scale(1.0));
      }
  };
  probe([](GcnGradients& e) -> Matrix& { return e.adjacency; }, g.adjacency);
  probe([](GcnGradients& e) -> Matrix& { return e.weights[0]; }, g.weights[0]);
  probe([](GcnGradients& e) -> Matrix& { return e.weights[1]; }, g.weights[1]);
}

TEST_CASE("training") {
  SUBCASE("penalty alone keeps an orthonormal network near orthonormal") {
    // ||W^T W - I||_F has a kink at its minimum, so steps jitter around it
    // instead of stopping.
    const InvertibleGcn net = InvertibleGcn::orthonormal(arch_of(2, 2, 2, 1, 1), 4);
    Rng rng(1);
    const Matrix x = oracle::gaussian(10, 8, rng);
    std::vector<int> y(10, 0);
    y[3] = 1;
    TrainConfig cfg;
    cfg.ce_weight = 0.0;
    cfg.epochs = 5;
    const TrainResult r = train(net, x, y, cfg);
    CHECK(net.ortho_residual() <= 1e-10);
    CHECK(r.net.ortho_residual() <= 0.05);
    for (std::size_t l = 0; l < net.layers().size(); ++l)
      CHECK(max_abs(r.net.layers()[l].weight - net.layers()[l].weight) <= 5.0 * cfg.learning_rate);
  }
  SUBCASE("separable toy set reaches full training accuracy") {
    Rng rng(77);
    const std::size_t n = 40, d = 8;
    Matrix x(n, d);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = i % 2;
      for (std::size_t j = 0; j < d; ++j) x(i, j) = rng.normal(0.0, 0.3);
      x(i, 0) += y[i] ? 1.0 : -1.0;
      x(i, 1) += y[i] ? 0.5 : -0.5;
    }
    const InvertibleGcn net = InvertibleGcn::orthonormal(arch_of(2, 2, 2, 1, 2), 8);
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.learning_rate = 0.05;
    cfg.batch_size = 8;
    const TrainResult r = train(net, x, y, cfg);
    const Matrix p = r.net.class_probs_rows(x);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) correct += (p(i, 1) > 0.5) == (y[i] == 1);
    CHECK(correct == n);
    CHECK(r.loss.size() == 200);
    CHECK(r.loss.back() < r.loss.front());
  }
  SUBCASE("residual decreases from a random start") {
    Rng rng(5);
    const auto a = arch_of(2, 2, 2, 1, 2);
    std::vector<GcnLayer> layers{{Matrix::identity(2) + oracle::gaussian(2, 2, rng, 0.2), true},
                                 {Matrix::identity(8) + oracle::gaussian(8, 8, rng, 0.2), false},
                                 {Matrix::identity(8) + oracle::gaussian(8, 8, rng, 0.2), false}};
    const InvertibleGcn net(a, Matrix::identity(4) + oracle::gaussian(4, 4, rng, 0.2), layers, 1.0 / 8);
    const Matrix x = oracle::gaussian(30, 8, rng);
    std::vector<int> y(30);
    for (std::size_t i = 0; i < 30; ++i) y[i] = x(i, 0) > 0;
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.learning_rate = 1e-2;
    const TrainResult r = train(net, x, y, cfg);
    CHECK(r.ortho_residual.back() < net.ortho_residual());
    for (std::size_t e = 1; e < r.ortho_residual.size(); ++e)
      CHECK(r.ortho_residual[e] <= 1.1 * r.ortho_residual[e - 1]);
  }
  SUBCASE("single class is rejected") {
    const InvertibleGcn net = InvertibleGcn::orthonormal(arch_of(2, 2, 2, 1, 1), 4);
    CHECK_THROWS_AS(train(net, Matrix(3, 8), std::vector<int>{1, 1, 1}, TrainConfig{}), InvalidArgument);
  }
  SUBCASE("training is deterministic in its seed") {
    Rng rng(9);
    const Matrix x = oracle::gaussian(20, 8, rng);
    std::vector<int> y(20);
    for (std::size_t i = 0; i < 20; ++i) y[i] = x(i, 2) > 0;
    const InvertibleGcn net = InvertibleGcn::orthonormal(arch_of(2, 2, 2, 1, 1), 4);
    TrainConfig cfg;
    cfg.epochs = 10;
    cfg.seed = 3;
    CHECK(train(net, x, y, cfg).loss == train(net, x, y, cfg).loss);
  }
}

TEST_CASE("checkpoint round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "exal_test_gcn_ckpt";
  std::filesystem::remove_all(dir);
  auto a = arch_of(3, 3, 3, 1, 2);
  a.aggregation = AggregationActivation::leaky_relu;
  const InvertibleGcn net = InvertibleGcn::orthonormal(a, 12);
  save_model(net, dir);
  CHECK(std::filesystem::exists(dir / "model.json"));
  CHECK(std::filesystem::file_size(dir / "weights.bin") == (81 + 9 + 2 * 27 * 27) * 8);
  const InvertibleGcn back = load_model(dir);
  CHECK(back.adjacency() == net.adjacency());
  for (std::size_t l = 0; l < 3; ++l) CHECK(back.layers()[l].weight == net.layers()[l].weight);
  CHECK(back.architecture().aggregation == AggregationActivation::leaky_relu);
  CHECK(back.lambda() == net.lambda());
  std::filesystem::resize_file(dir / "weights.bin", 100);
  CHECK_THROWS_AS(load_model(dir), IoError);
  std::filesystem::remove_all(dir);
}
