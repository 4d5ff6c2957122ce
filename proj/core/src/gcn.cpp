#include "exal/gcn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include <Eigen/Dense>

#include "exal/dataset.hpp"
#include "exal/error.hpp"
#include "exal/numcore.hpp"
#include "exal/rng.hpp"

namespace exal {
namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;

ConstMap cview(const Matrix& m) { return ConstMap(m.data(), m.rows(), m.cols()); }
ConstMap cview(const Matrix& m, std::size_t rows, std::size_t cols) {
  return ConstMap(m.data(), rows, cols);
}
Map mview(Matrix& m) { return Map(m.data(), m.rows(), m.cols()); }
Map mview(Matrix& m, std::size_t rows, std::size_t cols) { return Map(m.data(), rows, cols); }

constexpr double kInvertiblePivot = 1e-10;

inline double leaky(double v) { return v >= 0.0 ? kPositiveSlope * v : kNegativeSlope * v; }
inline double leaky_slope(double pre) { return pre >= 0.0 ? kPositiveSlope : kNegativeSlope; }
inline double leaky_inverse(double v) {
  return v >= 0.0 ? v / kPositiveSlope : v / kNegativeSlope;
}

void apply_leaky(Matrix& m) {
  for (double& v : m.values()) v = leaky(v);
}
void apply_leaky_inverse(Matrix& m) {
  for (double& v : m.values()) v = leaky_inverse(v);
}
// d *= g'(pre) elementwise.
void scale_by_slope(Matrix& d, const Matrix& pre) {
  auto dv = d.values();
  auto pv = pre.values();
  for (std::size_t i = 0; i < dv.size(); ++i) dv[i] *= leaky_slope(pv[i]);
}

struct LayerCache {
  Matrix input;    // B x d
  Matrix pre_agg;  // (B*s) x n, graph layers only: U A^T
  Matrix agg;      // (B*s) x n, graph layers only: g1(U A^T)
  Matrix pre;      // B x d pre-activation
};

}  // namespace

struct InvertibleGcn::Cache {
  std::vector<LayerCache> layers;
};

InvertibleGcn::InvertibleGcn(GcnArchitecture arch, Matrix adjacency, std::vector<GcnLayer> layers,
                             double lambda, std::uint64_t seed)
    : arch_(arch),
      adjacency_(std::move(adjacency)),
      layers_(std::move(layers)),
      lambda_(lambda),
      seed_(seed) {
  validate();
}

void InvertibleGcn::validate() const {
  const std::size_t d = arch_.dim(), s = arch_.channels, n = arch_.nodes();
  if (d == 0) throw InvalidArgument("InvertibleGcn: empty architecture");
  if (arch_.change_coord >= d || arch_.no_change_coord >= d ||
      arch_.change_coord == arch_.no_change_coord) {
    throw InvalidArgument("InvertibleGcn: class coordinates must be two distinct trunk outputs");
  }
  if (layers_.empty()) throw InvalidArgument("InvertibleGcn: no layers");
  bool any_graph = false;
  for (const auto& layer : layers_) {
    const std::size_t want = layer.uses_adjacency ? s : d;
    if (layer.weight.rows() != want || layer.weight.cols() != want) {
      throw InvalidArgument("InvertibleGcn: layer weight must be " + std::to_string(want) + "x" +
                            std::to_string(want));
    }
    any_graph = any_graph || layer.uses_adjacency;
  }
  if (any_graph && (adjacency_.rows() != n || adjacency_.cols() != n)) {
    throw InvalidArgument("InvertibleGcn: adjacency must be " + std::to_string(n) + "x" +
                          std::to_string(n));
  }
  if (!(lambda_ > 0.0)) throw InvalidArgument("InvertibleGcn: lambda must be positive");
}

InvertibleGcn InvertibleGcn::orthonormal(const GcnArchitecture& arch, std::uint64_t seed,
                                         AdjacencyInit init) {
  Rng rng(seed);
  Matrix adjacency;
  if (arch.graph_layers > 0) {
    adjacency = init == AdjacencyInit::polar_grid
                    ? polar_factor(build_grid_adjacency(arch.grid_h, arch.grid_w))
                    : Matrix::identity(arch.nodes());
  }
  std::vector<GcnLayer> layers;
  for (std::size_t l = 0; l < arch.graph_layers; ++l) {
    Rng sub = rng.split(l);
    layers.push_back({random_orthonormal(arch.channels, sub), true});
  }
  for (std::size_t l = 0; l < arch.dense_layers; ++l) {
    Rng sub = rng.split(arch.graph_layers + l);
    layers.push_back({random_orthonormal(arch.dim(), sub), false});
  }
  return InvertibleGcn(arch, std::move(adjacency), std::move(layers),
                       1.0 / static_cast<double>(arch.dim()), seed);
}

Matrix InvertibleGcn::forward_impl(const Matrix& x, Cache* cache) const {
  const std::size_t d = dim(), s = arch_.channels, n = arch_.nodes();
  if (x.cols() != d) {
    throw InvalidArgument("forward_trunk: expected " + std::to_string(d) + " inputs, got " +
                          std::to_string(x.cols()));
  }
  const std::size_t batch = x.rows();
  if (cache) cache->layers.resize(layers_.size());
  Matrix h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    Matrix pre(batch, d);
    if (layer.uses_adjacency) {
      Matrix pre_agg(batch * s, n);
      mview(pre_agg).noalias() = cview(h, batch * s, n) * cview(adjacency_).transpose();
      Matrix agg = pre_agg;
      if (arch_.aggregation == AggregationActivation::leaky_relu) apply_leaky(agg);
      auto w = cview(layer.weight);
      auto src = cview(agg);
      auto dst = mview(pre, batch * s, n);
      for (std::size_t b = 0; b < batch; ++b) {
        dst.middleRows(b * s, s).noalias() = w.transpose() * src.middleRows(b * s, s);
      }
      if (cache) {
        cache->layers[l].pre_agg = std::move(pre_agg);
        cache->layers[l].agg = std::move(agg);
      }
    } else {
      mview(pre).noalias() = cview(h) * cview(layer.weight);
    }
    Matrix out = pre;
    apply_leaky(out);
    if (cache) {
      cache->layers[l].input = std::move(h);
      cache->layers[l].pre = std::move(pre);
    }
    h = std::move(out);
  }
  return h;
}

Matrix InvertibleGcn::backward_impl(const Cache& cache, Matrix d_out, GcnGradients* grads) const {
  const std::size_t s = arch_.channels, n = arch_.nodes();
  const std::size_t batch = d_out.rows();
  if (grads) {
    grads->adjacency = Matrix(adjacency_.rows(), adjacency_.cols());
    grads->weights.clear();
    for (const auto& layer : layers_) {
      grads->weights.emplace_back(layer.weight.rows(), layer.weight.cols());
    }
  }
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const auto& layer = layers_[l];
    const auto& lc = cache.layers[l];
    Matrix d_pre = std::move(d_out);
    scale_by_slope(d_pre, lc.pre);
    if (layer.uses_adjacency) {
      auto w = cview(layer.weight);
      auto agg = cview(lc.agg);
      auto dy = cview(d_pre, batch * s, n);
      Matrix d_agg(batch * s, n);
      auto dagg = mview(d_agg);
      Eigen::MatrixXd dw = Eigen::MatrixXd::Zero(s, s);
      for (std::size_t b = 0; b < batch; ++b) {
        if (grads) dw.noalias() += agg.middleRows(b * s, s) * dy.middleRows(b * s, s).transpose();
        dagg.middleRows(b * s, s).noalias() = w * dy.middleRows(b * s, s);
      }
      if (arch_.aggregation == AggregationActivation::leaky_relu) scale_by_slope(d_agg, lc.pre_agg);
      if (grads) {
        mview(grads->weights[l]) = dw;
        mview(grads->adjacency).noalias() +=
            cview(d_agg).transpose() * cview(lc.input, batch * s, n);
      }
      Matrix d_in(batch, dim());
      mview(d_in, batch * s, n).noalias() = cview(d_agg) * cview(adjacency_);
      d_out = std::move(d_in);
    } else {
      if (grads) mview(grads->weights[l]).noalias() = cview(lc.input).transpose() * cview(d_pre);
      Matrix d_in(batch, dim());
      mview(d_in).noalias() = cview(d_pre) * cview(layer.weight).transpose();
      d_out = std::move(d_in);
    }
  }
  return d_out;
}

std::vector<double> InvertibleGcn::forward_trunk(std::span<const double> x) const {
  Matrix row(1, x.size(), std::vector<double>(x.begin(), x.end()));
  Matrix out = forward_impl(row, nullptr);
  return {out.values().begin(), out.values().end()};
}

Matrix InvertibleGcn::forward_trunk_rows(const Matrix& x) const { return forward_impl(x, nullptr); }

Matrix InvertibleGcn::invert_trunk_rows(const Matrix& h) const {
  const std::size_t d = dim(), s = arch_.channels, n = arch_.nodes();
  if (h.cols() != d) throw InvalidArgument("invert_trunk: dimension mismatch");
  check_invertible();
  const std::size_t batch = h.rows();
  Matrix cur = h;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const auto& layer = layers_[l];
    apply_leaky_inverse(cur);
    const Matrix wt = transpose(layer.weight);
    if (layer.uses_adjacency) {
      // Per sample W^T P1_b = Y_b; all samples share W, so solve them side by side.
      Matrix y_cat(s, batch * n);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < s; ++i)
          for (std::size_t m = 0; m < n; ++m) y_cat(i, b * n + m) = cur(b, i * n + m);
      Matrix agg_cat = solve_linear(wt, y_cat);
      if (arch_.aggregation == AggregationActivation::leaky_relu) apply_leaky_inverse(agg_cat);
      // agg_b = U_b A^T  =>  A U_b^T = agg_b^T.
      Matrix agg_t(n, batch * s);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < s; ++i)
          for (std::size_t m = 0; m < n; ++m) agg_t(m, b * s + i) = agg_cat(i, b * n + m);
      Matrix u_t = solve_linear(adjacency_, agg_t);
      Matrix next(batch, d);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < s; ++i)
          for (std::size_t m = 0; m < n; ++m) next(b, i * n + m) = u_t(m, b * s + i);
      cur = std::move(next);
    } else {
      // Row form: cur = prev W  =>  W^T prev^T = cur^T.
      cur = transpose(solve_linear(wt, transpose(cur)));
    }
  }
  return cur;
}

std::vector<double> InvertibleGcn::invert_trunk(std::span<const double> h) const {
  Matrix row(1, h.size(), std::vector<double>(h.begin(), h.end()));
  Matrix out = invert_trunk_rows(row);
  return {out.values().begin(), out.values().end()};
}

namespace {

// Two-way softmax over the designated coordinates; returns (p0, p1).
std::array<double, 2> head(double z_no, double z_change) {
  const double m = std::max(z_no, z_change);
  const double e0 = std::exp(z_no - m), e1 = std::exp(z_change - m);
  return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

}  // namespace

Matrix InvertibleGcn::class_probs_rows(const Matrix& x) const {
  Matrix out = forward_impl(x, nullptr);
  Matrix probs(x.rows(), 2);
  for (std::size_t b = 0; b < x.rows(); ++b) {
    auto p = head(out(b, arch_.no_change_coord), out(b, arch_.change_coord));
    probs(b, 0) = p[0];
    probs(b, 1) = p[1];
  }
  return probs;
}

std::array<double, 2> InvertibleGcn::class_probs(std::span<const double> x) const {
  Matrix row(1, x.size(), std::vector<double>(x.begin(), x.end()));
  Matrix p = class_probs_rows(row);
  return {p(0, 0), p(0, 1)};
}

ClassGradients InvertibleGcn::class_gradients_rows(const Matrix& v) const {
  Cache cache;
  Matrix out = forward_impl(v, &cache);
  const std::size_t batch = v.rows();
  ClassGradients res{Matrix(batch, 2), Matrix()};
  Matrix seed(batch, dim());
  for (std::size_t b = 0; b < batch; ++b) {
    auto p = head(out(b, arch_.no_change_coord), out(b, arch_.change_coord));
    res.probs(b, 0) = p[0];
    res.probs(b, 1) = p[1];
    // d p1 / d z1 = p0 p1, d p1 / d z0 = -p0 p1.
    seed(b, arch_.change_coord) = p[0] * p[1];
    seed(b, arch_.no_change_coord) = -p[0] * p[1];
  }
  res.grad_change = backward_impl(cache, std::move(seed), nullptr);
  return res;
}

std::vector<double> InvertibleGcn::input_gradient(std::span<const double> v, int c) const {
  if (c != 0 && c != 1) throw InvalidArgument("input_gradient: class must be 0 or 1");
  Matrix row(1, v.size(), std::vector<double>(v.begin(), v.end()));
  ClassGradients g = class_gradients_rows(row);
  std::vector<double> out(g.grad_change.values().begin(), g.grad_change.values().end());
  if (c == 0) {
    for (double& x : out) x = -x;
  }
  return out;
}

double ortho_penalty(const Matrix& m) {
  Matrix r = multiply_at_b(m, m);
  for (std::size_t i = 0; i < r.rows(); ++i) r(i, i) -= 1.0;
  return frobenius_norm(r);
}

Matrix ortho_penalty_gradient(const Matrix& m) {
  Matrix r = multiply_at_b(m, m);
  for (std::size_t i = 0; i < r.rows(); ++i) r(i, i) -= 1.0;
  const double f = frobenius_norm(r);
  if (f == 0.0) return Matrix(m.rows(), m.cols());
  Matrix g = m * r;
  g *= 2.0 / f;
  return g;
}

double InvertibleGcn::ortho_residual() const {
  double total = 0.0;
  bool any_graph = false;
  for (const auto& layer : layers_) {
    total += ortho_penalty(layer.weight);
    any_graph = any_graph || layer.uses_adjacency;
  }
  if (any_graph) total += ortho_penalty(adjacency_);
  return total;
}

double InvertibleGcn::lipschitz_estimate() const {
  double m = 1.0;
  std::optional<double> adjacency_norm;
  for (const auto& layer : layers_) {
    m *= spectral_norm(layer.weight) * kPositiveSlope;
    if (layer.uses_adjacency) {
      if (!adjacency_norm) adjacency_norm = spectral_norm(adjacency_);
      m *= *adjacency_norm;
      if (arch_.aggregation == AggregationActivation::leaky_relu) m *= kPositiveSlope;
    }
  }
  return m;
}

void InvertibleGcn::check_invertible() const {
  bool any_graph = false;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const double pivot = min_lu_pivot(layers_[l].weight);
    if (!(pivot > kInvertiblePivot)) {
      throw SingularMatrix("layer " + std::to_string(l + 1) + " weight is singular (pivot " +
                           std::to_string(pivot) + ")");
    }
    any_graph = any_graph || layers_[l].uses_adjacency;
  }
  if (any_graph) {
    const double pivot = min_lu_pivot(adjacency_);
    if (!(pivot > kInvertiblePivot)) {
      throw SingularMatrix("adjacency is singular (pivot " + std::to_string(pivot) + ")");
    }
  }
}

double InvertibleGcn::cross_entropy(const Matrix& x, std::span<const int> labels,
                                    std::span<const double> weights) const {
  if (labels.size() != x.rows()) throw InvalidArgument("cross_entropy: label count mismatch");
  if (!weights.empty() && weights.size() != x.rows()) {
    throw InvalidArgument("cross_entropy: weight count mismatch");
  }
  if (x.rows() == 0) return 0.0;
  Matrix out = forward_impl(x, nullptr);
  double total = 0.0;
  for (std::size_t b = 0; b < x.rows(); ++b) {
    const double z0 = out(b, arch_.no_change_coord), z1 = out(b, arch_.change_coord);
    const double m = std::max(z0, z1);
    const double lse = m + std::log(std::exp(z0 - m) + std::exp(z1 - m));
    total += (weights.empty() ? 1.0 : weights[b]) * (lse - (labels[b] == 1 ? z1 : z0));
  }
  return total / static_cast<double>(x.rows());
}

GcnGradients InvertibleGcn::loss_gradients(const Matrix& x, std::span<const int> labels,
                                           double ce_weight, double lambda,
                                           std::span<const double> weights) const {
  if (labels.size() != x.rows()) throw InvalidArgument("loss_gradients: label count mismatch");
  if (!weights.empty() && weights.size() != x.rows()) {
    throw InvalidArgument("loss_gradients: weight count mismatch");
  }
  GcnGradients grads;
  const std::size_t batch = x.rows();
  if (ce_weight != 0.0 && batch > 0) {
    Cache cache;
    Matrix out = forward_impl(x, &cache);
    Matrix seed(batch, dim());
    const double scale = ce_weight / static_cast<double>(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      auto p = head(out(b, arch_.no_change_coord), out(b, arch_.change_coord));
      const double y = labels[b] == 1 ? 1.0 : 0.0;
      const double sw = scale * (weights.empty() ? 1.0 : weights[b]);
      seed(b, arch_.change_coord) = sw * (p[1] - y);
      seed(b, arch_.no_change_coord) = sw * (p[0] - (1.0 - y));
    }
    backward_impl(cache, std::move(seed), &grads);
  } else {
    grads.adjacency = Matrix(adjacency_.rows(), adjacency_.cols());
    for (const auto& layer : layers_) grads.weights.emplace_back(layer.weight.rows(), layer.weight.cols());
  }
  bool any_graph = false;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    grads.weights[l] += lambda * ortho_penalty_gradient(layers_[l].weight);
    any_graph = any_graph || layers_[l].uses_adjacency;
  }
  if (any_graph) grads.adjacency += lambda * ortho_penalty_gradient(adjacency_);
  return grads;
}

void InvertibleGcn::apply_step(const GcnGradients& g, double learning_rate) {
  bool any_graph = false;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    layers_[l].weight -= learning_rate * g.weights[l];
    any_graph = any_graph || layers_[l].uses_adjacency;
  }
  if (any_graph) adjacency_ -= learning_rate * g.adjacency;
}

TrainResult train(const InvertibleGcn& net, const Matrix& x, std::span<const int> labels,
                  const TrainConfig& cfg) {
  if (labels.size() != x.rows()) throw InvalidArgument("train: label count mismatch");
  if (x.cols() != net.dim()) throw InvalidArgument("train: sample dimension mismatch");
  const auto positives = std::count(labels.begin(), labels.end(), 1);
  const auto negatives = std::count(labels.begin(), labels.end(), 0);
  if (positives + negatives != static_cast<std::ptrdiff_t>(labels.size())) {
    throw InvalidArgument("train: labels must be 0 or 1");
  }
  if (positives == 0 || negatives == 0) {
    throw InvalidArgument("train: both classes must be present");
  }
  if (cfg.epochs == 0 || cfg.batch_size == 0 || !(cfg.learning_rate > 0.0)) {
    throw InvalidArgument("train: epochs, batch_size and learning_rate must be positive");
  }
  const double lambda = cfg.lambda.value_or(net.lambda());
  if (!(lambda > 0.0)) throw InvalidArgument("train: lambda must be positive");

  std::vector<double> weights;
  if (cfg.class_balanced) {
    const double half = 0.5 * static_cast<double>(labels.size());
    const double wp = half / static_cast<double>(positives);
    const double wn = half / static_cast<double>(negatives);
    for (int y : labels) weights.push_back(y == 1 ? wp : wn);
  }

  TrainResult res{net, {}, {}};
  Rng rng(cfg.seed);
  const std::size_t total = x.rows();
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t d = x.cols();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.batch_size < total) rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < total; start += cfg.batch_size) {
      const std::size_t stop = std::min(total, start + cfg.batch_size);
      Matrix xb(stop - start, d);
      std::vector<int> yb(stop - start);
      std::vector<double> wb(weights.empty() ? 0 : stop - start);
      for (std::size_t i = start; i < stop; ++i) {
        auto src = x.row(order[i]);
        std::copy(src.begin(), src.end(), xb.row(i - start).begin());
        yb[i - start] = labels[order[i]];
        if (!weights.empty()) wb[i - start] = weights[order[i]];
      }
      GcnGradients g = res.net.loss_gradients(xb, yb, cfg.ce_weight, lambda, wb);
      res.net.apply_step(g, cfg.learning_rate);
    }
    const double residual = res.net.ortho_residual();
    res.ortho_residual.push_back(residual);
    res.loss.push_back(cfg.ce_weight * res.net.cross_entropy(x, labels, weights) + lambda * residual);
  }
  return res;
}

}  // namespace exal
