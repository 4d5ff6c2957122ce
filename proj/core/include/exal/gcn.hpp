#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "exal/matrix.hpp"

namespace exal {

/// Leaky-ReLU slopes; fixed because the Lipschitz bound depends on them.
inline constexpr double kPositiveSlope = 0.99;
inline constexpr double kNegativeSlope = 0.95;

enum class AggregationActivation { identity, leaky_relu };

enum class AdjacencyInit {
  /// Nearest orthonormal matrix to the row-normalised pixel grid.
  polar_grid,
  identity,
};

struct GcnArchitecture {
  std::size_t grid_h = 8;
  std::size_t grid_w = 8;
  std::size_t channels = 3;
  std::size_t graph_layers = 1;
  std::size_t dense_layers = 2;
  AggregationActivation aggregation = AggregationActivation::identity;
  /// Trunk output coordinates read by the two-way softmax head.
  std::size_t no_change_coord = 0;
  std::size_t change_coord = 1;

  std::size_t nodes() const noexcept { return grid_h * grid_w; }
  std::size_t dim() const noexcept { return channels * nodes(); }
  std::size_t depth() const noexcept { return graph_layers + dense_layers; }
};

/// One square layer of the trunk. Graph layers hold an s x s channel-mixing
/// matrix applied after aggregation with the shared adjacency; dense layers
/// hold a d x d matrix acting on the flattened signal.
struct GcnLayer {
  Matrix weight;
  bool uses_adjacency = false;
};

/// Per-sample class probabilities and the input gradient of p(change).
/// The gradient of p(no-change) is its negation.
struct ClassGradients {
  Matrix probs;        // B x 2, columns (no-change, change)
  Matrix grad_change;  // B x d
};

struct GcnGradients {
  Matrix adjacency;
  std::vector<Matrix> weights;
};

/// Bias-free invertible graph convnet. Inference methods are const and
/// thread-safe; training works on copies.
class InvertibleGcn {
 public:
  InvertibleGcn(GcnArchitecture arch, Matrix adjacency, std::vector<GcnLayer> layers,
                double lambda, std::uint64_t seed = 0);

  /// Orthonormal initialisation: W_l from QR of Gaussians, A per `init`.
  static InvertibleGcn orthonormal(const GcnArchitecture& arch, std::uint64_t seed,
                                   AdjacencyInit init = AdjacencyInit::polar_grid);

  const GcnArchitecture& architecture() const noexcept { return arch_; }
  const Matrix& adjacency() const noexcept { return adjacency_; }
  const std::vector<GcnLayer>& layers() const noexcept { return layers_; }
  double lambda() const noexcept { return lambda_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t dim() const noexcept { return arch_.dim(); }

  std::vector<double> forward_trunk(std::span<const double> x) const;
  /// Row-wise trunk map, one sample per row.
  Matrix forward_trunk_rows(const Matrix& x) const;

  std::vector<double> invert_trunk(std::span<const double> h) const;
  Matrix invert_trunk_rows(const Matrix& h) const;

  /// (p(no-change), p(change)).
  std::array<double, 2> class_probs(std::span<const double> x) const;
  Matrix class_probs_rows(const Matrix& x) const;

  /// Exact reverse-mode gradient of p_c with respect to the input.
  std::vector<double> input_gradient(std::span<const double> v, int c) const;
  ClassGradients class_gradients_rows(const Matrix& v) const;

  /// Sum over penalised matrices (A and every W_l) of ||M^T M - I||_F.
  double ortho_residual() const;
  /// Product of per-layer spectral norms times the positive slope.
  double lipschitz_estimate() const;

  /// Throws SingularMatrix if A or any W_l fails the pivot check.
  void check_invertible() const;

  /// Mean cross-entropy of the labelled rows (labels: 1 = change), optionally
  /// with per-row weights.
  double cross_entropy(const Matrix& x, std::span<const int> labels,
                       std::span<const double> weights = {}) const;

  /// Gradients of ce_weight * mean weighted CE + lambda * ortho penalty.
  GcnGradients loss_gradients(const Matrix& x, std::span<const int> labels, double ce_weight,
                              double lambda, std::span<const double> weights = {}) const;

  void apply_step(const GcnGradients& g, double learning_rate);

 private:
  struct Cache;
  Matrix forward_impl(const Matrix& x, Cache* cache) const;
  Matrix backward_impl(const Cache& cache, Matrix d_out, GcnGradients* grads) const;
  void validate() const;

  GcnArchitecture arch_;
  Matrix adjacency_;
  std::vector<GcnLayer> layers_;
  double lambda_;
  std::uint64_t seed_;
};

struct TrainConfig {
  std::size_t epochs = 100;
  double learning_rate = 1e-2;
  std::size_t batch_size = 32;
  /// Regulariser weight; falls back to the network's lambda (1/d by default).
  std::optional<double> lambda;
  std::uint64_t seed = 0;
  /// Weight of the cross-entropy term (0 trains the penalty alone).
  double ce_weight = 1.0;
  /// Weight each class by N / (2 N_class) so both contribute equally.
  bool class_balanced = false;
};

struct TrainResult {
  InvertibleGcn net;
  /// Full-batch objective after each epoch.
  std::vector<double> loss;
  std::vector<double> ortho_residual;
};

/// Mini-batch gradient descent on CE + lambda * sum ||W^T W - I||_F.
/// `x` holds one ambient sample per row. Throws InvalidArgument unless both
/// classes are present.
TrainResult train(const InvertibleGcn& net, const Matrix& x, std::span<const int> labels,
                  const TrainConfig& cfg);

/// Frobenius penalty ||M^T M - I||_F and its gradient 2 M R / ||R||_F.
double ortho_penalty(const Matrix& m);
Matrix ortho_penalty_gradient(const Matrix& m);

void save_model(const InvertibleGcn& net, const std::filesystem::path& dir);
InvertibleGcn load_model(const std::filesystem::path& dir);

}  // namespace exal
