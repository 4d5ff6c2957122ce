#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "exal/gcn.hpp"
#include "exal/matrix.hpp"
#include "exal/rng.hpp"

namespace exal {

enum class ExemplarSpace { ambient, latent };

/// Weights and stopping rule of the virtual-exemplar objective
///
///   rep * tr(mu d(V,X)^T) + alpha [1^T mu] log[1^T mu]^T
///     + beta tr(f(V)^T log f(V)) + gamma tr(mu^T log mu)
///
/// with d = half squared Euclidean distance. `rep_weight` only exists so the
/// ablation grid can switch the representativity term off; it is 1 otherwise.
struct SolverConfig {
  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 1.0;
  double rep_weight = 1.0;
  std::size_t display_size = 16;
  double epsilon = 1e-4;
  std::size_t maxiter = 500;
  ExemplarSpace space = ExemplarSpace::ambient;
  std::uint64_t seed = 0;
};

void validate(const SolverConfig& cfg);

/// K x n matrix of half squared distances between the columns of V (d x K)
/// and X (d x n).
Matrix distance_matrix(const Matrix& v, const Matrix& x);

/// Membership update: row-normalised exp(-(rep*D + alpha(1 + log colsum(mu_prev)))/gamma),
/// evaluated in the log domain. X is d x n, V is d x K, mu_prev is n x K.
Matrix mu_step(const Matrix& x, const Matrix& v, const Matrix& mu_prev, const SolverConfig& cfg);

/// sum_c grad_v f_c(V_k) (log f_c(V_k) + 1) for every column of V (d x K).
Matrix ambiguity_gradient(const Matrix& v, const InvertibleGcn& net);

/// Exemplar update in ambient coordinates. `net` may be null when beta = 0.
Matrix v_step_ambient(const Matrix& x, const Matrix& v_prev, const Matrix& mu,
                      const InvertibleGcn* net, const SolverConfig& cfg);

/// Exemplar update under the latent parameterisation V = f^{-1}(Z).
Matrix z_step_latent(const Matrix& x, const Matrix& z_prev, const Matrix& mu,
                     const InvertibleGcn& net, const SolverConfig& cfg);

/// Full objective; the ambiguity term is skipped when `net` is null.
double objective(const Matrix& x, const Matrix& v, const Matrix& mu, const InvertibleGcn* net,
                 const SolverConfig& cfg);

/// Throws std::logic_error unless every row of mu is a probability vector
/// (entries >= 0, sum within `tol` of 1).
void check_row_stochastic(const Matrix& mu, double tol = 1e-9);

/// K distinct columns of X drawn without replacement.
Matrix initial_exemplars(const Matrix& x, std::size_t k, Rng& rng);

struct SweepRecord {
  std::size_t sweep = 0;
  double l1_delta_mu = 0.0;
  /// ||V' - V||_1 in ambient mode, ||Z' - Z||_1 in latent mode.
  double l1_delta_v = 0.0;
  /// Objective of the iterate entering this sweep.
  double objective = 0.0;
};

struct SolveResult {
  Matrix v;   // d x K ambient exemplars
  Matrix z;   // d x K latent exemplars (latent mode only)
  Matrix mu;  // n x K
  std::size_t iterations = 0;
  bool converged = false;
  std::vector<SweepRecord> trace;
};

/// Alternating fixed-point solve from a random start (K distinct data points
/// and memberships consistent with them).
SolveResult solve(const Matrix& x, const InvertibleGcn* net, const SolverConfig& cfg);
/// Same, starting from the given exemplars (d x K).
SolveResult solve(const Matrix& x, const InvertibleGcn* net, const SolverConfig& cfg,
                  const Matrix& initial_v);

/// Writes sweep, l1_delta_mu, l1_delta_v, objective.
void write_trace_csv(const SolveResult& result, const std::filesystem::path& path);

}  // namespace exal
