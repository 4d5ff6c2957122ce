#include "exal/exemplar.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>

#include "exal/error.hpp"
#include "exal/numcore.hpp"

namespace exal {
namespace {

constexpr double kLogFloor = 1e-300;

double safe_log(double v) { return std::log(std::max(v, kLogFloor)); }

void require(bool ok, const std::string& msg) {
  if (!ok) throw InvalidArgument(msg);
}

// Half squared distances between the rows of a (K x d) and b (n x d).
Matrix half_sq_distances_rows(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.rows());
  const std::size_t d = a.cols();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* vk = a.row(k).data();
    for (std::size_t i = 0; i < b.rows(); ++i) {
      const double* xi = b.row(i).data();
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = vk[j] - xi[j];
        s += diff * diff;
      }
      out(k, i) = 0.5 * s;
    }
  }
  return out;
}

// Same quantity through one product, 0.5(|v|^2 + |x|^2 - 2 v.x), for the
// solver's inner loop. x is d x n; x_sq holds the half squared column norms.
Matrix half_sq_distances_gemm(const Matrix& v, const Matrix& x, std::span<const double> x_sq) {
  Matrix out = transpose(v) * x;
  const std::size_t d = v.rows();
  for (std::size_t k = 0; k < v.cols(); ++k) {
    double vk = 0.0;
    for (std::size_t r = 0; r < d; ++r) vk += v(r, k) * v(r, k);
    vk *= 0.5;
    auto row = out.row(k);
    for (std::size_t i = 0; i < row.size(); ++i) row[i] = std::max(0.0, vk + x_sq[i] - row[i]);
  }
  return out;
}

std::vector<double> half_sq_col_norms(const Matrix& x) {
  std::vector<double> out(x.cols(), 0.0);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = x.row(r);
    for (std::size_t i = 0; i < x.cols(); ++i) out[i] += row[i] * row[i];
  }
  for (double& v : out) v *= 0.5;
  return out;
}

Matrix mu_from_distances(const Matrix& dist, const Matrix& mu_prev, const SolverConfig& cfg) {
  const std::size_t k = dist.rows(), n = dist.cols();
  require(mu_prev.rows() == n && mu_prev.cols() == k, "mu_step: mu_prev must be n x K");
  const std::vector<double> mass = col_sums(mu_prev);
  std::vector<double> diversity(k);
  for (std::size_t j = 0; j < k; ++j) diversity[j] = cfg.alpha * (1.0 + safe_log(mass[j]));
  Matrix logits(n, k);
  const double inv_gamma = 1.0 / cfg.gamma;
  for (std::size_t i = 0; i < n; ++i) {
    auto row = logits.row(i);
    for (std::size_t j = 0; j < k; ++j) {
      row[j] = -inv_gamma * (cfg.rep_weight * dist(j, i) + diversity[j]);
    }
  }
  return stable_row_softmax(logits);
}

double objective_from_distances(const Matrix& dist, const Matrix& v, const Matrix& mu,
                                const InvertibleGcn* net, const SolverConfig& cfg) {
  const std::size_t k = dist.rows(), n = dist.cols();
  double rep = 0.0, reg = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const double m = mu(i, j);
      rep += m * dist(j, i);
      if (m > 0.0) reg += m * safe_log(m);
    }
  }
  double div = 0.0;
  for (double m : col_sums(mu)) div += m * safe_log(m);
  double amb = 0.0;
  if (net != nullptr && cfg.beta != 0.0) {
    Matrix probs = net->class_probs_rows(transpose(v));
    for (double p : probs.values()) amb += p * safe_log(p);
  }
  return cfg.rep_weight * rep + cfg.alpha * div + cfg.beta * amb + cfg.gamma * reg;
}

}  // namespace

void validate(const SolverConfig& cfg) {
  require(cfg.alpha >= 0.0 && cfg.beta >= 0.0, "solver: alpha and beta must be nonnegative");
  require(cfg.gamma > 0.0, "solver: gamma must be positive");
  require(cfg.rep_weight >= 0.0 && cfg.rep_weight <= 1.0, "solver: rep_weight must be in [0,1]");
  require(cfg.display_size >= 1, "solver: display size must be at least 1");
  require(cfg.epsilon > 0.0, "solver: epsilon must be positive");
  require(std::isfinite(cfg.alpha) && std::isfinite(cfg.beta) && std::isfinite(cfg.gamma),
          "solver: weights must be finite");
}

Matrix distance_matrix(const Matrix& v, const Matrix& x) {
  require(v.rows() == x.rows(), "distance_matrix: exemplar and data dimensions differ");
  return half_sq_distances_rows(transpose(v), transpose(x));
}

Matrix mu_step(const Matrix& x, const Matrix& v, const Matrix& mu_prev, const SolverConfig& cfg) {
  validate(cfg);
  return mu_from_distances(distance_matrix(v, x), mu_prev, cfg);
}

Matrix ambiguity_gradient(const Matrix& v, const InvertibleGcn& net) {
  require(v.rows() == net.dim(), "ambiguity_gradient: exemplar dimension mismatch");
  ClassGradients cg = net.class_gradients_rows(transpose(v));
  Matrix out(v.rows(), v.cols());
  for (std::size_t k = 0; k < v.cols(); ++k) {
    const double p0 = cg.probs(k, 0), p1 = cg.probs(k, 1);
    // grad f_0 = -grad f_1.
    const double w1 = safe_log(p1) + 1.0;
    const double w0 = safe_log(p0) + 1.0;
    auto g = cg.grad_change.row(k);
    for (std::size_t j = 0; j < v.rows(); ++j) out(j, k) = g[j] * w1 - g[j] * w0;
  }
  return out;
}

Matrix v_step_ambient(const Matrix& x, const Matrix& v_prev, const Matrix& mu,
                      const InvertibleGcn* net, const SolverConfig& cfg) {
  validate(cfg);
  const std::size_t d = x.rows(), n = x.cols(), k = v_prev.cols();
  require(v_prev.rows() == d, "v_step: exemplar dimension mismatch");
  require(mu.rows() == n && mu.cols() == k, "v_step: mu must be n x K");
  const std::vector<double> mass = col_sums(mu);
  for (std::size_t j = 0; j < k; ++j) {
    if (!(mass[j] > 0.0)) {
      throw InvalidArgument("v_step: exemplar " + std::to_string(j) + " attracts no mass");
    }
  }
  Matrix v_hat = x * mu;
  v_hat *= cfg.rep_weight;
  if (cfg.beta != 0.0) {
    require(net != nullptr, "v_step: beta > 0 needs a network");
    // Stationarity of the objective in V: m_k V_k = (X mu)_k - beta * grad amb.
    Matrix g = ambiguity_gradient(v_prev, *net);
    g *= cfg.beta;
    v_hat -= g;
  }
  if (cfg.rep_weight != 1.0) {
    const double keep = 1.0 - cfg.rep_weight;
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t j = 0; j < k; ++j) v_hat(r, j) += keep * mass[j] * v_prev(r, j);
  }
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t j = 0; j < k; ++j) v_hat(r, j) /= mass[j];
  return v_hat;
}

Matrix z_step_latent(const Matrix& x, const Matrix& z_prev, const Matrix& mu,
                     const InvertibleGcn& net, const SolverConfig& cfg) {
  const Matrix v_prev = transpose(net.invert_trunk_rows(transpose(z_prev)));
  const Matrix v_next = v_step_ambient(x, v_prev, mu, &net, cfg);
  return transpose(net.forward_trunk_rows(transpose(v_next)));
}

double objective(const Matrix& x, const Matrix& v, const Matrix& mu, const InvertibleGcn* net,
                 const SolverConfig& cfg) {
  require(mu.rows() == x.cols() && mu.cols() == v.cols(), "objective: mu must be n x K");
  return objective_from_distances(distance_matrix(v, x), v, mu, net, cfg);
}

void check_row_stochastic(const Matrix& mu, double tol) {
  for (std::size_t i = 0; i < mu.rows(); ++i) {
    double s = 0.0;
    for (double m : mu.row(i)) {
      if (!(m >= 0.0)) {
        throw std::logic_error("membership row " + std::to_string(i) + " has a negative entry");
      }
      s += m;
    }
    if (!(std::abs(s - 1.0) <= tol)) {
      throw std::logic_error("membership row " + std::to_string(i) + " sums to " +
                             std::to_string(s));
    }
  }
}

Matrix initial_exemplars(const Matrix& x, std::size_t k, Rng& rng) {
  require(k <= x.cols(), "solver: display size exceeds the number of samples");
  Matrix v(x.rows(), k);
  const auto picks = rng.sample_without_replacement(x.cols(), k);
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t r = 0; r < x.rows(); ++r) v(r, j) = x(r, picks[j]);
  return v;
}

SolveResult solve(const Matrix& x, const InvertibleGcn* net, const SolverConfig& cfg) {
  validate(cfg);
  require(x.cols() >= cfg.display_size, "solver: display size exceeds the number of samples");
  Rng rng(cfg.seed);
  Rng init_rng = rng.split(1);
  Matrix v0 = initial_exemplars(x, cfg.display_size, init_rng);
  return solve(x, net, cfg, v0);
}

SolveResult solve(const Matrix& x, const InvertibleGcn* net, const SolverConfig& cfg,
                  const Matrix& initial_v) {
  validate(cfg);
  const std::size_t n = x.cols(), k = cfg.display_size;
  require(n > 0, "solver: empty data");
  require(initial_v.rows() == x.rows() && initial_v.cols() == k,
          "solver: initial exemplars must be d x K");
  require(x.all_finite() && initial_v.all_finite(), "solver: non-finite input");
  const bool latent = cfg.space == ExemplarSpace::latent;
  require(!latent || net != nullptr, "solver: latent mode needs a network");
  require(cfg.beta == 0.0 || net != nullptr, "solver: beta > 0 needs a network");
  if (latent) net->check_invertible();

  const std::vector<double> x_sq = half_sq_col_norms(x);
  Rng rng(cfg.seed);
  Rng mu_rng = rng.split(2);

  // Random memberships, normalised, then made consistent with V^(0) by one
  // membership update.
  Matrix mu(n, k);
  for (double& m : mu.values()) m = mu_rng.uniform();
  for (std::size_t i = 0; i < n; ++i) {
    auto row = mu.row(i);
    double s = 0.0;
    for (double m : row) s += m;
    for (double& m : row) m /= s;
  }
  Matrix v = initial_v;
  Matrix z;
  if (latent) {
    z = transpose(net->forward_trunk_rows(transpose(v)));
    v = transpose(net->invert_trunk_rows(transpose(z)));
  }
  mu = mu_from_distances(half_sq_distances_gemm(v, x, x_sq), mu, cfg);
  check_row_stochastic(mu);

  SolveResult res;
  double best_objective = std::numeric_limits<double>::infinity();
  Matrix best_v, best_z, best_mu;
  double delta = std::numeric_limits<double>::infinity();
  std::size_t tau = 0;
  while (delta >= cfg.epsilon && tau < cfg.maxiter) {
    const Matrix dist = half_sq_distances_gemm(v, x, x_sq);
    const double obj = objective_from_distances(dist, v, mu, net, cfg);
    if (obj < best_objective) {
      best_objective = obj;
      best_v = v;
      best_z = z;
      best_mu = mu;
    }
    Matrix mu_next = mu_from_distances(dist, mu, cfg);
    check_row_stochastic(mu_next);
    SweepRecord rec{tau, 0.0, 0.0, obj};
    rec.l1_delta_mu = norm_l1(mu_next - mu);
    if (latent) {
      Matrix z_next = z_step_latent(x, z, mu, *net, cfg);
      rec.l1_delta_v = norm_l1(z_next - z);
      z = std::move(z_next);
      v = transpose(net->invert_trunk_rows(transpose(z)));
    } else {
      Matrix v_next = v_step_ambient(x, v, mu, net, cfg);
      rec.l1_delta_v = norm_l1(v_next - v);
      v = std::move(v_next);
    }
    mu = std::move(mu_next);
    delta = rec.l1_delta_mu + rec.l1_delta_v;
    res.trace.push_back(rec);
    ++tau;
  }
  res.iterations = tau;
  res.converged = delta < cfg.epsilon;
  if (!res.converged) {
    const Matrix dist = half_sq_distances_gemm(v, x, x_sq);
    if (objective_from_distances(dist, v, mu, net, cfg) > best_objective) {
      v = std::move(best_v);
      z = std::move(best_z);
      mu = std::move(best_mu);
    }
  }
  res.v = std::move(v);
  res.z = std::move(z);
  res.mu = std::move(mu);
  return res;
}

void write_trace_csv(const SolveResult& result, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "sweep,l1_delta_mu,l1_delta_v,objective\n";
  out << std::setprecision(17);
  for (const auto& r : result.trace) {
    out << r.sweep << ',' << r.l1_delta_mu << ',' << r.l1_delta_v << ',' << r.objective << '\n';
  }
}

}  // namespace exal
