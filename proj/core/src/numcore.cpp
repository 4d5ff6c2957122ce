#include "exal/numcore.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "exal/error.hpp"

namespace exal {
namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr double kRelativePivotFloor = 1e-12;
constexpr double kPowerTolerance = 1e-8;
constexpr int kPowerMaxIterations = 10'000;

RowMajor to_eigen(const Matrix& m) {
  return Eigen::Map<const RowMajor>(m.data(), m.rows(), m.cols());
}

Matrix from_eigen(const RowMajor& e) {
  Matrix out(e.rows(), e.cols());
  Eigen::Map<RowMajor>(out.data(), e.rows(), e.cols()) = e;
  return out;
}

// In-place LU with partial pivoting; returns the row permutation and the
// smallest absolute pivot. Stops early (returning the offending pivot) when a
// pivot drops below `floor`.
struct LuResult {
  std::vector<std::size_t> perm;
  double min_pivot;
  bool singular;
};

LuResult lu_decompose(Matrix& a, double floor) {
  const std::size_t n = a.rows();
  LuResult res{std::vector<std::size_t>(n), n == 0 ? 0.0 : INFINITY, false};
  for (std::size_t i = 0; i < n; ++i) res.perm[i] = i;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t p = k;
    double best = std::abs(a(k, k));
    for (std::size_t r = k + 1; r < n; ++r) {
      if (std::abs(a(r, k)) > best) {
        best = std::abs(a(r, k));
        p = r;
      }
    }
    res.min_pivot = std::min(res.min_pivot, best);
    if (best < floor) {
      res.singular = true;
      return res;
    }
    if (p != k) {
      std::swap_ranges(a.row(k).begin(), a.row(k).end(), a.row(p).begin());
      std::swap(res.perm[k], res.perm[p]);
    }
    const double pivot = a(k, k);
    for (std::size_t r = k + 1; r < n; ++r) {
      const double factor = a(r, k) / pivot;
      a(r, k) = factor;
      if (factor == 0.0) continue;
      auto dst = a.row(r);
      auto src = a.row(k);
      for (std::size_t c = k + 1; c < n; ++c) dst[c] -= factor * src[c];
    }
  }
  return res;
}

}  // namespace

Matrix stable_row_softmax(const Matrix& logits) {
  if (!logits.all_finite()) throw InvalidArgument("stable_row_softmax: non-finite logits");
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto in = logits.row(r);
    auto dst = out.row(r);
    if (in.empty()) continue;
    const double mx = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      dst[c] = std::exp(in[c] - mx);
      total += dst[c];
    }
    for (double& v : dst) v /= total;
  }
  return out;
}

Matrix solve_linear(const Matrix& m, const Matrix& b) {
  if (!m.is_square()) throw InvalidArgument("solve_linear: matrix is not square");
  if (b.rows() != m.rows()) throw InvalidArgument("solve_linear: right-hand side row mismatch");
  const std::size_t n = m.rows();
  Matrix lu = m;
  const double floor = kRelativePivotFloor * norm_inf(m);
  LuResult fact = lu_decompose(lu, floor);
  if (fact.singular || (n > 0 && norm_inf(m) == 0.0)) {
    throw SingularMatrix("solve_linear: pivot " + std::to_string(fact.min_pivot) +
                         " below threshold " + std::to_string(floor));
  }
  const std::size_t k = b.cols();
  Matrix x(n, k);
  for (std::size_t r = 0; r < n; ++r) {
    auto src = b.row(fact.perm[r]);
    std::copy(src.begin(), src.end(), x.row(r).begin());
  }
  // Forward substitution with unit-lower L.
  for (std::size_t r = 1; r < n; ++r) {
    auto xr = x.row(r);
    for (std::size_t c = 0; c < r; ++c) {
      const double l = lu(r, c);
      if (l == 0.0) continue;
      auto xc = x.row(c);
      for (std::size_t j = 0; j < k; ++j) xr[j] -= l * xc[j];
    }
  }
  // Back substitution with U.
  for (std::size_t rr = n; rr-- > 0;) {
    auto xr = x.row(rr);
    for (std::size_t c = rr + 1; c < n; ++c) {
      const double u = lu(rr, c);
      if (u == 0.0) continue;
      auto xc = x.row(c);
      for (std::size_t j = 0; j < k; ++j) xr[j] -= u * xc[j];
    }
    const double d = lu(rr, rr);
    for (std::size_t j = 0; j < k; ++j) xr[j] /= d;
  }
  return x;
}

double min_lu_pivot(const Matrix& m) {
  if (!m.is_square()) throw InvalidArgument("min_lu_pivot: matrix is not square");
  Matrix lu = m;
  return lu_decompose(lu, 0.0).min_pivot;
}

double spectral_norm(const Matrix& m) {
  if (m.empty()) throw InvalidArgument("spectral_norm: empty matrix");
  if (max_abs(m) == 0.0) return 0.0;
  const std::size_t n = m.cols();
  Rng rng(0x5eed'5eedULL);
  Matrix v(n, 1);
  for (double& x : v.values()) x = rng.normal();
  v *= 1.0 / frobenius_norm(v);

  double sigma = 0.0;
  for (int it = 0; it < kPowerMaxIterations; ++it) {
    Matrix mv = m * v;
    const double next = frobenius_norm(mv);
    Matrix w = multiply_at_b(m, mv);
    const double wn = frobenius_norm(w);
    if (wn == 0.0) return next;
    v = w * (1.0 / wn);
    if (std::abs(next - sigma) <= kPowerTolerance * next) return next;
    sigma = next;
  }
  return sigma;
}

Matrix random_orthonormal(std::size_t n, Rng& rng) {
  RowMajor g(n, n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) g(r, c) = rng.normal();
  Eigen::HouseholderQR<RowMajor> qr(g);
  RowMajor q = qr.householderQ();
  const RowMajor& r = qr.matrixQR();
  for (std::size_t c = 0; c < n; ++c) {
    if (r(c, c) < 0) q.col(c) *= -1.0;
  }
  return from_eigen(q);
}

Matrix polar_factor(const Matrix& m) {
  if (!m.is_square()) throw InvalidArgument("polar_factor: matrix is not square");
  Eigen::JacobiSVD<RowMajor> svd(to_eigen(m), Eigen::ComputeFullU | Eigen::ComputeFullV);
  RowMajor q = svd.matrixU() * svd.matrixV().transpose();
  return from_eigen(q);
}

}  // namespace exal
