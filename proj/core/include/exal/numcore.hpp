#pragma once

#include "exal/matrix.hpp"
#include "exal/rng.hpp"

namespace exal {

/// Row-wise softmax computed with a per-row max shift.
/// Throws InvalidArgument on non-finite input.
Matrix stable_row_softmax(const Matrix& logits);

/// Solves M X = B by LU with partial pivoting.
/// Throws SingularMatrix when a pivot falls below 1e-12 * ||M||_inf.
Matrix solve_linear(const Matrix& m, const Matrix& b);

/// Largest singular value by power iteration on M^T M
/// (relative tolerance 1e-8, at most 10'000 iterations).
double spectral_norm(const Matrix& m);

/// Smallest absolute pivot met by partially pivoted elimination of M.
double min_lu_pivot(const Matrix& m);

/// Haar-distributed orthonormal matrix (QR of a Gaussian matrix, signs fixed
/// so that R has a positive diagonal).
Matrix random_orthonormal(std::size_t n, Rng& rng);

/// Nearest orthonormal matrix to M in Frobenius norm (U V^T from the SVD).
Matrix polar_factor(const Matrix& m);

}  // namespace exal
