#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace exal {

/// Dense row-major matrix of doubles.
///
/// This is the value type shared by every module: data matrices (one sample
/// per column or per row, as documented at each call site), membership
/// matrices, exemplar sets and network weights.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix diagonal(std::span<const double> diag);
  static Matrix column(std::span<const double> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  bool is_square() const noexcept { return rows_ == cols_; }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }
  std::vector<double> col(std::size_t c) const;
  void set_col(std::size_t c, std::span<const double> values);

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  /// Reinterprets the storage with a new shape of the same element count.
  Matrix reshaped(std::size_t rows, std::size_t cols) const;

  Matrix& operator+=(const Matrix& other);
  Matrix& operator-=(const Matrix& other);
  Matrix& operator*=(double s) noexcept;

  bool all_finite() const noexcept;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);
Matrix operator*(double s, Matrix a);

/// Matrix product.
Matrix operator*(const Matrix& a, const Matrix& b);
/// a^T * b without materialising the transpose.
Matrix multiply_at_b(const Matrix& a, const Matrix& b);
/// a * b^T without materialising the transpose.
Matrix multiply_a_bt(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& m);
Matrix hadamard(const Matrix& a, const Matrix& b);

std::vector<double> row_sums(const Matrix& m);
std::vector<double> col_sums(const Matrix& m);

/// Max absolute row sum.
double norm_inf(const Matrix& m);
/// Max absolute entry.
double max_abs(const Matrix& m);
/// Entrywise L1 norm.
double norm_l1(const Matrix& m);
double frobenius_norm(const Matrix& m);

}  // namespace exal
