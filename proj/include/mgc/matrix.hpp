#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace mgc {

// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  const std::vector<double>& values() const { return data_; }

  void fill(double v);
  Matrix transposed() const;
  bool all_finite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

std::string shape_string(const Matrix& m);

// Throws ShapeError naming `what` and both shapes unless `ok`.
void require_shape(bool ok, const char* what, const Matrix& a, const Matrix& b);

Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(double s, const Matrix& a);
Matrix& operator+=(Matrix& a, const Matrix& b);
Matrix& operator*=(Matrix& a, double s);

// Plain (non-differentiable) product, parallel kernel.
Matrix matmul(const Matrix& a, const Matrix& b);

double frobenius_sq(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);

// Three-way tensor. vec() order iterates index 3 fastest, then 2, then 1:
// flat index = (i * d2 + j) * d3 + k. With this order
// (A kron B kron C) vec(T) == vec(T x1 A x2 B x3 C).
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(std::size_t d1, std::size_t d2, std::size_t d3, double fill = 0.0);
  Tensor3(std::size_t d1, std::size_t d2, std::size_t d3, std::vector<double> data);

  std::size_t dim(int mode) const;
  std::size_t d1() const { return d1_; }
  std::size_t d2() const { return d2_; }
  std::size_t d3() const { return d3_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * d2_ + j) * d3_ + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * d2_ + j) * d3_ + k];
  }

  const std::vector<double>& vec() const { return data_; }
  std::vector<double>& vec() { return data_; }

  // Frontal slice T(:, :, k) as a d1 x d2 matrix.
  Matrix slice3(std::size_t k) const;
  void set_slice3(std::size_t k, const Matrix& m);

  friend bool operator==(const Tensor3&, const Tensor3&) = default;

 private:
  std::size_t d1_ = 0, d2_ = 0, d3_ = 0;
  std::vector<double> data_;
};

// Mode-k matricization, k in {1,2,3}. Row j holds every element whose k-th
// index is j; columns enumerate the remaining two indices with the later
// index fastest.
Matrix unfold(const Tensor3& t, int mode);
Tensor3 refold(const Matrix& m, int mode, std::size_t d1, std::size_t d2, std::size_t d3);

// T x_k A : multiplies every mode-k fiber by A (A has dim(k) columns).
Tensor3 mode_product(const Tensor3& t, const Matrix& a, int mode);

double inner(const Tensor3& a, const Tensor3& b);

}  // namespace mgc
