#include "mgc/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mgc/errors.hpp"
#include "mgc/kernels.hpp"

namespace mgc {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    std::ostringstream os;
    os << "matrix data length " << data_.size() << " does not match " << rows << "x" << cols;
    throw ShapeError(os.str());
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("ragged initializer list for Matrix");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string shape_string(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_shape(bool ok, const char* what, const Matrix& a, const Matrix& b) {
  if (!ok) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a) + " vs " +
                     shape_string(b));
  }
}

Matrix operator+(const Matrix& a, const Matrix& b) {
  Matrix out = a;
  out += b;
  return out;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "sub", a, b);
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.data()[i];
  return out;
}

Matrix operator*(double s, const Matrix& a) {
  Matrix out = a;
  out *= s;
  return out;
}

Matrix& operator+=(Matrix& a, const Matrix& b) {
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add", a, b);
  double* pa = a.data();
  const double* pb = b.data();
  for (std::size_t i = 0; i < a.size(); ++i) pa[i] += pb[i];
  return a;
}

Matrix& operator*=(Matrix& a, double s) {
  for (double& v : a.span()) v *= s;
  return a;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  require_shape(a.cols() == b.rows(), "matmul", a, b);
  Matrix out(a.rows(), b.cols());
  kernels::gemm_nn(a, b, out);
  return out;
}

double frobenius_sq(const Matrix& a) {
  double s = 0.0;
  for (double v : a.span()) s += v * v;
  return s;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "max_abs_diff", a, b);
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

// --- Tensor3 ---------------------------------------------------------------

Tensor3::Tensor3(std::size_t d1, std::size_t d2, std::size_t d3, double fill)
    : d1_(d1), d2_(d2), d3_(d3), data_(d1 * d2 * d3, fill) {}

Tensor3::Tensor3(std::size_t d1, std::size_t d2, std::size_t d3, std::vector<double> data)
    : d1_(d1), d2_(d2), d3_(d3), data_(std::move(data)) {
  if (data_.size() != d1 * d2 * d3) throw ShapeError("tensor data length does not match dims");
}

std::size_t Tensor3::dim(int mode) const {
  switch (mode) {
    case 1: return d1_;
    case 2: return d2_;
    case 3: return d3_;
    default: throw UsageError("tensor mode must be 1, 2 or 3, got " + std::to_string(mode));
  }
}

Matrix Tensor3::slice3(std::size_t k) const {
  Matrix m(d1_, d2_);
  for (std::size_t i = 0; i < d1_; ++i)
    for (std::size_t j = 0; j < d2_; ++j) m(i, j) = (*this)(i, j, k);
  return m;
}

void Tensor3::set_slice3(std::size_t k, const Matrix& m) {
  if (m.rows() != d1_ || m.cols() != d2_)
    throw ShapeError("slice shape " + shape_string(m) + " does not fit tensor");
  for (std::size_t i = 0; i < d1_; ++i)
    for (std::size_t j = 0; j < d2_; ++j) (*this)(i, j, k) = m(i, j);
}

namespace {

// Maps (row index along `mode`, column index) of the unfolding to (i, j, k).
struct UnfoldIndex {
  std::size_t d1, d2, d3;
  int mode;
  void operator()(std::size_t r, std::size_t c, std::size_t& i, std::size_t& j,
                  std::size_t& k) const {
    switch (mode) {
      case 1: i = r; j = c / d3; k = c % d3; break;
      case 2: j = r; i = c / d3; k = c % d3; break;
      default: k = r; i = c / d2; j = c % d2; break;
    }
  }
};

void check_mode(int mode) {
  if (mode < 1 || mode > 3)
    throw UsageError("unfolding mode must be 1, 2 or 3, got " + std::to_string(mode));
}

}  // namespace

Matrix unfold(const Tensor3& t, int mode) {
  check_mode(mode);
  const std::size_t rows = t.dim(mode);
  const std::size_t cols = rows == 0 ? 0 : t.size() / rows;
  Matrix m(rows, cols);
  UnfoldIndex idx{t.d1(), t.d2(), t.d3(), mode};
  std::size_t i, j, k;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      idx(r, c, i, j, k);
      m(r, c) = t(i, j, k);
    }
  return m;
}

Tensor3 refold(const Matrix& m, int mode, std::size_t d1, std::size_t d2, std::size_t d3) {
  check_mode(mode);
  Tensor3 t(d1, d2, d3);
  if (m.rows() != t.dim(mode) || m.size() != t.size())
    throw ShapeError("refold: matrix " + shape_string(m) + " does not match tensor dims");
  UnfoldIndex idx{d1, d2, d3, mode};
  std::size_t i, j, k;
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) {
      idx(r, c, i, j, k);
      t(i, j, k) = m(r, c);
    }
  return t;
}

Tensor3 mode_product(const Tensor3& t, const Matrix& a, int mode) {
  check_mode(mode);
  if (a.cols() != t.dim(mode))
    throw ShapeError("mode_product: matrix " + shape_string(a) + " vs tensor mode size " +
                     std::to_string(t.dim(mode)));
  Matrix prod = matmul(a, unfold(t, mode));
  std::size_t d[3] = {t.d1(), t.d2(), t.d3()};
  d[mode - 1] = a.rows();
  return refold(prod, mode, d[0], d[1], d[2]);
}

double inner(const Tensor3& a, const Tensor3& b) {
  if (a.d1() != b.d1() || a.d2() != b.d2() || a.d3() != b.d3())
    throw ShapeError("inner: tensor dims differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.vec()[i] * b.vec()[i];
  return s;
}

}  // namespace mgc
