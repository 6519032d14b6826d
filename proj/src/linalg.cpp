#include "mgc/linalg.hpp"

#include <cmath>

#include <Eigen/Dense>

#include "mgc/errors.hpp"

namespace mgc::linalg {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMat> view(const Matrix& m) {
  return Eigen::Map<const RowMat>(m.data(), static_cast<Eigen::Index>(m.rows()),
                                  static_cast<Eigen::Index>(m.cols()));
}

Matrix from_eigen(const RowMat& e) {
  Matrix m(static_cast<std::size_t>(e.rows()), static_cast<std::size_t>(e.cols()));
  Eigen::Map<RowMat>(m.data(), e.rows(), e.cols()) = e;
  return m;
}

void require_square(const Matrix& a, const char* what) {
  if (a.rows() != a.cols())
    throw ShapeError(std::string(what) + ": matrix is " + shape_string(a) + ", expected square");
}

}  // namespace

std::optional<Matrix> cholesky(const Matrix& a) {
  require_square(a, "cholesky");
  if (!a.all_finite()) return std::nullopt;
  Eigen::LLT<RowMat> llt(view(a));
  if (llt.info() != Eigen::Success) return std::nullopt;
  RowMat lower = llt.matrixL();
  for (Eigen::Index i = 0; i < lower.rows(); ++i)
    if (!(lower(i, i) > 0.0)) return std::nullopt;
  return from_eigen(lower);
}

Matrix spd_inverse(const Matrix& a) {
  require_square(a, "spd_inverse");
  Eigen::LLT<RowMat> llt(view(a));
  if (llt.info() != Eigen::Success || !a.all_finite())
    throw NumericError("spd_inverse: matrix is not positive definite");
  RowMat inv = llt.solve(RowMat::Identity(a.rows(), a.cols()));
  Matrix out = from_eigen(inv);
  symmetrize(out);
  return out;
}

double log_det_spd(const Matrix& a) {
  auto l = cholesky(a);
  if (!l) throw NumericError("log_det_spd: matrix is not positive definite");
  double s = 0.0;
  for (std::size_t i = 0; i < l->rows(); ++i) s += std::log((*l)(i, i));
  return 2.0 * s;
}

Matrix solve(const Matrix& a, const Matrix& b) {
  require_square(a, "solve");
  require_shape(a.rows() == b.rows(), "solve", a, b);
  RowMat x = view(a).partialPivLu().solve(view(b));
  return from_eigen(x);
}

void symmetrize(Matrix& a) {
  require_square(a, "symmetrize");
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j) {
      const double v = 0.5 * (a(i, j) + a(j, i));
      a(i, j) = v;
      a(j, i) = v;
    }
}

double trace(const Matrix& a) {
  require_square(a, "trace");
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) s += a(i, i);
  return s;
}

}  // namespace mgc::linalg
