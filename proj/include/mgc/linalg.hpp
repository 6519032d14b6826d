#pragma once

#include <optional>

#include "mgc/matrix.hpp"

// Small symmetric positive-definite helpers (covariance factors, test oracles).
namespace mgc::linalg {

// Lower Cholesky factor, or nullopt if `a` is not numerically SPD.
std::optional<Matrix> cholesky(const Matrix& a);

// Inverse of an SPD matrix through its Cholesky factor. Throws NumericError.
Matrix spd_inverse(const Matrix& a);

// ln|a| for SPD a. Throws NumericError.
double log_det_spd(const Matrix& a);

// Solves a x = b for general square a (partial-pivot LU).
Matrix solve(const Matrix& a, const Matrix& b);

// Symmetrizes in place: a <- (a + a^T) / 2.
void symmetrize(Matrix& a);

double trace(const Matrix& a);

}  // namespace mgc::linalg
