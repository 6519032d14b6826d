#include "mgc/mtl.hpp"

#include <cmath>
#include <memory>

#include "mgc/errors.hpp"
#include "mgc/kernels.hpp"
#include "mgc/linalg.hpp"

namespace mgc::mtl {

double j1(const std::vector<std::vector<const Matrix*>>& w, double alpha) {
  double intra = 0.0, inter = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k)
    for (std::size_t m = 0; m < w[k].size(); ++m) {
      if (!w[k][m]) continue;
      (k == m ? intra : inter) += frobenius_sq(*w[k][m]);
    }
  return alpha * intra + inter;
}

ad::Var j1(const std::vector<std::vector<ad::Var>>& w, double alpha) {
  ad::Var intra, inter;
  auto accumulate = [](ad::Var& acc, ad::Var term) { acc = acc.valid() ? ad::add(acc, term) : term; };
  for (std::size_t k = 0; k < w.size(); ++k)
    for (std::size_t m = 0; m < w[k].size(); ++m) {
      if (!w[k][m].valid()) continue;
      accumulate(k == m ? intra : inter, ad::sum_squares(w[k][m]));
    }
  if (!intra.valid()) throw UsageError("j1: no intra weights supplied");
  ad::Var out = ad::scale(intra, alpha);
  return inter.valid() ? ad::add(out, inter) : out;
}

Tensor3 stack_weights(std::span<const Matrix* const> weights) {
  if (weights.empty()) throw UsageError("stack_weights: no weights");
  const std::size_t r = weights[0]->rows(), c = weights[0]->cols();
  Tensor3 t(r, c, weights.size());
  for (std::size_t m = 0; m < weights.size(); ++m) {
    require_shape(weights[m]->rows() == r && weights[m]->cols() == c, "stack_weights",
                  *weights[0], *weights[m]);
    t.set_slice3(m, *weights[m]);
  }
  return t;
}

Tensor3 stack_weights(std::span<const Matrix> weights) {
  std::vector<const Matrix*> ptrs;
  for (const Matrix& w : weights) ptrs.push_back(&w);
  return stack_weights(std::span<const Matrix* const>(ptrs));
}

// --- layer state ----------------------------------------------------------

MlrLayerState::MlrLayerState(std::size_t f_in, std::size_t f_out, std::size_t modes,
                             std::size_t layer, bool fix_input, bool fix_output)
    : layer_(layer) {
  const std::size_t dims[3] = {f_in, f_out, modes};
  for (int f = 0; f < 3; ++f) {
    sigma_[f] = Matrix::identity(dims[f]);
    precision_[f] = sigma_[f];
    log_det_[f] = 0.0;
    identity_[f] = true;
  }
  fixed_ = {fix_input, fix_output, false};
}

void MlrLayerState::set_sigma(int f, Matrix s) {
  if (f < 0 || f > 2) throw UsageError("MlrLayerState: factor index out of range");
  if (fixed_[f]) throw UsageError("MlrLayerState: factor is fixed");
  require_shape(s.rows() == sigma_[f].rows() && s.cols() == sigma_[f].cols(),
                "MlrLayerState::set_sigma", sigma_[f], s);
  if (!linalg::cholesky(s))
    throw NumericError("covariance factor of MLR layer " + std::to_string(layer_ + 1) +
                       " is not positive-definite");
  identity_[f] = s == Matrix::identity(s.rows());
  precision_[f] = identity_[f] ? s : linalg::spd_inverse(s);
  log_det_[f] = identity_[f] ? 0.0 : linalg::log_det_spd(s);
  sigma_[f] = std::move(s);
}

// --- J2 -------------------------------------------------------------------

namespace {

Tensor3 apply_precisions(const Tensor3& w, const MlrLayerState& s, int skip) {
  Tensor3 p = w;
  for (int f = 0; f < 3; ++f)
    if (f != skip && !s.is_identity(f)) p = mode_product(p, s.precision(f), f + 1);
  return p;
}

void check_dims(const Tensor3& w, const MlrLayerState& s) {
  if (w.d1() != s.dim(kInput) || w.d2() != s.dim(kOutput) || w.d3() != s.dim(kMode))
    throw ShapeError("j2: weight tensor " + std::to_string(w.d1()) + "x" + std::to_string(w.d2()) +
                     "x" + std::to_string(w.d3()) + " does not match the covariance factors");
}

}  // namespace

Tensor3 precision_product(const Tensor3& w, const MlrLayerState& s) {
  check_dims(w, s);
  return apply_precisions(w, s, -1);
}

double j2_quadratic(const Tensor3& w, const MlrLayerState& s) {
  return inner(w, precision_product(w, s));
}

double j2_log_det(const MlrLayerState& s) {
  const double d = static_cast<double>(s.dim(kInput) * s.dim(kOutput) * s.dim(kMode));
  double total = 0.0;
  for (int f = 0; f < 3; ++f) total += d / static_cast<double>(s.dim(f)) * s.log_det(f);
  return total;
}

double j2(const Tensor3& w, const MlrLayerState& s, LogDetSign sign) {
  const double ld = j2_log_det(s);
  return j2_quadratic(w, s) + (sign == LogDetSign::Prior ? ld : -ld);
}

Tensor3 j2_grad(const Tensor3& w, const MlrLayerState& s) {
  Tensor3 g = precision_product(w, s);
  for (double& v : g.vec()) v *= 2.0;
  return g;
}

ad::Var j2(std::span<const ad::Var> weights, const MlrLayerState& s, LogDetSign sign) {
  if (weights.empty()) throw UsageError("j2: no weights");
  ad::Tape* tape = weights[0].tape();
  std::vector<const Matrix*> values;
  std::vector<std::size_t> parents;
  for (const ad::Var& v : weights) {
    if (v.tape() != tape) throw UsageError("j2: weights live on different tapes");
    values.push_back(&v.value());
    parents.push_back(v.id());
  }
  const Tensor3 w = stack_weights(std::span<const Matrix* const>(values));
  auto p = std::make_shared<Tensor3>(precision_product(w, s));
  const double ld = j2_log_det(s);
  const double value = inner(w, *p) + (sign == LogDetSign::Prior ? ld : -ld);
  return tape->record(parents, Matrix(1, 1, value), [p](ad::BackwardContext& ctx) {
    const double g = 2.0 * ctx.out_grad()(0, 0);
    for (std::size_t m = 0; m < p->d3(); ++m) {
      if (!ctx.parent_needs_grad(m)) continue;
      Matrix& out = ctx.parent_grad(m);
      for (std::size_t i = 0; i < p->d1(); ++i)
        for (std::size_t j = 0; j < p->d2(); ++j) out(i, j) += g * (*p)(i, j, m);
    }
  });
}

// --- flip-flop --------------------------------------------------------------

namespace {

// (1/n) W_(f) inv(kron of the other factors) W_(f)^T with n = D / dim(f).
Matrix factor_statistic(const Tensor3& w, const MlrLayerState& s, int f) {
  const Tensor3 p = apply_precisions(w, s, f);
  Matrix stat(w.dim(f + 1), w.dim(f + 1));
  kernels::gemm_nt(unfold(p, f + 1), unfold(w, f + 1), stat, false);
  const double n = static_cast<double>(w.size()) / static_cast<double>(w.dim(f + 1));
  stat *= 1.0 / n;
  linalg::symmetrize(stat);
  return stat;
}

double relative_change(const Matrix& now, const Matrix& before) {
  const double denom = std::sqrt(frobenius_sq(before));
  return std::sqrt(frobenius_sq(now - before)) / (denom > 0.0 ? denom : 1.0);
}

}  // namespace

FlipFlopReport flip_flop(const Tensor3& w, MlrLayerState& s, const MlrOptions& opt) {
  check_dims(w, s);
  for (double v : w.vec())
    if (!std::isfinite(v))
      throw NumericError("flip-flop: non-finite weight in MLR layer " +
                         std::to_string(s.layer() + 1));
  FlipFlopReport report;
  const std::string where = "MLR layer " + std::to_string(s.layer() + 1);
  for (int sweep = 0; sweep < opt.max_sweeps; ++sweep) {
    std::array<Matrix, 3> before = {s.sigma(0), s.sigma(1), s.sigma(2)};
    for (int f = 0; f < 3; ++f) {
      if (s.fixed(f)) continue;
      const Matrix stat = factor_statistic(w, s, f);
      const double dim = static_cast<double>(stat.rows());
      double ridge = std::max(opt.ridge_rel * linalg::trace(stat) / dim, opt.ridge_floor);
      for (int attempt = 0;; ++attempt) {
        Matrix candidate = stat;
        for (std::size_t i = 0; i < candidate.rows(); ++i) candidate(i, i) += ridge;
        if (linalg::cholesky(candidate)) {
          s.set_sigma(f, std::move(candidate));
          break;
        }
        if (attempt == opt.max_retries)
          throw NumericError("flip-flop: covariance update for " + where +
                             " is not positive-definite after " +
                             std::to_string(opt.max_retries) +
                             " ridge doublings; try a larger ridge_rel");
        ridge *= 2.0;
        ++report.retries;
      }
    }
    // Resolve the Kronecker scale: trace(S_M) = M.
    const double c = linalg::trace(s.sigma(kMode)) / static_cast<double>(s.dim(kMode));
    if (c != 1.0 && c > 0.0) {
      Matrix sm = s.sigma(kMode);
      sm *= 1.0 / c;
      s.set_sigma(kMode, std::move(sm));
      const int absorb = !s.fixed(kInput) ? kInput : !s.fixed(kOutput) ? kOutput : -1;
      if (absorb >= 0) {
        Matrix sa = s.sigma(absorb);
        sa *= c;
        s.set_sigma(absorb, std::move(sa));
      }
    }
    ++report.sweeps;
    report.j2_after_sweep.push_back(j2(w, s, opt.sign));
    double change = 0.0;
    for (int f = 0; f < 3; ++f)
      if (!s.fixed(f)) change = std::max(change, relative_change(s.sigma(f), before[f]));
    if (change < opt.tolerance) {
      report.converged = true;
      break;
    }
  }
  return report;
}

}  // namespace mgc::mtl
