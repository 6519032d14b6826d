#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mgc/matrix.hpp"
#include "mgc/tape.hpp"

// Knowledge-sharing penalties between the per-mode networks.
namespace mgc::mtl {

// ---------------------------------------------------------------------------
// Cross-task penalty. `w[k][m]` is the weight from source mode k into target
// mode m; intra weights sit on the diagonal.

double j1(const std::vector<std::vector<const Matrix*>>& w, double alpha);
ad::Var j1(const std::vector<std::vector<ad::Var>>& w, double alpha);

// ---------------------------------------------------------------------------
// Tensor-normal prior over the stacked intra weights of one layer.

// T(i, j, m) = weights[m](i, j).
Tensor3 stack_weights(std::span<const Matrix> weights);
Tensor3 stack_weights(std::span<const Matrix* const> weights);

// Which factor of the Kronecker covariance.
enum Factor : int { kInput = 0, kOutput = 1, kMode = 2 };

// Sign of the log-determinant terms. `Prior` is the negative log density of
// the tensor-normal prior, which flip-flop minimizes. `AsPrinted` subtracts
// them instead.
enum class LogDetSign { Prior, AsPrinted };

struct MlrOptions {
  bool fix_input = true;
  bool fix_output = true;
  double ridge_rel = 1e-3;
  double ridge_floor = 1e-12;
  double tolerance = 1e-6;
  int max_sweeps = 50;
  int max_retries = 3;
  LogDetSign sign = LogDetSign::Prior;
};

// Covariance factors of one layer and their cached inverses / log-dets.
class MlrLayerState {
 public:
  MlrLayerState() = default;
  // Identity factors for a f_in x f_out x modes weight tensor.
  MlrLayerState(std::size_t f_in, std::size_t f_out, std::size_t modes, std::size_t layer,
                bool fix_input, bool fix_output);

  const Matrix& sigma(int f) const { return sigma_[f]; }
  const Matrix& precision(int f) const { return precision_[f]; }
  double log_det(int f) const { return log_det_[f]; }
  bool is_identity(int f) const { return identity_[f]; }
  bool fixed(int f) const { return fixed_[f]; }
  std::size_t layer() const { return layer_; }
  std::size_t dim(int f) const { return sigma_[f].rows(); }

  // Replaces a factor and refreshes its cache. Throws NumericError naming the
  // layer if the matrix is not SPD, or UsageError for a fixed factor.
  void set_sigma(int f, Matrix s);

 private:
  std::array<Matrix, 3> sigma_, precision_;
  std::array<double, 3> log_det_{};
  std::array<bool, 3> identity_{true, true, true};
  std::array<bool, 3> fixed_{true, true, false};
  std::size_t layer_ = 0;
};

// W x1 inv(S_I) x2 inv(S_O) x3 inv(S_M); identity factors are skipped.
Tensor3 precision_product(const Tensor3& w, const MlrLayerState& s);

// Quadratic form vec(W)^T inv(S_I kron S_O kron S_M) vec(W).
double j2_quadratic(const Tensor3& w, const MlrLayerState& s);
// Weighted log-determinant sum (D/f_in) ln|S_I| + (D/f_out) ln|S_O| + (D/M) ln|S_M|.
double j2_log_det(const MlrLayerState& s);
double j2(const Tensor3& w, const MlrLayerState& s, LogDetSign sign = LogDetSign::Prior);
// Gradient with respect to W with the factors held fixed.
Tensor3 j2_grad(const Tensor3& w, const MlrLayerState& s);

// Differentiable J2 over the intra weights of one layer (one Var per mode).
// `s` must outlive the tape.
ad::Var j2(std::span<const ad::Var> weights, const MlrLayerState& s,
           LogDetSign sign = LogDetSign::Prior);

struct FlipFlopReport {
  int sweeps = 0;
  bool converged = false;
  int retries = 0;
  std::vector<double> j2_after_sweep;
};

// Cyclic closed-form re-estimation of the free factors from W (input, output,
// mode order), each followed by a ridge. After every sweep S_M is rescaled to
// trace M; the scale moves into a free input or output factor when there is
// one and is dropped otherwise.
FlipFlopReport flip_flop(const Tensor3& w, MlrLayerState& s, const MlrOptions& opt);

}  // namespace mgc::mtl
