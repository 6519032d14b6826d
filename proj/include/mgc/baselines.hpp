#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mgc/dataset.hpp"
#include "mgc/model.hpp"

namespace mgc {

// --- historical average ------------------------------------------------------

inline constexpr std::size_t kHaWeeks = 4;
inline constexpr std::size_t kHoursPerWeek = 168;

// Mean of the four most recent observations at the same hour of the week as
// hour index `t`. Throws ValidationError naming the first feasible target
// hour when fewer than four weeks precede `t`.
double ha_predict(const DemandTensor& demand, std::size_t zone, std::size_t mode, std::size_t t);

// One N x V matrix per mode for every label hour of `set`.
std::vector<Matrix> ha_predict(const DemandTensor& demand, const SampleSet& set);

// --- LASSO -------------------------------------------------------------------

double soft_threshold(double x, double lambda);

struct LassoFit {
  std::vector<double> weights;
  double intercept = 0.0;
  int sweeps = 0;
  bool converged = false;
};

// Minimizes (1/2n) ||y - b - X w||^2 + lambda ||w||_1 by cyclic coordinate
// descent on centered data; stops when no coefficient moves more than `tol`
// in a sweep, or after `max_sweeps` (returning the last iterate).
LassoFit lasso_fit(const Matrix& x, std::span<const double> y, double lambda, double tol = 1e-7,
                   int max_sweeps = 10000);

// logspace(-3, 2, 10)
std::vector<double> default_lasso_grid();

// One independent LASSO per (zone, mode) over the zone's lag features of all
// modes (4 M columns); each model picks its lambda by validation RMSE.
class LassoBaseline {
 public:
  void fit(const SampleSet& train, const SampleSet& val,
           const std::vector<double>& grid = default_lasso_grid());
  std::vector<Matrix> predict(const SampleSet& set) const;

  // Chosen lambda per [mode][zone].
  const std::vector<std::vector<double>>& lambdas() const { return lambda_; }
  // Number of (zone, mode) fits that hit the sweep cap.
  std::size_t unconverged() const { return unconverged_; }

 private:
  std::vector<std::vector<LassoFit>> fits_;  // [mode][zone]
  std::vector<std::vector<double>> lambda_;
  std::size_t unconverged_ = 0;
  std::vector<std::string> zones_, modes_;
};

// Rows: samples; columns: the zone's lags for every mode.
Matrix zone_design(const SampleSet& set, std::size_t zone);

// --- MLP -----------------------------------------------------------------------

struct MlpConfig {
  std::vector<std::size_t> widths = {128, 128, 1};
  bool rescale_output = true;
};

// Per-mode dense network on each zone's concatenated lags (no graphs).
// Hidden layers ReLU, output linear, optionally mapped back to counts with
// the per-zone feature statistics.
class MlpNetwork final : public Model {
 public:
  MlpNetwork(std::vector<std::string> zones, std::vector<std::string> modes, MlpConfig cfg,
             std::uint64_t seed);

  std::string kind() const override { return "mlp"; }
  std::size_t n_modes() const override { return modes_.size(); }
  InputLayout layout() const override { return InputLayout::ZoneConcat; }
  std::vector<Sharing> sharing() const override {
    return std::vector<Sharing>(cfg_.widths.size(), Sharing::None);
  }
  std::vector<Param>& params() override { return params_; }
  const std::vector<Param>& params() const override { return params_; }
  std::vector<ad::Var> forward(ad::Tape& tape, std::span<const ad::Var> bound,
                               std::span<const Matrix> inputs) const override;
  void check_compatible(const SampleSet& set) const override;
  std::unique_ptr<Model> clone() const override { return std::make_unique<MlpNetwork>(*this); }

  void set_output_scaling(const FeatureScaler& scaler);
  const MlpConfig& config() const { return cfg_; }
  // params() index of layer l's weight / bias for a mode.
  std::size_t weight_index(std::size_t layer, std::size_t mode) const;
  std::size_t bias_index(std::size_t layer, std::size_t mode) const;

 private:
  std::vector<std::string> zones_, modes_;
  MlpConfig cfg_;
  std::vector<Param> params_;
  OutputScaling out_;
};

}  // namespace mgc
