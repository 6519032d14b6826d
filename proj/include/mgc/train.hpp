#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mgc/dataset.hpp"
#include "mgc/model.hpp"
#include "mgc/mtl.hpp"

namespace mgc {

struct TrainConfig {
  Variant variant = Variant::MGC;
  double learning_rate = 1e-3;
  std::size_t batch_size = 16;
  double alpha = 0.1;
  // Unset penalty weights resolve to the variant default.
  std::optional<double> beta1;
  std::optional<double> beta2;
  std::size_t max_epochs = 200;
  std::size_t patience = 10;
  // Hard cap on optimizer steps (0: none).
  std::size_t max_steps = 0;
  std::uint64_t seed = 0;
  double clip_norm = 5.0;  // 0 disables clipping
  // Plain (lambda/2) ||W||^2 on intra weights.
  double weight_decay = 0.0;
  // Keep inter-task weights at exactly zero and never update them.
  bool freeze_inter = false;
  bool flip_flop = true;
  mtl::MlrOptions mlr;
  NetworkConfig network;

  double resolved_beta1() const;
  double resolved_beta2() const;
  // Positivity of rates/sizes, and penalties consistent with the variant.
  void validate() const;
};

class Adam {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  Adam() = default;
  explicit Adam(const std::vector<Param>& params);

  // One bias-corrected step on params[i] with grads[i]; entries whose
  // `frozen` flag is set are left untouched.
  void step(std::vector<Param>& params, const std::vector<Matrix>& grads, double lr,
            const std::vector<bool>& frozen = {});
  std::uint64_t steps() const { return t_; }

 private:
  std::vector<Matrix> m_, v_;
  std::uint64_t t_ = 0;
};

// Penalty bookkeeping for one model.
struct Penalties {
  double alpha = 0.1;
  double beta1 = 0.0;
  double beta2 = 0.0;
  double weight_decay = 0.0;
  mtl::LogDetSign sign = mtl::LogDetSign::Prior;
  std::vector<Sharing> sharing;               // per layer
  std::map<std::size_t, mtl::MlrLayerState> mlr;  // by layer
};

Penalties make_penalties(const Model& model, const TrainConfig& cfg);

struct ObjectiveParts {
  double sq_loss = 0.0;
  double j1 = 0.0;  // unweighted sum over RCT layers
  double j2 = 0.0;  // unweighted sum over MLR layers
  double decay = 0.0;
  double total = 0.0;
};

// Builds the composite objective on `tape` for one batch:
// (1/B) sum_m ||pred_m - y_m||^2 + beta1 * J1 + (beta2/2) * J2 + (wd/2) ||W_intra||^2.
ad::Var objective(ad::Tape& tape, const Model& model, std::span<const ad::Var> bound,
                  const Batch& batch, const Penalties& pen, ObjectiveParts* parts = nullptr);

// Evaluates the objective and its gradient with respect to every parameter.
ObjectiveParts objective_and_grad(const Model& model, const Batch& batch, const Penalties& pen,
                                  std::vector<Matrix>* grads);

struct StepLog {
  std::size_t epoch = 0;
  std::size_t step = 0;
  ObjectiveParts parts;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;            // mean objective over the epoch's steps
  std::vector<double> val_rmse;       // per mode
  double val_rmse_pooled = 0.0;
  bool improved = false;
};

struct TrainRun {
  TrainConfig config;
  std::unique_ptr<Model> model;  // best-epoch parameters
  Penalties penalties;           // Sigma factors from the best epoch
  std::vector<StepLog> steps;
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;
  double best_val_rmse = 0.0;
  bool stopped_early = false;
  // Set when training diverged; parameters are the last good ones.
  std::optional<std::string> failure;
};

// Per-mode and pooled RMSE of clipped predictions against labels.
std::vector<double> rmse_per_mode(const std::vector<Matrix>& predictions, const SampleSet& set,
                                  double* pooled = nullptr);

using StepCallback = std::function<void(const StepLog&, const Model&)>;

// Mini-batch Adam with per-epoch shuffling, flip-flop after each epoch for
// MLR layers, early stopping on pooled validation RMSE. `on_step` sees the
// model right after each optimizer step.
TrainRun fit(std::unique_ptr<Model> model, const SampleSet& train, const SampleSet& val,
             const TrainConfig& cfg, const StepCallback& on_step = {});

// Resolved configuration as JSON text.
std::string to_json_text(const TrainConfig& cfg);

// Training log CSV: epoch,step,sq_loss,j1,j2,val_rmse_<mode>...
void write_training_log(const TrainRun& run, const std::vector<std::string>& modes,
                        const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Checkpoints: manifest.json plus one float64 file per tensor (parameters,
// covariance factors, normalized graphs, feature scaler).

struct Checkpoint {
  std::unique_ptr<Model> model;
  Penalties penalties;
  FeatureScaler scaler;
  std::string metadata_json;  // manifest metadata as written
};

void save_checkpoint(const std::filesystem::path& dir, const TrainRun& run,
                     const FeatureScaler& scaler, const std::string& extra_metadata_json = "{}");
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace mgc
