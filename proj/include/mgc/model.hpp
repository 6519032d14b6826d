#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mgc/dataset.hpp"
#include "mgc/graphs.hpp"
#include "mgc/matrix.hpp"
#include "mgc/tape.hpp"

namespace mgc {

enum class Variant { MGC, RCT, MLR, MIX };
std::string to_string(Variant v);
// Accepts MGC, RCT, MLR, MIX (case-insensitive); ValidationError otherwise.
Variant parse_variant(std::string_view text);

// Knowledge sharing attached to one layer.
enum class Sharing { None, Rct, Mlr };
std::string to_string(Sharing s);
// MGC: none everywhere; RCT / MLR: every layer; MIX: RCT on the lower half,
// MLR on the upper half.
std::vector<Sharing> layer_sharing(Variant v, std::size_t n_layers);

enum class ParamRole { Intra, Inter, Bias };

struct Param {
  std::string name;
  Matrix value;
  ParamRole role = ParamRole::Intra;
  std::size_t layer = 0;
  std::size_t source = 0;  // source mode (weights) or mode (bias)
  std::size_t target = 0;
};

// How a batch of samples is laid out as network input.
enum class InputLayout {
  PerMode,     // one (B*V) x 4 matrix per mode, the mode's own lags
  ZoneConcat,  // one (B*V) x 4M matrix shared by all modes: every mode's lags
};

struct Batch {
  std::size_t size = 0;
  std::vector<Matrix> inputs;  // PerMode: one per mode; ZoneConcat: a single matrix
  std::vector<Matrix> labels;  // per mode, (B*V) x 1
};

Batch make_batch(const SampleSet& set, std::span<const std::size_t> indices, InputLayout layout);

// Anything the trainer can fit: a parameter list plus a differentiable
// forward pass producing one (B*V) x 1 prediction per mode.
class Model {
 public:
  virtual ~Model() = default;
  virtual std::string kind() const = 0;
  virtual std::size_t n_modes() const = 0;
  virtual InputLayout layout() const = 0;
  // Sharing tag per layer (for penalties); plain models report None.
  virtual std::vector<Sharing> sharing() const = 0;
  virtual std::vector<Param>& params() = 0;
  virtual const std::vector<Param>& params() const = 0;
  // `bound[i]` is params()[i] placed on the tape.
  virtual std::vector<ad::Var> forward(ad::Tape& tape, std::span<const ad::Var> bound,
                                       std::span<const Matrix> inputs) const = 0;
  // Throws ValidationError when the sample set's zones/modes do not match
  // what the model was built for.
  virtual void check_compatible(const SampleSet& set) const = 0;
  virtual std::unique_ptr<Model> clone() const = 0;

  std::optional<std::size_t> find_param(std::string_view name) const;
};

// Raw (unclipped) predictions for every sample: one N x V matrix per mode.
std::vector<Matrix> predict(const Model& model, const SampleSet& set, std::size_t chunk = 64);

// Clips negative predictions to zero (reporting-time rule).
std::vector<Matrix> clip_nonnegative(std::vector<Matrix> predictions);

struct NetworkConfig {
  std::vector<std::size_t> widths = {128, 256, 128, 1};
  std::size_t input_features = kLagFeatures;
  double inter_init_scale = 0.1;
  // Map the linear head back to raw counts with the per-zone feature
  // statistics: pred = mean_z + scale_z * head.
  bool rescale_output = true;
};

// Fixed per-zone output map: one mean/scale vector per mode.
struct OutputScaling {
  std::vector<std::vector<double>> mean;   // [mode][zone]
  std::vector<std::vector<double>> scale;  // [mode][zone]
  bool empty() const { return mean.empty(); }
};

// y[r] = x[r] * scale[r % V] + shift[r % V] for a (B*V) x 1 column.
ad::Var zone_affine(ad::Var x, const std::vector<double>& scale, const std::vector<double>& shift);

// Per-mode stacks of multi-graph convolution layers. Layer l maps f_in to
// f_out per zone with weights of shape (4 f_in) x f_out acting on the
// concatenation [A_N H, A_D H, A_F H, A_P H]. Hidden layers use ReLU, the
// last layer is linear.
class MgcNetwork final : public Model {
 public:
  MgcNetwork(std::shared_ptr<const GraphSet> graphs, Variant variant, NetworkConfig cfg,
             std::uint64_t seed);

  std::string kind() const override { return "mgc"; }
  std::size_t n_modes() const override { return n_modes_; }
  InputLayout layout() const override { return InputLayout::PerMode; }
  std::vector<Sharing> sharing() const override { return sharing_; }
  std::vector<Param>& params() override { return params_; }
  const std::vector<Param>& params() const override { return params_; }
  std::vector<ad::Var> forward(ad::Tape& tape, std::span<const ad::Var> bound,
                               std::span<const Matrix> inputs) const override;
  void check_compatible(const SampleSet& set) const override;
  std::unique_ptr<Model> clone() const override { return std::make_unique<MgcNetwork>(*this); }

  // Required before forward when the config asks for output rescaling.
  void set_output_scaling(const FeatureScaler& scaler);
  const OutputScaling& output_scaling() const { return out_; }

  Variant variant() const { return variant_; }
  const NetworkConfig& config() const { return cfg_; }
  const GraphSet& graphs() const { return *graphs_; }
  std::shared_ptr<const GraphSet> graphs_ptr() const { return graphs_; }
  std::size_t n_layers() const { return cfg_.widths.size(); }
  std::size_t fan_in(std::size_t layer) const;  // 4 * f_in

  // Index into params() of W_{source -> target} in a layer, if present.
  std::optional<std::size_t> weight_index(std::size_t layer, std::size_t source,
                                          std::size_t target) const;
  std::size_t bias_index(std::size_t layer, std::size_t mode) const;
  Matrix& weight(std::size_t layer, std::size_t source, std::size_t target);
  Matrix& bias(std::size_t layer, std::size_t mode);

 private:
  std::shared_ptr<const GraphSet> graphs_;
  Variant variant_;
  NetworkConfig cfg_;
  std::size_t n_modes_;
  std::vector<Sharing> sharing_;
  std::vector<Param> params_;
  // [layer][source][target] -> params_ index or npos
  std::vector<std::vector<std::vector<std::size_t>>> w_index_;
  std::vector<std::vector<std::size_t>> b_index_;
  OutputScaling out_;
};

// Uniform(-s, s) with s = scale * sqrt(6 / (rows + cols)), drawn from a
// generator seeded by (seed, tag...). Identical tags give identical draws.
Matrix init_uniform(std::size_t rows, std::size_t cols, double scale, std::uint64_t seed,
                    std::initializer_list<std::uint64_t> tag);

}  // namespace mgc
