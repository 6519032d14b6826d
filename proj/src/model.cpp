#include "mgc/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <random>

#include "mgc/errors.hpp"

namespace mgc {

namespace {
constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::MGC: return "MGC";
    case Variant::RCT: return "RCT";
    case Variant::MLR: return "MLR";
    case Variant::MIX: return "MIX";
  }
  return "?";
}

Variant parse_variant(std::string_view text) {
  std::string up(text);
  for (char& c : up) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (up == "MGC") return Variant::MGC;
  if (up == "RCT" || up == "RCT-MGC") return Variant::RCT;
  if (up == "MLR" || up == "MLR-MGC") return Variant::MLR;
  if (up == "MIX" || up == "MIX-MGC") return Variant::MIX;
  throw ValidationError("unknown variant '" + std::string(text) + "'; valid: MGC, RCT, MLR, MIX");
}

std::string to_string(Sharing s) {
  switch (s) {
    case Sharing::None: return "none";
    case Sharing::Rct: return "rct";
    case Sharing::Mlr: return "mlr";
  }
  return "?";
}

std::vector<Sharing> layer_sharing(Variant v, std::size_t n_layers) {
  std::vector<Sharing> out(n_layers, Sharing::None);
  for (std::size_t l = 0; l < n_layers; ++l) {
    switch (v) {
      case Variant::MGC: break;
      case Variant::RCT: out[l] = Sharing::Rct; break;
      case Variant::MLR: out[l] = Sharing::Mlr; break;
      case Variant::MIX: out[l] = l < n_layers / 2 ? Sharing::Rct : Sharing::Mlr; break;
    }
  }
  return out;
}

Batch make_batch(const SampleSet& set, std::span<const std::size_t> indices, InputLayout layout) {
  const std::size_t v = set.n_zones(), modes = set.n_modes(), b = indices.size();
  Batch batch;
  batch.size = b;
  for (std::size_t m = 0; m < modes; ++m) batch.labels.emplace_back(b * v, 1);
  if (layout == InputLayout::PerMode) {
    for (std::size_t m = 0; m < modes; ++m) batch.inputs.emplace_back(b * v, kLagFeatures);
  } else {
    batch.inputs.emplace_back(b * v, kLagFeatures * modes);
  }
  for (std::size_t s = 0; s < b; ++s) {
    const Sample& sample = set.samples.at(indices[s]);
    for (std::size_t m = 0; m < modes; ++m)
      for (std::size_t z = 0; z < v; ++z) {
        const std::size_t row = s * v + z;
        batch.labels[m](row, 0) = sample.labels[m][z];
        for (std::size_t c = 0; c < kLagFeatures; ++c) {
          if (layout == InputLayout::PerMode)
            batch.inputs[m](row, c) = sample.features[m](z, c);
          else
            batch.inputs[0](row, m * kLagFeatures + c) = sample.features[m](z, c);
        }
      }
  }
  return batch;
}

std::optional<std::size_t> Model::find_param(std::string_view name) const {
  const auto& ps = params();
  for (std::size_t i = 0; i < ps.size(); ++i)
    if (ps[i].name == name) return i;
  return std::nullopt;
}

std::vector<Matrix> predict(const Model& model, const SampleSet& set, std::size_t chunk) {
  model.check_compatible(set);
  const std::size_t v = set.n_zones(), n = set.size();
  std::vector<Matrix> out(model.n_modes(), Matrix(n, v));
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t end = std::min(n, begin + chunk);
    idx.resize(end - begin);
    for (std::size_t i = begin; i < end; ++i) idx[i - begin] = i;
    const Batch batch = make_batch(set, idx, model.layout());
    ad::Tape tape;
    std::vector<ad::Var> bound;
    for (const Param& p : model.params()) bound.push_back(tape.constant(p.value));
    const auto preds = model.forward(tape, bound, batch.inputs);
    for (std::size_t m = 0; m < model.n_modes(); ++m)
      for (std::size_t s = 0; s < idx.size(); ++s)
        for (std::size_t z = 0; z < v; ++z) out[m](begin + s, z) = preds[m].value()(s * v + z, 0);
  }
  return out;
}

std::vector<Matrix> clip_nonnegative(std::vector<Matrix> predictions) {
  for (Matrix& p : predictions)
    for (double& x : p.span()) x = std::max(x, 0.0);
  return predictions;
}

Matrix init_uniform(std::size_t rows, std::size_t cols, double scale, std::uint64_t seed,
                    std::initializer_list<std::uint64_t> tag) {
  std::vector<std::uint32_t> words = {static_cast<std::uint32_t>(seed),
                                      static_cast<std::uint32_t>(seed >> 32)};
  for (std::uint64_t t : tag) words.push_back(static_cast<std::uint32_t>(t));
  std::seed_seq seq(words.begin(), words.end());
  std::mt19937_64 rng(seq);
  const double limit = scale * std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> u(-limit, limit);
  Matrix m(rows, cols);
  for (double& x : m.span()) x = u(rng);
  return m;
}

ad::Var zone_affine(ad::Var x, const std::vector<double>& scale,
                    const std::vector<double>& shift) {
  const std::size_t v = scale.size();
  if (x.cols() != 1 || v == 0 || shift.size() != v || x.rows() % v != 0)
    throw ShapeError("zone_affine: input " + shape_string(x.value()) + " vs " +
                     std::to_string(v) + " zones");
  Matrix out(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) out(r, 0) = x.value()(r, 0) * scale[r % v] + shift[r % v];
  return x.tape()->record({x.id()}, std::move(out), [scale](ad::BackwardContext& ctx) {
    Matrix& g = ctx.parent_grad(0);
    const Matrix& up = ctx.out_grad();
    const std::size_t v = scale.size();
    for (std::size_t r = 0; r < up.rows(); ++r) g(r, 0) += up(r, 0) * scale[r % v];
  });
}

// --- MgcNetwork ---------------------------------------------------------------

MgcNetwork::MgcNetwork(std::shared_ptr<const GraphSet> graphs, Variant variant, NetworkConfig cfg,
                       std::uint64_t seed)
    : graphs_(std::move(graphs)), variant_(variant), cfg_(std::move(cfg)) {
  if (!graphs_) throw UsageError("MgcNetwork: null graph set");
  if (cfg_.widths.empty() || cfg_.widths.back() != 1)
    throw ValidationError("network widths must be non-empty and end with 1");
  for (std::size_t w : cfg_.widths)
    if (w == 0) throw ValidationError("network widths must be positive");
  n_modes_ = graphs_->n_modes();
  if (n_modes_ == 0) throw ValidationError("graph set has no modes");
  sharing_ = layer_sharing(variant_, cfg_.widths.size());
  w_index_.assign(n_layers(), std::vector<std::vector<std::size_t>>(
                                  n_modes_, std::vector<std::size_t>(n_modes_, kNone)));
  b_index_.assign(n_layers(), std::vector<std::size_t>(n_modes_, kNone));
  for (std::size_t l = 0; l < n_layers(); ++l) {
    const std::size_t rows = fan_in(l), cols = cfg_.widths[l];
    for (std::size_t k = 0; k < n_modes_; ++k)
      for (std::size_t m = 0; m < n_modes_; ++m) {
        const bool intra = k == m;
        if (!intra && sharing_[l] != Sharing::Rct) continue;
        Param p;
        p.name = "l" + std::to_string(l) + "_w_" + std::to_string(k) + "_" + std::to_string(m);
        p.value = init_uniform(rows, cols, intra ? 1.0 : cfg_.inter_init_scale, seed,
                               {l, k, m});
        p.role = intra ? ParamRole::Intra : ParamRole::Inter;
        p.layer = l;
        p.source = k;
        p.target = m;
        w_index_[l][k][m] = params_.size();
        params_.push_back(std::move(p));
      }
    for (std::size_t m = 0; m < n_modes_; ++m) {
      Param p;
      p.name = "l" + std::to_string(l) + "_b_" + std::to_string(m);
      p.value = Matrix(1, cols);
      p.role = ParamRole::Bias;
      p.layer = l;
      p.source = p.target = m;
      b_index_[l][m] = params_.size();
      params_.push_back(std::move(p));
    }
  }
}

std::size_t MgcNetwork::fan_in(std::size_t layer) const {
  return 4 * (layer == 0 ? cfg_.input_features : cfg_.widths[layer - 1]);
}

std::optional<std::size_t> MgcNetwork::weight_index(std::size_t layer, std::size_t source,
                                                    std::size_t target) const {
  const std::size_t i = w_index_.at(layer).at(source).at(target);
  if (i == kNone) return std::nullopt;
  return i;
}

std::size_t MgcNetwork::bias_index(std::size_t layer, std::size_t mode) const {
  return b_index_.at(layer).at(mode);
}

Matrix& MgcNetwork::weight(std::size_t layer, std::size_t source, std::size_t target) {
  auto i = weight_index(layer, source, target);
  if (!i) throw UsageError("MgcNetwork: no weight " + std::to_string(source) + "->" +
                           std::to_string(target) + " in layer " + std::to_string(layer));
  return params_[*i].value;
}

Matrix& MgcNetwork::bias(std::size_t layer, std::size_t mode) {
  return params_[bias_index(layer, mode)].value;
}

void MgcNetwork::set_output_scaling(const FeatureScaler& scaler) {
  if (scaler.mean.size() != n_modes_ || scaler.scale.size() != n_modes_)
    throw ValidationError("output scaling has the wrong number of modes");
  for (std::size_t m = 0; m < n_modes_; ++m)
    if (scaler.mean[m].size() != graphs_->n_zones() || scaler.scale[m].size() != graphs_->n_zones())
      throw ValidationError("output scaling has the wrong number of zones");
  out_.mean = scaler.mean;
  out_.scale = scaler.scale;
}

void MgcNetwork::check_compatible(const SampleSet& set) const {
  if (set.zones != graphs_->zone_ids)
    throw ValidationError("sample zone order does not match the graph zone order");
  if (set.modes != graphs_->modes)
    throw ValidationError("sample modes do not match the graph modes");
}

std::vector<ad::Var> MgcNetwork::forward(ad::Tape& tape, std::span<const ad::Var> bound,
                                         std::span<const Matrix> inputs) const {
  if (bound.size() != params_.size()) throw UsageError("MgcNetwork::forward: parameter count");
  if (inputs.size() != n_modes_)
    throw ShapeError("MgcNetwork::forward: expected one input per mode");
  const std::size_t v = graphs_->n_zones();
  std::vector<ad::Var> h;
  for (const Matrix& x : inputs) {
    if (x.rows() % v != 0 || x.cols() != cfg_.input_features)
      throw ShapeError("MgcNetwork::forward: input " + shape_string(x) +
                       " is not (batch*zones) x " + std::to_string(cfg_.input_features));
    h.push_back(tape.constant(x));
  }
  for (std::size_t l = 0; l < n_layers(); ++l) {
    // Graph-convolved features of each source mode, computed once per layer.
    std::vector<ad::Var> z(n_modes_);
    auto convolved = [&](std::size_t k) {
      if (!z[k].valid()) {
        const auto g = graphs_->normalized_for(k);
        const ad::Var parts[4] = {ad::block_apply(*g[0], h[k]), ad::block_apply(*g[1], h[k]),
                                  ad::block_apply(*g[2], h[k]), ad::block_apply(*g[3], h[k])};
        z[k] = ad::concat_cols(parts);
      }
      return z[k];
    };
    std::vector<ad::Var> next(n_modes_);
    for (std::size_t m = 0; m < n_modes_; ++m) {
      ad::Var acc;
      for (std::size_t k = 0; k < n_modes_; ++k) {
        const std::size_t wi = w_index_[l][k][m];
        if (wi == kNone) continue;
        ad::Var term = ad::matmul(convolved(k), bound[wi]);
        acc = acc.valid() ? ad::add(acc, term) : term;
      }
      ad::Var out = ad::add_row(acc, bound[b_index_[l][m]]);
      if (l + 1 < n_layers()) {
        next[m] = ad::relu(out);
      } else if (cfg_.rescale_output) {
        if (out_.empty())
          throw UsageError("MgcNetwork: output rescaling requested but no scaling was set");
        next[m] = zone_affine(out, out_.scale[m], out_.mean[m]);
      } else {
        next[m] = out;
      }
    }
    h = std::move(next);
  }
  return h;
}

}  // namespace mgc
