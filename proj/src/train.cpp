#include "mgc/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"
#include "mgc/errors.hpp"
#include "mgc/io.hpp"

namespace mgc {

using nlohmann::json;

// --- config -----------------------------------------------------------------

double TrainConfig::resolved_beta1() const {
  if (beta1) return *beta1;
  return variant == Variant::RCT || variant == Variant::MIX ? 0.001 : 0.0;
}

double TrainConfig::resolved_beta2() const {
  if (beta2) return *beta2;
  return variant == Variant::MLR || variant == Variant::MIX ? 0.1 : 0.0;
}

void TrainConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v))
      throw ValidationError(std::string("train.") + name + " must be positive");
  };
  auto nonneg = [](double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v))
      throw ValidationError(std::string("train.") + name + " must be non-negative");
  };
  positive(learning_rate, "learning_rate");
  positive(alpha, "alpha");
  if (batch_size == 0) throw ValidationError("train.batch_size must be positive");
  if (max_epochs == 0) throw ValidationError("train.max_epochs must be positive");
  nonneg(resolved_beta1(), "beta1");
  nonneg(resolved_beta2(), "beta2");
  nonneg(clip_norm, "clip_norm");
  nonneg(weight_decay, "weight_decay");
  const bool has_rct = variant == Variant::RCT || variant == Variant::MIX;
  const bool has_mlr = variant == Variant::MLR || variant == Variant::MIX;
  if (resolved_beta1() > 0.0 && !has_rct)
    throw ValidationError("beta1 > 0 needs cross-task (RCT) layers, but variant " +
                          to_string(variant) + " has none");
  if (resolved_beta2() > 0.0 && !has_mlr)
    throw ValidationError("beta2 > 0 needs MLR layers, but variant " + to_string(variant) +
                          " has none");
  positive(mlr.ridge_rel, "mlr.ridge_rel");
  positive(mlr.tolerance, "mlr.tolerance");
  if (mlr.max_sweeps <= 0) throw ValidationError("train.mlr.max_sweeps must be positive");
  if (mlr.max_retries < 0) throw ValidationError("train.mlr.max_retries must be non-negative");
}

std::string to_json_text(const TrainConfig& cfg) {
  json j = {{"variant", to_string(cfg.variant)},
            {"learning_rate", cfg.learning_rate},
            {"batch_size", cfg.batch_size},
            {"alpha", cfg.alpha},
            {"beta1", cfg.resolved_beta1()},
            {"beta2", cfg.resolved_beta2()},
            {"max_epochs", cfg.max_epochs},
            {"patience", cfg.patience},
            {"max_steps", cfg.max_steps},
            {"seed", cfg.seed},
            {"clip_norm", cfg.clip_norm},
            {"weight_decay", cfg.weight_decay},
            {"freeze_inter", cfg.freeze_inter},
            {"flip_flop", cfg.flip_flop},
            {"widths", cfg.network.widths},
            {"inter_init_scale", cfg.network.inter_init_scale},
            {"mlr",
             {{"fix_input", cfg.mlr.fix_input},
              {"fix_output", cfg.mlr.fix_output},
              {"ridge_rel", cfg.mlr.ridge_rel},
              {"ridge_floor", cfg.mlr.ridge_floor},
              {"tolerance", cfg.mlr.tolerance},
              {"max_sweeps", cfg.mlr.max_sweeps},
              {"max_retries", cfg.mlr.max_retries},
              {"log_det_sign", cfg.mlr.sign == mtl::LogDetSign::Prior ? "prior" : "as_printed"}}},
            {"adam", {{"beta1", Adam::kBeta1}, {"beta2", Adam::kBeta2}, {"eps", Adam::kEps}}},
            {"activation", {{"hidden", "relu"}, {"output", "linear"}}}};
  return j.dump();
}

// --- Adam -------------------------------------------------------------------

Adam::Adam(const std::vector<Param>& params) {
  for (const Param& p : params) {
    m_.emplace_back(p.value.rows(), p.value.cols());
    v_.emplace_back(p.value.rows(), p.value.cols());
  }
}

void Adam::step(std::vector<Param>& params, const std::vector<Matrix>& grads, double lr,
                const std::vector<bool>& frozen) {
  if (params.size() != m_.size() || grads.size() != m_.size())
    throw UsageError("Adam::step: parameter count changed");
  ++t_;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!frozen.empty() && frozen[i]) continue;
    auto p = params[i].value.span();
    auto g = grads[i].span();
    auto m = m_[i].span();
    auto v = v_[i].span();
    require_shape(g.size() == p.size(), "Adam::step", params[i].value, grads[i]);
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = kBeta1 * m[k] + (1.0 - kBeta1) * g[k];
      v[k] = kBeta2 * v[k] + (1.0 - kBeta2) * g[k] * g[k];
      p[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + kEps);
    }
  }
}

// --- objective --------------------------------------------------------------

Penalties make_penalties(const Model& model, const TrainConfig& cfg) {
  Penalties pen;
  pen.alpha = cfg.alpha;
  pen.beta1 = cfg.resolved_beta1();
  pen.beta2 = cfg.resolved_beta2();
  pen.weight_decay = cfg.weight_decay;
  pen.sign = cfg.mlr.sign;
  pen.sharing = model.sharing();
  for (std::size_t l = 0; l < pen.sharing.size(); ++l) {
    if (pen.sharing[l] != Sharing::Mlr) continue;
    const Param* first = nullptr;
    for (const Param& p : model.params())
      if (p.layer == l && p.role == ParamRole::Intra) {
        first = &p;
        break;
      }
    if (!first) throw UsageError("make_penalties: MLR layer without intra weights");
    pen.mlr.emplace(l, mtl::MlrLayerState(first->value.rows(), first->value.cols(),
                                          model.n_modes(), l, cfg.mlr.fix_input,
                                          cfg.mlr.fix_output));
  }
  return pen;
}

ad::Var objective(ad::Tape& tape, const Model& model, std::span<const ad::Var> bound,
                  const Batch& batch, const Penalties& pen, ObjectiveParts* parts) {
  const auto& params = model.params();
  const auto preds = model.forward(tape, bound, batch.inputs);
  ad::Var sq;
  for (std::size_t m = 0; m < preds.size(); ++m) {
    ad::Var err = ad::sum_squares(ad::sub(preds[m], tape.constant(batch.labels[m])));
    sq = sq.valid() ? ad::add(sq, err) : err;
  }
  sq = ad::scale(sq, 1.0 / static_cast<double>(batch.size));
  ad::Var total = sq;
  ObjectiveParts local;
  local.sq_loss = sq.value()(0, 0);

  const std::size_t modes = model.n_modes();
  for (std::size_t l = 0; l < pen.sharing.size(); ++l) {
    if (pen.sharing[l] == Sharing::Rct) {
      std::vector<std::vector<ad::Var>> grid(modes, std::vector<ad::Var>(modes));
      for (std::size_t i = 0; i < params.size(); ++i)
        if (params[i].layer == l && params[i].role != ParamRole::Bias)
          grid[params[i].source][params[i].target] = bound[i];
      if (pen.beta1 > 0.0) {
        ad::Var j = mtl::j1(grid, pen.alpha);
        local.j1 += j.value()(0, 0);
        total = ad::add(total, ad::scale(j, pen.beta1));
      } else {
        std::vector<std::vector<const Matrix*>> values(modes,
                                                       std::vector<const Matrix*>(modes, nullptr));
        for (std::size_t k = 0; k < modes; ++k)
          for (std::size_t m = 0; m < modes; ++m)
            if (grid[k][m].valid()) values[k][m] = &grid[k][m].value();
        local.j1 += mtl::j1(values, pen.alpha);
      }
    } else if (pen.sharing[l] == Sharing::Mlr) {
      const mtl::MlrLayerState& state = pen.mlr.at(l);
      std::vector<ad::Var> intra(modes);
      for (std::size_t i = 0; i < params.size(); ++i)
        if (params[i].layer == l && params[i].role == ParamRole::Intra)
          intra[params[i].target] = bound[i];
      if (pen.beta2 > 0.0) {
        ad::Var j = mtl::j2(intra, state, pen.sign);
        local.j2 += j.value()(0, 0);
        total = ad::add(total, ad::scale(j, pen.beta2 / 2.0));
      } else {
        std::vector<const Matrix*> values;
        for (const ad::Var& v : intra) values.push_back(&v.value());
        local.j2 += mtl::j2(mtl::stack_weights(std::span<const Matrix* const>(values)), state, pen.sign);
      }
    }
  }
  if (pen.weight_decay > 0.0) {
    ad::Var decay;
    for (std::size_t i = 0; i < params.size(); ++i)
      if (params[i].role == ParamRole::Intra) {
        ad::Var t = ad::sum_squares(bound[i]);
        decay = decay.valid() ? ad::add(decay, t) : t;
      }
    if (decay.valid()) {
      decay = ad::scale(decay, pen.weight_decay / 2.0);
      local.decay = decay.value()(0, 0);
      total = ad::add(total, decay);
    }
  }
  local.total = total.value()(0, 0);
  if (parts) *parts = local;
  return total;
}

ObjectiveParts objective_and_grad(const Model& model, const Batch& batch, const Penalties& pen,
                                  std::vector<Matrix>* grads) {
  ad::Tape tape;
  std::vector<ad::Var> bound;
  for (const Param& p : model.params()) bound.push_back(tape.leaf(p.value, grads != nullptr));
  ObjectiveParts parts;
  ad::Var root = objective(tape, model, bound, batch, pen, &parts);
  if (grads) {
    tape.backward(root);
    grads->clear();
    for (std::size_t i = 0; i < bound.size(); ++i) {
      const Matrix& g = bound[i].grad();
      grads->push_back(g.rows() == 0 ? Matrix(bound[i].rows(), bound[i].cols()) : g);
    }
  }
  return parts;
}

// --- fit --------------------------------------------------------------------

std::vector<double> rmse_per_mode(const std::vector<Matrix>& predictions, const SampleSet& set,
                                  double* pooled) {
  std::vector<double> out;
  double total_sq = 0.0;
  std::size_t total_n = 0;
  for (std::size_t m = 0; m < predictions.size(); ++m) {
    double sq = 0.0;
    const Matrix& p = predictions[m];
    for (std::size_t s = 0; s < set.size(); ++s)
      for (std::size_t z = 0; z < set.n_zones(); ++z) {
        const double d = std::max(p(s, z), 0.0) - set.samples[s].labels[m][z];
        sq += d * d;
      }
    const std::size_t n = set.size() * set.n_zones();
    out.push_back(std::sqrt(sq / static_cast<double>(n)));
    total_sq += sq;
    total_n += n;
  }
  if (pooled) *pooled = std::sqrt(total_sq / static_cast<double>(total_n));
  return out;
}


namespace {

double grad_norm(const std::vector<Matrix>& grads, const std::vector<bool>& frozen) {
  double sq = 0.0;
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!frozen[i]) sq += frobenius_sq(grads[i]);
  return std::sqrt(sq);
}

void run_flip_flop(const Model& model, Penalties& pen, const mtl::MlrOptions& opt) {
  for (auto& [layer, state] : pen.mlr) {
    std::vector<const Matrix*> intra(model.n_modes(), nullptr);
    for (const Param& p : model.params())
      if (p.layer == layer && p.role == ParamRole::Intra) intra[p.target] = &p.value;
    mtl::flip_flop(mtl::stack_weights(std::span<const Matrix* const>(intra)), state, opt);
  }
}

}  // namespace

TrainRun fit(std::unique_ptr<Model> model, const SampleSet& train, const SampleSet& val,
             const TrainConfig& cfg, const StepCallback& on_step) {
  cfg.validate();
  if (!model) throw UsageError("fit: null model");
  if (train.size() == 0) throw ValidationError("training split has no samples");
  if (val.size() == 0) throw ValidationError("validation split has no samples");
  model->check_compatible(train);
  model->check_compatible(val);

  TrainRun run;
  run.config = cfg;
  Penalties pen = make_penalties(*model, cfg);
  auto& params = model->params();
  std::vector<bool> frozen(params.size(), false);
  if (cfg.freeze_inter)
    for (std::size_t i = 0; i < params.size(); ++i)
      if (params[i].role == ParamRole::Inter) {
        frozen[i] = true;
        params[i].value.fill(0.0);
      }
  const bool use_flip_flop = cfg.flip_flop && pen.beta2 > 0.0 && !pen.mlr.empty();

  Adam adam(params);
  std::seed_seq shuffle_seed{static_cast<std::uint32_t>(cfg.seed),
                             static_cast<std::uint32_t>(cfg.seed >> 32), 0x5u};
  std::mt19937_64 shuffle_rng(shuffle_seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  std::unique_ptr<Model> best = model->clone();
  Penalties best_pen = pen;
  run.best_val_rmse = std::numeric_limits<double>::infinity();
  std::size_t stale = 0, step = 0;
  bool out_of_steps = false;
  std::vector<Matrix> grads;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs && !out_of_steps; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const Batch batch = make_batch(
          train, std::span<const std::size_t>(order.data() + begin, end - begin), model->layout());
      const ObjectiveParts parts = objective_and_grad(*model, batch, pen, &grads);
      if (!std::isfinite(parts.total) || parts.total > 1e12) {
        std::ostringstream msg;
        msg << "training diverged at epoch " << epoch << " step " << step + 1
            << " (objective " << parts.total
            << "); try a smaller learning_rate, keep clip_norm enabled, or raise mlr.ridge_rel";
        run.failure = msg.str();
        run.model = std::move(best);
        run.penalties = std::move(best_pen);
        return run;
      }
      if (cfg.clip_norm > 0.0) {
        const double norm = grad_norm(grads, frozen);
        if (norm > cfg.clip_norm)
          for (Matrix& g : grads) g *= cfg.clip_norm / norm;
      }
      adam.step(params, grads, cfg.learning_rate, frozen);
      ++step;
      StepLog log{epoch, step, parts};
      run.steps.push_back(log);
      if (on_step) on_step(log, *model);
      loss_sum += parts.total;
      ++loss_count;
      if (cfg.max_steps && step >= cfg.max_steps) {
        out_of_steps = true;
        break;
      }
    }
    if (use_flip_flop) run_flip_flop(*model, pen, cfg.mlr);

    EpochLog e;
    e.epoch = epoch;
    e.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(loss_count, 1));
    e.val_rmse = rmse_per_mode(predict(*model, val), val, &e.val_rmse_pooled);
    if (!std::isfinite(e.val_rmse_pooled)) {
      run.failure = "validation RMSE became non-finite at epoch " + std::to_string(epoch) +
                    "; try a smaller learning_rate";
      run.model = std::move(best);
      run.penalties = std::move(best_pen);
      return run;
    }
    e.improved = e.val_rmse_pooled < run.best_val_rmse;
    if (e.improved) {
      run.best_val_rmse = e.val_rmse_pooled;
      run.best_epoch = epoch;
      best = model->clone();
      best_pen = pen;
      stale = 0;
    } else {
      ++stale;
    }
    run.epochs.push_back(e);
    if (stale > cfg.patience) {
      run.stopped_early = true;
      break;
    }
  }
  run.model = std::move(best);
  run.penalties = std::move(best_pen);
  return run;
}

void write_training_log(const TrainRun& run, const std::vector<std::string>& modes,
                        const std::filesystem::path& path) {
  std::string out = "epoch,step,sq_loss,j1,j2";
  for (const auto& m : modes) out += ",val_rmse_" + m;
  out += "\n";
  std::size_t e = 0;
  for (std::size_t i = 0; i < run.steps.size(); ++i) {
    const StepLog& s = run.steps[i];
    out += std::to_string(s.epoch) + "," + std::to_string(s.step) + "," +
           io::format_double(s.parts.sq_loss) + "," + io::format_double(s.parts.j1) + "," +
           io::format_double(s.parts.j2);
    const bool last_of_epoch = i + 1 == run.steps.size() || run.steps[i + 1].epoch != s.epoch;
    while (e < run.epochs.size() && run.epochs[e].epoch < s.epoch) ++e;
    const bool have_val = last_of_epoch && e < run.epochs.size() && run.epochs[e].epoch == s.epoch;
    for (std::size_t m = 0; m < modes.size(); ++m)
      out += "," + (have_val ? io::format_double(run.epochs[e].val_rmse.at(m)) : std::string());
    out += "\n";
  }
  io::write_text(path, out);
}

// --- checkpoints --------------------------------------------------------------

namespace {

const char* kFactorNames[3] = {"input", "output", "mode"};

Matrix scaler_matrix(const std::vector<std::vector<double>>& rows) {
  Matrix m(rows.size(), rows.empty() ? 0 : rows[0].size());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) m(i, j) = rows[i][j];
  return m;
}

std::vector<std::vector<double>> scaler_rows(const Matrix& m) {
  std::vector<std::vector<double>> out(m.rows(), std::vector<double>(m.cols()));
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
  return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const TrainRun& run,
                     const FeatureScaler& scaler, const std::string& extra_metadata_json) {
  const auto* net = dynamic_cast<const MgcNetwork*>(run.model.get());
  if (!net) throw UsageError("save_checkpoint: only MGC networks are checkpointed");
  for (const Param& p : net->params())
    if (!p.value.all_finite())
      throw NumericError("save_checkpoint: parameter " + p.name + " is not finite");
  io::TensorStore store;
  json names = json::array();
  for (const Param& p : net->params()) {
    store.put("param_" + p.name, p.value);
    names.push_back(p.name);
  }
  json mlr = json::array();
  for (const auto& [layer, state] : run.penalties.mlr) {
    for (int f = 0; f < 3; ++f)
      store.put("sigma_l" + std::to_string(layer) + "_" + kFactorNames[f], state.sigma(f));
    mlr.push_back({{"layer", layer}, {"fix_input", state.fixed(0)}, {"fix_output", state.fixed(1)}});
  }
  const GraphSet& g = net->graphs();
  for (std::size_t k = 0; k < 3; ++k)
    store.put(std::string("graph_") + kGraphNames[k], g.shared_normalized[k]);
  for (std::size_t m = 0; m < g.n_modes(); ++m)
    store.put("graph_mobility_" + std::to_string(m), g.mobility_normalized[m]);
  store.put("scaler_mean", scaler_matrix(scaler.mean));
  store.put("scaler_scale", scaler_matrix(scaler.scale));

  json meta = {{"format", "mgc-checkpoint-1"},
               {"kind", net->kind()},
               {"variant", to_string(net->variant())},
               {"widths", net->config().widths},
               {"input_features", net->config().input_features},
               {"inter_init_scale", net->config().inter_init_scale},
               {"rescale_output", net->config().rescale_output},
               {"activation", {{"hidden", "relu"}, {"output", "linear"}}},
               {"zones", g.zone_ids},
               {"modes", g.modes},
               {"seed", run.config.seed},
               {"config", json::parse(to_json_text(run.config))},
               {"best_epoch", run.best_epoch},
               {"best_val_rmse", run.best_val_rmse},
               {"epochs_run", run.epochs.size()},
               {"params", names},
               {"mlr_layers", mlr},
               {"extra", json::parse(extra_metadata_json)}};
  store.save(dir, meta.dump());
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::string meta_text;
  io::TensorStore store = io::TensorStore::load(dir, &meta_text);
  Checkpoint ck;
  ck.metadata_json = meta_text;
  try {
    const json meta = json::parse(meta_text);
    if (meta.at("format") != "mgc-checkpoint-1")
      throw LoadError("unsupported checkpoint format in " + dir.string());
    auto graphs = std::make_shared<GraphSet>();
    graphs->zone_ids = meta.at("zones").get<std::vector<std::string>>();
    graphs->modes = meta.at("modes").get<std::vector<std::string>>();
    for (std::size_t k = 0; k < 3; ++k)
      graphs->shared_normalized[k] = store.get(std::string("graph_") + kGraphNames[k]);
    for (std::size_t m = 0; m < graphs->modes.size(); ++m) {
      graphs->mobility_normalized.push_back(store.get("graph_mobility_" + std::to_string(m)));
      graphs->mobility.push_back(Matrix());
    }
    const std::size_t v = graphs->zone_ids.size();
    for (std::size_t k = 0; k < 3; ++k)
      if (graphs->shared_normalized[k].rows() != v || graphs->shared_normalized[k].cols() != v)
        throw LoadError("checkpoint graph " + std::string(kGraphNames[k]) + " has shape " +
                        shape_string(graphs->shared_normalized[k]) + ", expected " +
                        std::to_string(v) + "x" + std::to_string(v));
    NetworkConfig ncfg;
    ncfg.widths = meta.at("widths").get<std::vector<std::size_t>>();
    ncfg.input_features = meta.at("input_features").get<std::size_t>();
    ncfg.inter_init_scale = meta.at("inter_init_scale").get<double>();
    ncfg.rescale_output = meta.at("rescale_output").get<bool>();
    auto net = std::make_unique<MgcNetwork>(graphs, parse_variant(meta.at("variant").get<std::string>()),
                                            ncfg, meta.at("seed").get<std::uint64_t>());
    for (Param& p : net->params()) {
      const Matrix& stored = store.get("param_" + p.name);
      if (stored.rows() != p.value.rows() || stored.cols() != p.value.cols())
        throw LoadError("checkpoint tensor param_" + p.name + " has shape " +
                        shape_string(stored) + ", expected " + shape_string(p.value));
      p.value = stored;
    }
    TrainConfig cfg;
    cfg.variant = net->variant();
    const json& c = meta.at("config");
    cfg.alpha = c.at("alpha").get<double>();
    cfg.beta1 = c.at("beta1").get<double>();
    cfg.beta2 = c.at("beta2").get<double>();
    cfg.weight_decay = c.at("weight_decay").get<double>();
    cfg.mlr.fix_input = c.at("mlr").at("fix_input").get<bool>();
    cfg.mlr.fix_output = c.at("mlr").at("fix_output").get<bool>();
    cfg.mlr.sign = c.at("mlr").at("log_det_sign") == "prior" ? mtl::LogDetSign::Prior
                                                              : mtl::LogDetSign::AsPrinted;
    ck.penalties = make_penalties(*net, cfg);
    for (auto& [layer, state] : ck.penalties.mlr)
      for (int f = 0; f < 3; ++f) {
        Matrix s = store.get("sigma_l" + std::to_string(layer) + "_" + kFactorNames[f]);
        if (state.fixed(f)) {
          if (!(s == state.sigma(f)))
            throw LoadError("checkpoint: fixed covariance factor is not the identity");
          continue;
        }
        state.set_sigma(f, std::move(s));
      }
    ck.scaler.mean = scaler_rows(store.get("scaler_mean"));
    ck.scaler.scale = scaler_rows(store.get("scaler_scale"));
    if (ncfg.rescale_output) net->set_output_scaling(ck.scaler);
    ck.model = std::move(net);
  } catch (const json::exception& e) {
    throw LoadError("bad checkpoint manifest in " + dir.string() + ": " + e.what());
  } catch (const ShapeError& e) {
    throw LoadError(std::string("checkpoint: ") + e.what());
  }
  return ck;
}

}  // namespace mgc
