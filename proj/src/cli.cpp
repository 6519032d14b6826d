#include "mgc/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mgc/baselines.hpp"
#include "mgc/dataset.hpp"
#include "mgc/errors.hpp"
#include "mgc/eval.hpp"
#include "mgc/graphs.hpp"
#include "mgc/io.hpp"
#include "mgc/model.hpp"
#include "mgc/timeutil.hpp"
#include "mgc/train.hpp"

namespace mgc::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Strict configuration parsing

class Section {
 public:
  Section(const json& node, std::string name, std::vector<std::string> keys)
      : node_(node), name_(std::move(name)), keys_(std::move(keys)) {
    if (!node_.is_object()) throw ValidationError("config section '" + name_ + "' must be an object");
    for (const auto& item : node_.items())
      if (std::find(keys_.begin(), keys_.end(), item.key()) == keys_.end()) {
        std::vector<std::string> sorted = keys_;
        std::sort(sorted.begin(), sorted.end());
        std::string valid;
        for (const auto& k : sorted) valid += (valid.empty() ? "" : ", ") + k;
        throw ValidationError("unknown key '" + item.key() + "' in config section '" + name_ +
                              "' (valid keys: " + valid + ")");
      }
  }

  bool has(const std::string& key) const { return node_.contains(key); }
  const json& at(const std::string& key) const { return node_.at(key); }
  std::string path(const std::string& key) const { return name_ + "." + key; }

  template <class T>
  void get(const std::string& key, T& dst) const {
    if (!has(key)) return;
    try {
      dst = node_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ValidationError("config value " + path(key) + " has the wrong type (got " +
                            node_.at(key).dump() + ")");
    }
  }

  template <class T>
  void get(const std::string& key, std::optional<T>& dst) const {
    if (!has(key)) return;
    T v{};
    get(key, v);
    dst = v;
  }

 private:
  const json& node_;
  std::string name_;
  std::vector<std::string> keys_;
};

struct Paths {
  std::optional<fs::path> zones, adjacency, demand, graphs, checkpoint;
  std::vector<fs::path> trips;
};

struct SplitConfig {
  std::optional<std::array<std::array<std::string, 2>, 3>> dates;
  double train_fraction = 0.7;
  double val_fraction = 0.15;
};

struct IngestConfig {
  std::string start, end;
  TripColumns columns;
};

struct BaselineConfig {
  std::vector<std::string> models = {"HA", "LASSO", "MLP"};
  MlpConfig mlp;
  std::optional<std::size_t> mlp_max_epochs;
};

struct AppConfig {
  fs::path base_dir = ".";
  std::optional<fs::path> file;
  std::uint64_t seed = 0;
  std::vector<std::string> modes = {"solo", "shared"};
  Paths paths;
  IngestConfig ingest;
  SplitConfig split;
  SynthConfig synth;
  TrainConfig train;
  BaselineConfig baselines;
};

fs::path resolve(const AppConfig& cfg, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : cfg.base_dir / path;
}

void parse_paths(const json& node, AppConfig& cfg) {
  const Section s(node, "paths", {"zones", "adjacency", "demand", "graphs", "checkpoint", "trips"});
  auto opt = [&](const char* key, std::optional<fs::path>& dst) {
    std::optional<std::string> v;
    s.get(key, v);
    if (v) dst = resolve(cfg, *v);
  };
  opt("zones", cfg.paths.zones);
  opt("adjacency", cfg.paths.adjacency);
  opt("demand", cfg.paths.demand);
  opt("graphs", cfg.paths.graphs);
  opt("checkpoint", cfg.paths.checkpoint);
  std::vector<std::string> trips;
  if (s.has("trips") && s.at("trips").is_string()) trips.push_back(s.at("trips").get<std::string>());
  else s.get("trips", trips);
  for (const auto& t : trips) cfg.paths.trips.push_back(resolve(cfg, t));
}

void parse_ingest(const json& node, AppConfig& cfg) {
  const Section s(node, "ingest", {"start", "end", "columns"});
  s.get("start", cfg.ingest.start);
  s.get("end", cfg.ingest.end);
  if (s.has("columns")) {
    const Section c(s.at("columns"), "ingest.columns",
                    {"pickup_datetime", "pickup_zone", "mode", "mode_values"});
    c.get("pickup_datetime", cfg.ingest.columns.pickup_datetime);
    c.get("pickup_zone", cfg.ingest.columns.pickup_zone);
    c.get("mode", cfg.ingest.columns.mode);
    c.get("mode_values", cfg.ingest.columns.mode_values);
  }
}

void parse_split(const json& node, AppConfig& cfg) {
  const Section s(node, "split", {"train", "val", "test", "train_fraction", "val_fraction"});
  s.get("train_fraction", cfg.split.train_fraction);
  s.get("val_fraction", cfg.split.val_fraction);
  const int given = int(s.has("train")) + int(s.has("val")) + int(s.has("test"));
  if (given == 0) return;
  if (given != 3)
    throw ValidationError("config section 'split' needs all of train, val and test date ranges");
  std::array<std::array<std::string, 2>, 3> d;
  s.get("train", d[0]);
  s.get("val", d[1]);
  s.get("test", d[2]);
  cfg.split.dates = d;
}

void parse_synth(const json& node, AppConfig& cfg) {
  const Section s(node, "synth",
                  {"n_zones", "n_hours", "n_modes", "coupling", "mode_names", "mode_shares",
                   "base_rate", "mode_noise_sigma", "shock_ar", "city_shock_sd", "zone_shock_sd",
                   "n_attributes", "start"});
  SynthConfig& c = cfg.synth;
  s.get("n_zones", c.n_zones);
  s.get("n_hours", c.n_hours);
  s.get("n_modes", c.n_modes);
  s.get("coupling", c.coupling);
  s.get("mode_names", c.mode_names);
  s.get("mode_shares", c.mode_shares);
  s.get("base_rate", c.base_rate);
  s.get("mode_noise_sigma", c.mode_noise_sigma);
  s.get("shock_ar", c.shock_ar);
  s.get("city_shock_sd", c.city_shock_sd);
  s.get("zone_shock_sd", c.zone_shock_sd);
  s.get("n_attributes", c.n_attributes);
  s.get("start", c.start);
}

void parse_train(const json& node, AppConfig& cfg) {
  const Section s(node, "train",
                  {"variant", "learning_rate", "batch_size", "alpha", "beta1", "beta2",
                   "max_epochs", "patience", "max_steps", "clip_norm", "weight_decay",
                   "freeze_inter", "flip_flop", "widths", "inter_init_scale", "rescale_output",
                   "mlr"});
  TrainConfig& t = cfg.train;
  if (s.has("variant")) {
    std::string v;
    s.get("variant", v);
    t.variant = parse_variant(v);
  }
  s.get("learning_rate", t.learning_rate);
  s.get("batch_size", t.batch_size);
  s.get("alpha", t.alpha);
  s.get("beta1", t.beta1);
  s.get("beta2", t.beta2);
  s.get("max_epochs", t.max_epochs);
  s.get("patience", t.patience);
  s.get("max_steps", t.max_steps);
  s.get("clip_norm", t.clip_norm);
  s.get("weight_decay", t.weight_decay);
  s.get("freeze_inter", t.freeze_inter);
  s.get("flip_flop", t.flip_flop);
  s.get("widths", t.network.widths);
  s.get("inter_init_scale", t.network.inter_init_scale);
  s.get("rescale_output", t.network.rescale_output);
  if (s.has("mlr")) {
    const Section m(s.at("mlr"), "train.mlr",
                    {"fix_input", "fix_output", "ridge_rel", "ridge_floor", "tolerance",
                     "max_sweeps", "max_retries", "log_det_sign"});
    m.get("fix_input", t.mlr.fix_input);
    m.get("fix_output", t.mlr.fix_output);
    m.get("ridge_rel", t.mlr.ridge_rel);
    m.get("ridge_floor", t.mlr.ridge_floor);
    m.get("tolerance", t.mlr.tolerance);
    m.get("max_sweeps", t.mlr.max_sweeps);
    m.get("max_retries", t.mlr.max_retries);
    if (m.has("log_det_sign")) {
      std::string sign;
      m.get("log_det_sign", sign);
      if (sign == "prior") t.mlr.sign = mtl::LogDetSign::Prior;
      else if (sign == "as_printed") t.mlr.sign = mtl::LogDetSign::AsPrinted;
      else
        throw ValidationError("train.mlr.log_det_sign must be 'prior' or 'as_printed', got '" +
                              sign + "'");
    }
  }
}

void parse_baselines(const json& node, AppConfig& cfg) {
  const Section s(node, "baselines", {"models", "mlp_widths", "mlp_max_epochs"});
  s.get("models", cfg.baselines.models);
  for (std::string& m : cfg.baselines.models) {
    std::transform(m.begin(), m.end(), m.begin(), [](unsigned char c) { return std::toupper(c); });
    if (m != "HA" && m != "LASSO" && m != "MLP")
      throw ValidationError("unknown baseline '" + m + "' (valid: HA, LASSO, MLP)");
  }
  s.get("mlp_widths", cfg.baselines.mlp.widths);
  s.get("mlp_max_epochs", cfg.baselines.mlp_max_epochs);
}

AppConfig load_config(const std::optional<std::string>& file) {
  AppConfig cfg;
  if (!file) return cfg;
  cfg.file = fs::absolute(*file);
  cfg.base_dir = cfg.file->parent_path();
  json root;
  try {
    root = json::parse(io::read_text(*cfg.file));
  } catch (const json::parse_error& e) {
    throw ValidationError("config " + *file + " is not valid JSON: " + e.what());
  }
  const Section top(root, "<root>",
                    {"seed", "modes", "paths", "ingest", "split", "synth", "train", "baselines"});
  top.get("seed", cfg.seed);
  top.get("modes", cfg.modes);
  if (top.has("paths")) parse_paths(top.at("paths"), cfg);
  if (top.has("ingest")) parse_ingest(top.at("ingest"), cfg);
  if (top.has("split")) parse_split(top.at("split"), cfg);
  if (top.has("synth")) parse_synth(top.at("synth"), cfg);
  if (top.has("train")) parse_train(top.at("train"), cfg);
  if (top.has("baselines")) parse_baselines(top.at("baselines"), cfg);
  return cfg;
}

json resolved_json(const AppConfig& cfg) {
  json paths = json::object();
  auto put = [&](const char* k, const std::optional<fs::path>& p) {
    if (p) paths[k] = p->string();
  };
  put("zones", cfg.paths.zones);
  put("adjacency", cfg.paths.adjacency);
  put("demand", cfg.paths.demand);
  put("graphs", cfg.paths.graphs);
  put("checkpoint", cfg.paths.checkpoint);
  json trips = json::array();
  for (const auto& t : cfg.paths.trips) trips.push_back(t.string());
  paths["trips"] = trips;
  json split = {{"train_fraction", cfg.split.train_fraction},
                {"val_fraction", cfg.split.val_fraction}};
  if (cfg.split.dates) {
    split["train"] = (*cfg.split.dates)[0];
    split["val"] = (*cfg.split.dates)[1];
    split["test"] = (*cfg.split.dates)[2];
  }
  const SynthConfig& s = cfg.synth;
  json synth = {{"n_zones", s.n_zones},
                {"n_hours", s.n_hours},
                {"n_modes", s.n_modes},
                {"coupling", s.coupling},
                {"mode_names", s.mode_names},
                {"mode_shares", s.mode_shares},
                {"base_rate", s.base_rate},
                {"mode_noise_sigma", s.mode_noise_sigma},
                {"shock_ar", s.shock_ar},
                {"city_shock_sd", s.city_shock_sd},
                {"zone_shock_sd", s.zone_shock_sd},
                {"n_attributes", s.n_attributes},
                {"start", s.start}};
  json train = json::parse(to_json_text(cfg.train));
  train["rescale_output"] = cfg.train.network.rescale_output;
  return {{"seed", cfg.seed},
          {"modes", cfg.modes},
          {"paths", paths},
          {"ingest",
           {{"start", cfg.ingest.start},
            {"end", cfg.ingest.end},
            {"columns",
             {{"pickup_datetime", cfg.ingest.columns.pickup_datetime},
              {"pickup_zone", cfg.ingest.columns.pickup_zone},
              {"mode", cfg.ingest.columns.mode},
              {"mode_values", cfg.ingest.columns.mode_values}}}}},
          {"split", split},
          {"synth", synth},
          {"train", train},
          {"baselines",
           {{"models", cfg.baselines.models},
            {"mlp_widths", cfg.baselines.mlp.widths},
            {"mlp_max_epochs", cfg.baselines.mlp_max_epochs
                                   ? json(*cfg.baselines.mlp_max_epochs)
                                   : json(cfg.train.max_epochs)}}}};
}

// ---------------------------------------------------------------------------
// Run context

struct Run {
  std::string command;
  AppConfig cfg;
  fs::path out;
  std::ostream& log;
  json inputs = json::object();
  json outputs = json::array();

  fs::path zones_csv() const { return cfg.paths.zones.value_or(out / "zones.csv"); }
  fs::path adjacency_csv() const { return cfg.paths.adjacency.value_or(out / "adjacency.csv"); }
  fs::path demand_dir() const { return cfg.paths.demand.value_or(out / "demand"); }
  fs::path checkpoint_dir() const { return cfg.paths.checkpoint.value_or(out / "checkpoint"); }

  void input(const std::string& name, const fs::path& p) {
    if (!fs::exists(p)) throw ValidationError(name + " not found: " + p.string());
    inputs[name] = {{"path", p.string()}, {"hash", io::content_hash(p)}};
  }
  void output(const fs::path& p) { outputs.push_back(p.lexically_relative(out).string()); }

  // run.json holds one entry per subcommand run in this output directory.
  void record(const json& extra = json::object()) const {
    const fs::path path = out / "run.json";
    json all = json::object();
    if (fs::exists(path)) {
      try {
        all = json::parse(io::read_text(path));
      } catch (const json::exception&) {
        all = json::object();
      }
      if (!all.is_object()) all = json::object();
    }
    json entry = {{"seed", cfg.seed}, {"resolved_config", resolved_json(cfg)},
                  {"inputs", inputs}, {"outputs", outputs}};
    if (cfg.file) {
      entry["config_file"] = cfg.file->string();
      entry["config_hash"] = io::content_hash(*cfg.file);
    }
    for (const auto& item : extra.items()) entry[item.key()] = item.value();
    all[command] = entry;
    io::write_text(path, all.dump(2) + "\n");
  }
};

ZoneTable load_zones(Run& run) {
  run.input("zones", run.zones_csv());
  run.input("adjacency", run.adjacency_csv());
  ZoneTable zones = ZoneTable::load(run.zones_csv(), run.adjacency_csv());
  zones.validate();
  return zones;
}

DemandTensor load_demand(Run& run) {
  run.input("demand", run.demand_dir());
  return DemandTensor::load(run.demand_dir());
}

SplitSpec make_split(const AppConfig& cfg, const DemandTensor& demand) {
  if (cfg.split.dates) {
    const auto& d = *cfg.split.dates;
    return date_split(d[0], d[1], d[2]);
  }
  return fractional_split(demand, cfg.split.train_fraction, cfg.split.val_fraction);
}

std::size_t train_end_index(const SplitSpec& split, const DemandTensor& demand) {
  return static_cast<std::size_t>(split.train.end - demand.start_hour());
}

json split_json(const SplitSpec& s) {
  auto range = [](const HourRange& r) {
    return json::array({timeutil::format_hour(r.begin), timeutil::format_hour(r.end)});
  };
  return {{"train", range(s.train)}, {"val", range(s.val)}, {"test", range(s.test)}};
}

std::string model_name(Variant v) {
  return v == Variant::MGC ? "MGC" : to_string(v) + "-MGC";
}

void print_metrics(std::ostream& os, const std::vector<eval::MetricRow>& rows) {
  os << std::left << std::setw(10) << "model" << std::setw(10) << "mode" << std::right
     << std::setw(12) << "RMSE" << std::setw(12) << "MAE" << std::setw(12) << "MAPE" << "\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(10) << r.model << std::setw(10) << r.mode << std::right
       << std::fixed << std::setprecision(4) << std::setw(12) << r.rmse << std::setw(12) << r.mae
       << std::setw(12);
    if (r.mape) os << *r.mape;
    else os << eval::kUndefined;
    os << "\n";
  }
  os.unsetf(std::ios::floatfield);
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_synth(Run& run) {
  SynthConfig sc = run.cfg.synth;
  if (sc.mode_names.empty() && run.cfg.modes.size() == sc.n_modes) sc.mode_names = run.cfg.modes;
  sc.validate();
  const SynthData data = synthesize(sc, run.cfg.seed);
  data.zones.save(run.out / "zones.csv", run.out / "adjacency.csv");
  data.demand.save(run.out / "demand");
  run.output(run.out / "zones.csv");
  run.output(run.out / "adjacency.csv");
  run.output(run.out / "demand");
  run.record({{"demand_hash", io::content_hash(run.out / "demand")}});
  run.log << "synthesized " << data.demand.n_zones() << " zones x " << data.demand.n_hours()
          << " hours x " << data.demand.n_modes() << " modes (total " << data.demand.total()
          << " requests)\n";
  return kExitOk;
}

int cmd_ingest(Run& run) {
  const AppConfig& cfg = run.cfg;
  if (!cfg.paths.zones || !cfg.paths.adjacency)
    throw ValidationError("ingest needs paths.zones and paths.adjacency in the config");
  if (cfg.paths.trips.empty()) throw ValidationError("ingest needs paths.trips in the config");
  if (cfg.ingest.start.empty() || cfg.ingest.end.empty())
    throw ValidationError("ingest needs ingest.start and ingest.end dates");
  if (cfg.modes.empty()) throw ValidationError("config lists no modes");
  const ZoneTable zones = load_zones(run);
  const std::int64_t start = timeutil::hour_of(timeutil::parse_datetime(cfg.ingest.start));
  const std::int64_t end_day = timeutil::floor_div(
      timeutil::hour_of(timeutil::parse_datetime(cfg.ingest.end)), 24);
  const std::int64_t end = (end_day + 1) * 24;
  if (end <= start) throw ValidationError("ingest.end must not precede ingest.start");
  DemandAggregator agg(zones.ids(), cfg.modes, start, static_cast<std::size_t>(end - start));
  for (std::size_t i = 0; i < cfg.paths.trips.size(); ++i) {
    run.input("trips_" + std::to_string(i), cfg.paths.trips[i]);
    read_trips(cfg.paths.trips[i], cfg.ingest.columns, [&](const TripRecord& r) { agg.add(r); });
  }
  const AggregateReport report = agg.report();
  DemandTensor demand = std::move(agg).finish();
  demand.save(run.out / "demand");
  run.output(run.out / "demand");
  const json rep = {{"accepted", report.accepted},
                    {"unknown_zone", report.unknown_zone},
                    {"unknown_mode", report.unknown_mode},
                    {"out_of_range", report.out_of_range}};
  io::write_text(run.out / "ingest_report.json", rep.dump(2) + "\n");
  run.output(run.out / "ingest_report.json");
  run.record({{"report", rep}});
  run.log << "ingested " << report.accepted << " trips into " << demand.n_zones() << " zones x "
          << demand.n_hours() << " hours; skipped " << report.unknown_zone << " unknown zone, "
          << report.unknown_mode << " unknown mode, " << report.out_of_range
          << " out of range\n";
  return kExitOk;
}

std::shared_ptr<GraphSet> graphs_for(Run& run, const DemandTensor& demand, const SplitSpec& split,
                                     bool save) {
  if (run.cfg.paths.graphs) {
    run.input("graphs", *run.cfg.paths.graphs);
    auto g = std::make_shared<GraphSet>(GraphSet::load(*run.cfg.paths.graphs));
    if (g->zone_ids != demand.zones() || g->modes != demand.modes())
      throw ValidationError("graph set zones/modes do not match the demand data");
    return g;
  }
  const ZoneTable zones = load_zones(run);
  auto g = std::make_shared<GraphSet>(build_graph_set(zones, demand, train_end_index(split, demand)));
  if (save) {
    g->save(run.out / "graphs");
    run.output(run.out / "graphs");
  }
  return g;
}

int cmd_build_graphs(Run& run) {
  const DemandTensor demand = load_demand(run);
  const SplitSpec split = make_split(run.cfg, demand);
  const ZoneTable zones = load_zones(run);
  const GraphSet g = build_graph_set(zones, demand, train_end_index(split, demand));
  g.save(run.out / "graphs");
  run.output(run.out / "graphs");
  run.record({{"split", split_json(split)}});
  run.log << "built graphs for " << g.n_zones() << " zones and " << g.n_modes() << " modes\n";
  return kExitOk;
}

void write_sigma_csv(const fs::path& path, const Penalties& pen) {
  std::string out = "layer,row,col,value\n";
  for (const auto& [layer, state] : pen.mlr) {
    const Matrix& s = state.sigma(mtl::kMode);
    for (std::size_t i = 0; i < s.rows(); ++i)
      for (std::size_t j = 0; j < s.cols(); ++j)
        out += std::to_string(layer) + "," + std::to_string(i) + "," + std::to_string(j) + "," +
               io::format_double(s(i, j)) + "\n";
  }
  io::write_text(path, out);
}

int cmd_train(Run& run) {
  TrainConfig tc = run.cfg.train;
  tc.seed = run.cfg.seed;
  tc.validate();
  const DemandTensor demand = load_demand(run);
  const SplitSpec split = make_split(run.cfg, demand);
  const Splits sets = make_samples(demand, split);
  auto graphs = graphs_for(run, demand, split, true);
  auto net = std::make_unique<MgcNetwork>(graphs, tc.variant, tc.network, tc.seed);
  if (tc.network.rescale_output) net->set_output_scaling(sets.train.scaler);
  run.log << "training " << model_name(tc.variant) << " on " << sets.train.size()
          << " samples (val " << sets.val.size() << ", test " << sets.test.size() << ")\n";
  TrainRun result = fit(std::move(net), sets.train, sets.val, tc);
  for (const EpochLog& e : result.epochs)
    run.log << "  epoch " << e.epoch << " loss " << e.train_loss << " val_rmse "
            << e.val_rmse_pooled << (e.improved ? " *" : "") << "\n";

  const json extra = {{"data", {{"demand_hash", run.inputs.at("demand").at("hash")}}},
                      {"split", split_json(split)},
                      {"failure", result.failure ? json(*result.failure) : json(nullptr)}};
  save_checkpoint(run.out / "checkpoint", result, sets.train.scaler, extra.dump());
  write_training_log(result, sets.train.modes, run.out / "training_log.csv");
  write_sigma_csv(run.out / "sigma_mode.csv", result.penalties);
  run.output(run.out / "checkpoint");
  run.output(run.out / "training_log.csv");
  run.output(run.out / "sigma_mode.csv");
  run.record({{"split", split_json(split)},
              {"best_epoch", result.best_epoch},
              {"best_val_rmse", result.best_val_rmse},
              {"epochs_run", result.epochs.size()},
              {"stopped_early", result.stopped_early},
              {"failure", extra.at("failure")}});
  if (result.failure) {
    run.log << "training failed: " << *result.failure << " (best checkpoint saved)\n";
    return kExitNumeric;
  }
  run.log << "best epoch " << result.best_epoch << ", val RMSE " << result.best_val_rmse << "\n";
  return kExitOk;
}

struct Loaded {
  Checkpoint ck;
  DemandTensor demand;
  SplitSpec split;
  Splits sets;
  std::string name;
};

Loaded load_for_inference(Run& run) {
  Loaded l;
  run.input("checkpoint", run.checkpoint_dir());
  l.ck = load_checkpoint(run.checkpoint_dir());
  l.demand = load_demand(run);
  l.split = make_split(run.cfg, l.demand);
  l.sets = make_samples(l.demand, l.split);
  if (l.sets.train.scaler.mean != l.ck.scaler.mean || l.sets.train.scaler.scale != l.ck.scaler.scale)
    throw ValidationError("the checkpoint was trained on different data or a different split "
                          "(feature statistics differ)");
  const auto* net = dynamic_cast<const MgcNetwork*>(l.ck.model.get());
  l.name = model_name(net->variant());
  return l;
}

int cmd_evaluate(Run& run) {
  Loaded l = load_for_inference(run);
  const SampleSet& test = l.sets.test;
  std::vector<eval::MetricRow> rows;
  auto emit = [&](const std::string& name, const std::vector<Matrix>& preds) {
    const fs::path file = run.out / ("predictions_" + name + ".csv");
    eval::write_predictions(file, eval::prediction_records(preds, test));
    run.output(file);
    for (auto& r : eval::score(name, preds, test)) rows.push_back(std::move(r));
  };
  emit(l.name, predict(*l.ck.model, test));

  json baseline_info = json::object();
  for (const std::string& b : run.cfg.baselines.models) {
    if (b == "HA") {
      emit("HA", ha_predict(l.demand, test));
    } else if (b == "LASSO") {
      LassoBaseline lasso;
      lasso.fit(l.sets.train, l.sets.val);
      if (lasso.unconverged())
        run.log << "warning: " << lasso.unconverged()
                << " LASSO fits hit the sweep cap; using their last iterate\n";
      baseline_info["lasso_unconverged"] = lasso.unconverged();
      emit("LASSO", lasso.predict(test));
    } else if (b == "MLP") {
      TrainConfig tc = run.cfg.train;
      tc.variant = Variant::MGC;
      tc.beta1 = 0.0;
      tc.beta2 = 0.0;
      tc.freeze_inter = false;
      tc.seed = run.cfg.seed;
      if (run.cfg.baselines.mlp_max_epochs) tc.max_epochs = *run.cfg.baselines.mlp_max_epochs;
      MlpConfig mc = run.cfg.baselines.mlp;
      mc.rescale_output = tc.network.rescale_output;
      auto mlp = std::make_unique<MlpNetwork>(test.zones, test.modes, mc, tc.seed);
      if (mc.rescale_output) mlp->set_output_scaling(l.sets.train.scaler);
      const TrainRun r = fit(std::move(mlp), l.sets.train, l.sets.val, tc);
      if (r.failure) throw NumericError("MLP baseline: " + *r.failure);
      baseline_info["mlp_best_epoch"] = r.best_epoch;
      emit("MLP", predict(*r.model, test));
    }
  }
  eval::write_metrics(run.out / "metrics.csv", rows);
  run.output(run.out / "metrics.csv");
  run.record({{"split", split_json(l.split)}, {"model", l.name}, {"baselines", baseline_info}});
  print_metrics(run.log, rows);
  return kExitOk;
}

int cmd_predict(Run& run, const std::string& which) {
  Loaded l = load_for_inference(run);
  const SampleSet* set = which == "train" ? &l.sets.train : which == "val" ? &l.sets.val : &l.sets.test;
  const fs::path file = run.out / ("predict_" + which + ".csv");
  eval::write_predictions(file, eval::prediction_records(predict(*l.ck.model, *set), *set));
  run.output(file);
  run.record({{"split", split_json(l.split)}, {"model", l.name}, {"which", which}});
  run.log << "wrote " << set->size() * set->n_zones() * set->n_modes() << " predictions to "
          << file.string() << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-graph convolution ride-hailing demand prediction"};
  app.require_subcommand(1);
  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> variant;
  std::string out_dir = "mgc_run";
  std::string which = "test";

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON configuration file");
    sub->add_option("--seed", seed, "Random seed (overrides the config)");
    sub->add_option("--out", out_dir, "Output directory")->capture_default_str();
  };
  CLI::App* ingest = app.add_subcommand("ingest", "Aggregate trip records into hourly zone demand");
  CLI::App* synth = app.add_subcommand("synth", "Generate synthetic multi-mode demand");
  CLI::App* graphs = app.add_subcommand("build-graphs", "Build the four zone graphs");
  CLI::App* train = app.add_subcommand("train", "Train an MGC network variant");
  CLI::App* evaluate = app.add_subcommand("evaluate", "Score a checkpoint and the baselines on the test split");
  CLI::App* predict_cmd = app.add_subcommand("predict", "Write predictions of a checkpoint");
  for (CLI::App* sub : {ingest, synth, graphs, train, evaluate, predict_cmd}) common(sub);
  train->add_option("--variant", variant, "MGC, RCT, MLR or MIX (overrides the config)");
  predict_cmd->add_option("--split", which, "train, val or test")
      ->check(CLI::IsMember({"train", "val", "test"}))
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    AppConfig cfg = load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (variant) cfg.train.variant = parse_variant(*variant);
    const fs::path out_path(out_dir);
    fs::create_directories(out_path);
    CLI::App* chosen = app.get_subcommands().front();
    Run run{chosen->get_name(), std::move(cfg), out_path, out};
    if (chosen == synth) return cmd_synth(run);
    if (chosen == ingest) return cmd_ingest(run);
    if (chosen == graphs) return cmd_build_graphs(run);
    if (chosen == train) return cmd_train(run);
    if (chosen == evaluate) return cmd_evaluate(run);
    return cmd_predict(run, which);
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const UsageError& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }
}

}  // namespace mgc::cli
