#include "mgc/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "mgc/errors.hpp"
#include "mgc/timeutil.hpp"

namespace mgc {

// --- historical average ------------------------------------------------------

double ha_predict(const DemandTensor& demand, std::size_t zone, std::size_t mode, std::size_t t) {
  constexpr std::size_t history = kHaWeeks * kHoursPerWeek;
  if (t < history)
    throw ValidationError("historical average needs " + std::to_string(kHaWeeks) +
                          " weeks of history before " + timeutil::format_hour(demand.hour_at(t)) +
                          "; the first feasible target hour is " +
                          timeutil::format_hour(demand.hour_at(history)));
  if (t >= demand.n_hours())
    throw ValidationError("historical average target " + timeutil::format_hour(demand.hour_at(t)) +
                          " is past the end of the demand data");
  double sum = 0.0;
  for (std::size_t w = 1; w <= kHaWeeks; ++w) sum += demand(zone, t - w * kHoursPerWeek, mode);
  return sum / static_cast<double>(kHaWeeks);
}

std::vector<Matrix> ha_predict(const DemandTensor& demand, const SampleSet& set) {
  if (set.zones != demand.zones() || set.modes != demand.modes())
    throw ValidationError("historical average: sample zones/modes differ from the demand data");
  std::vector<Matrix> out(set.n_modes(), Matrix(set.size(), set.n_zones()));
  for (std::size_t s = 0; s < set.size(); ++s) {
    const std::int64_t rel = set.samples[s].label_hour - demand.start_hour();
    if (rel < 0) throw ValidationError("historical average: label hour precedes the demand data");
    for (std::size_t m = 0; m < set.n_modes(); ++m)
      for (std::size_t z = 0; z < set.n_zones(); ++z)
        out[m](s, z) = ha_predict(demand, z, m, static_cast<std::size_t>(rel));
  }
  return out;
}

// --- LASSO -------------------------------------------------------------------

double soft_threshold(double x, double lambda) {
  if (x > lambda) return x - lambda;
  if (x < -lambda) return x + lambda;
  return 0.0;
}

namespace {

LassoFit lasso_fit_warm(const Matrix& x, std::span<const double> y, double lambda, double tol,
                        int max_sweeps, std::vector<double> start) {
  const std::size_t n = x.rows(), p = x.cols();
  if (y.size() != n)
    throw ShapeError("lasso_fit: " + std::to_string(n) + " rows but " + std::to_string(y.size()) +
                     " targets");
  if (n == 0) throw ValidationError("lasso_fit: no samples");
  if (lambda < 0.0) throw ValidationError("lasso_fit: lambda must be non-negative");
  const double inv_n = 1.0 / static_cast<double>(n);

  std::vector<double> xm(p, 0.0);
  double ym = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ym += y[i];
    for (std::size_t j = 0; j < p; ++j) xm[j] += x(i, j);
  }
  ym *= inv_n;
  for (double& v : xm) v *= inv_n;
  // Column-major centered copy for contiguous coordinate sweeps.
  std::vector<double> xc(n * p);
  std::vector<double> norm(p, 0.0);
  for (std::size_t j = 0; j < p; ++j)
    for (std::size_t i = 0; i < n; ++i) {
      const double v = x(i, j) - xm[j];
      xc[j * n + i] = v;
      norm[j] += v * v * inv_n;
    }

  LassoFit fit;
  fit.weights = start.size() == p ? std::move(start) : std::vector<double>(p, 0.0);
  std::vector<double> r(n);
  for (std::size_t i = 0; i < n; ++i) {
    double pred = 0.0;
    for (std::size_t j = 0; j < p; ++j) pred += xc[j * n + i] * fit.weights[j];
    r[i] = y[i] - ym - pred;
  }
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double max_delta = 0.0;
    for (std::size_t j = 0; j < p; ++j) {
      const double old = fit.weights[j];
      double next = 0.0;
      if (norm[j] > 0.0) {
        const double* col = &xc[j * n];
        double rho = 0.0;
        for (std::size_t i = 0; i < n; ++i) rho += col[i] * r[i];
        rho = rho * inv_n + norm[j] * old;
        next = soft_threshold(rho, lambda) / norm[j];
      }
      const double delta = next - old;
      if (delta != 0.0) {
        const double* col = &xc[j * n];
        for (std::size_t i = 0; i < n; ++i) r[i] -= col[i] * delta;
        fit.weights[j] = next;
      }
      max_delta = std::max(max_delta, std::abs(delta));
    }
    fit.sweeps = sweep + 1;
    if (max_delta < tol) {
      fit.converged = true;
      break;
    }
  }
  fit.intercept = ym;
  for (std::size_t j = 0; j < p; ++j) fit.intercept -= xm[j] * fit.weights[j];
  return fit;
}

double lasso_eval(const LassoFit& f, const Matrix& x, std::size_t row) {
  double v = f.intercept;
  for (std::size_t j = 0; j < x.cols(); ++j) v += x(row, j) * f.weights[j];
  return v;
}

}  // namespace

LassoFit lasso_fit(const Matrix& x, std::span<const double> y, double lambda, double tol,
                   int max_sweeps) {
  return lasso_fit_warm(x, y, lambda, tol, max_sweeps, {});
}

std::vector<double> default_lasso_grid() {
  std::vector<double> grid;
  for (int i = 0; i < 10; ++i) grid.push_back(std::pow(10.0, -3.0 + 5.0 * i / 9.0));
  return grid;
}

Matrix zone_design(const SampleSet& set, std::size_t zone) {
  Matrix x(set.size(), kLagFeatures * set.n_modes());
  for (std::size_t s = 0; s < set.size(); ++s)
    for (std::size_t m = 0; m < set.n_modes(); ++m)
      for (std::size_t c = 0; c < kLagFeatures; ++c)
        x(s, m * kLagFeatures + c) = set.samples[s].features[m](zone, c);
  return x;
}

void LassoBaseline::fit(const SampleSet& train, const SampleSet& val,
                        const std::vector<double>& grid) {
  if (grid.empty()) throw ValidationError("LASSO lambda grid is empty");
  if (train.size() == 0 || val.size() == 0)
    throw ValidationError("LASSO needs non-empty training and validation splits");
  if (val.zones != train.zones || val.modes != train.modes)
    throw ValidationError("LASSO: validation zones/modes differ from training");
  zones_ = train.zones;
  modes_ = train.modes;
  const std::size_t v = train.n_zones(), modes = train.n_modes();
  std::vector<double> order = grid;
  std::sort(order.begin(), order.end(), std::greater<>());  // warm start from the sparsest
  fits_.assign(modes, std::vector<LassoFit>(v));
  lambda_.assign(modes, std::vector<double>(v, 0.0));
  std::size_t unconverged = 0;

#pragma omp parallel for schedule(dynamic) reduction(+ : unconverged)
  for (std::size_t z = 0; z < v; ++z) {
    const Matrix xt = zone_design(train, z), xv = zone_design(val, z);
    for (std::size_t m = 0; m < modes; ++m) {
      std::vector<double> yt(train.size());
      for (std::size_t s = 0; s < train.size(); ++s) yt[s] = train.samples[s].labels[m][z];
      double best = std::numeric_limits<double>::infinity();
      std::vector<double> warm;
      for (double lambda : order) {
        LassoFit f = lasso_fit_warm(xt, yt, lambda, 1e-7, 10000, warm);
        warm = f.weights;
        double sq = 0.0;
        for (std::size_t s = 0; s < val.size(); ++s) {
          const double d = std::max(lasso_eval(f, xv, s), 0.0) - val.samples[s].labels[m][z];
          sq += d * d;
        }
        if (sq < best) {
          best = sq;
          lambda_[m][z] = lambda;
          fits_[m][z] = std::move(f);
        }
      }
      if (!fits_[m][z].converged) ++unconverged;
    }
  }
  unconverged_ = unconverged;
}

std::vector<Matrix> LassoBaseline::predict(const SampleSet& set) const {
  if (fits_.empty()) throw UsageError("LassoBaseline::predict before fit");
  if (set.zones != zones_ || set.modes != modes_)
    throw ValidationError("LASSO: sample zones/modes differ from the fitted ones");
  std::vector<Matrix> out(set.n_modes(), Matrix(set.size(), set.n_zones()));
  for (std::size_t z = 0; z < set.n_zones(); ++z) {
    const Matrix x = zone_design(set, z);
    for (std::size_t m = 0; m < set.n_modes(); ++m)
      for (std::size_t s = 0; s < set.size(); ++s) out[m](s, z) = lasso_eval(fits_[m][z], x, s);
  }
  return out;
}

// --- MLP -----------------------------------------------------------------------

MlpNetwork::MlpNetwork(std::vector<std::string> zones, std::vector<std::string> modes,
                       MlpConfig cfg, std::uint64_t seed)
    : zones_(std::move(zones)), modes_(std::move(modes)), cfg_(std::move(cfg)) {
  if (zones_.empty() || modes_.empty()) throw ValidationError("MLP needs zones and modes");
  if (cfg_.widths.empty() || cfg_.widths.back() != 1)
    throw ValidationError("MLP widths must be non-empty and end with 1");
  for (std::size_t w : cfg_.widths)
    if (w == 0) throw ValidationError("MLP widths must be positive");
  const std::size_t in = kLagFeatures * modes_.size();
  for (std::size_t m = 0; m < modes_.size(); ++m)
    for (std::size_t l = 0; l < cfg_.widths.size(); ++l) {
      const std::size_t rows = l == 0 ? in : cfg_.widths[l - 1], cols = cfg_.widths[l];
      Param w;
      w.name = "mlp_l" + std::to_string(l) + "_w_" + std::to_string(m);
      w.value = init_uniform(rows, cols, 1.0, seed, {1000 + l, m});
      w.role = ParamRole::Intra;
      w.layer = l;
      w.source = w.target = m;
      params_.push_back(std::move(w));
      Param b;
      b.name = "mlp_l" + std::to_string(l) + "_b_" + std::to_string(m);
      b.value = Matrix(1, cols);
      b.role = ParamRole::Bias;
      b.layer = l;
      b.source = b.target = m;
      params_.push_back(std::move(b));
    }
}

std::size_t MlpNetwork::weight_index(std::size_t layer, std::size_t mode) const {
  return 2 * (mode * cfg_.widths.size() + layer);
}

std::size_t MlpNetwork::bias_index(std::size_t layer, std::size_t mode) const {
  return weight_index(layer, mode) + 1;
}

void MlpNetwork::set_output_scaling(const FeatureScaler& scaler) {
  if (scaler.mean.size() != modes_.size() || scaler.scale.size() != modes_.size())
    throw ValidationError("output scaling has the wrong number of modes");
  for (std::size_t m = 0; m < modes_.size(); ++m)
    if (scaler.mean[m].size() != zones_.size() || scaler.scale[m].size() != zones_.size())
      throw ValidationError("output scaling has the wrong number of zones");
  out_.mean = scaler.mean;
  out_.scale = scaler.scale;
}

void MlpNetwork::check_compatible(const SampleSet& set) const {
  if (set.zones != zones_) throw ValidationError("sample zone order does not match the MLP");
  if (set.modes != modes_) throw ValidationError("sample modes do not match the MLP");
}

std::vector<ad::Var> MlpNetwork::forward(ad::Tape& tape, std::span<const ad::Var> bound,
                                         std::span<const Matrix> inputs) const {
  if (bound.size() != params_.size()) throw UsageError("MlpNetwork::forward: parameter count");
  const std::size_t in = kLagFeatures * modes_.size();
  if (inputs.size() != 1 || inputs[0].cols() != in || inputs[0].rows() % zones_.size() != 0)
    throw ShapeError("MlpNetwork::forward: expected one (batch*zones) x " + std::to_string(in) +
                     " input");
  const ad::Var x = tape.constant(inputs[0]);
  std::vector<ad::Var> out;
  for (std::size_t m = 0; m < modes_.size(); ++m) {
    ad::Var h = x;
    for (std::size_t l = 0; l < cfg_.widths.size(); ++l) {
      h = ad::add_row(ad::matmul(h, bound[weight_index(l, m)]), bound[bias_index(l, m)]);
      if (l + 1 < cfg_.widths.size()) h = ad::relu(h);
    }
    if (cfg_.rescale_output) {
      if (out_.empty())
        throw UsageError("MlpNetwork: output rescaling requested but no scaling was set");
      h = zone_affine(h, out_.scale[m], out_.mean[m]);
    }
    out.push_back(h);
  }
  return out;
}

}  // namespace mgc
