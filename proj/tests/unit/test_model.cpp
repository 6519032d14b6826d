#include <doctest.h>

#include <cmath>
#include <random>

#include "mgc/errors.hpp"
#include "mgc/model.hpp"
#include "mgc/train.hpp"

using namespace mgc;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0,
                     double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (double& v : m.span()) v = u(rng);
  return m;
}

// Graph set whose "normalized" matrices are given directly.
std::shared_ptr<GraphSet> hand_graphs(std::size_t v, std::size_t modes, std::mt19937_64* rng) {
  auto g = std::make_shared<GraphSet>();
  for (std::size_t z = 0; z < v; ++z) g->zone_ids.push_back("z" + std::to_string(z));
  for (std::size_t m = 0; m < modes; ++m) g->modes.push_back("m" + std::to_string(m));
  auto make = [&] { return rng ? random_matrix(v, v, *rng, 0.0, 1.0) : Matrix::identity(v); };
  for (int r = 0; r < 3; ++r) {
    g->shared[r] = Matrix(v, v);
    g->shared_normalized[r] = make();
  }
  for (std::size_t m = 0; m < modes; ++m) {
    g->mobility.emplace_back(v, v);
    g->mobility_normalized.push_back(make());
  }
  return g;
}

NetworkConfig plain_config(std::vector<std::size_t> widths, std::size_t features) {
  NetworkConfig cfg;
  cfg.widths = std::move(widths);
  cfg.input_features = features;
  cfg.rescale_output = false;
  return cfg;
}

std::vector<Matrix> run(const Model& model, const std::vector<Matrix>& inputs) {
  ad::Tape tape;
  std::vector<ad::Var> bound;
  for (const Param& p : model.params()) bound.push_back(tape.constant(p.value));
  std::vector<Matrix> out;
  for (const ad::Var& v : model.forward(tape, bound, inputs)) out.push_back(v.value());
  return out;
}

// Applies a per-sample zone operator to a stacked (B*V) x f matrix.
Matrix apply_blocks(const Matrix& a, const Matrix& h) {
  const std::size_t v = a.rows(), b = h.rows() / v;
  Matrix out(h.rows(), h.cols());
  for (std::size_t s = 0; s < b; ++s)
    for (std::size_t i = 0; i < v; ++i)
      for (std::size_t j = 0; j < v; ++j)
        for (std::size_t c = 0; c < h.cols(); ++c)
          out(s * v + i, c) += a(i, j) * h(s * v + j, c);
  return out;
}

// Rows [r * f, (r + 1) * f) of w: the branch of graph r.
Matrix block_rows(const Matrix& w, std::size_t r, std::size_t f) {
  Matrix out(f, w.cols());
  for (std::size_t i = 0; i < f; ++i)
    for (std::size_t c = 0; c < w.cols(); ++c) out(i, c) = w(r * f + i, c);
  return out;
}

// Network forward written as the sum over graphs and source modes.
std::vector<Matrix> direct_sum_forward(MgcNetwork& net, std::vector<Matrix> h) {
  const std::size_t modes = net.n_modes();
  for (std::size_t l = 0; l < net.n_layers(); ++l) {
    const std::size_t f = h[0].cols();
    std::vector<Matrix> next;
    for (std::size_t m = 0; m < modes; ++m) {
      Matrix acc(h[0].rows(), net.config().widths[l]);
      for (std::size_t k = 0; k < modes; ++k) {
        if (!net.weight_index(l, k, m)) continue;
        const auto graphs = net.graphs().normalized_for(k);
        const Matrix& w = net.weight(l, k, m);
        for (std::size_t r = 0; r < 4; ++r)
          acc += matmul(apply_blocks(*graphs[r], h[k]), block_rows(w, r, f));
      }
      const Matrix& b = net.bias(l, m);
      for (std::size_t i = 0; i < acc.rows(); ++i)
        for (std::size_t c = 0; c < acc.cols(); ++c) {
          acc(i, c) += b(0, c);
          if (l + 1 < net.n_layers()) acc(i, c) = std::max(acc(i, c), 0.0);
        }
      next.push_back(std::move(acc));
    }
    h = std::move(next);
  }
  return h;
}

}  // namespace

TEST_CASE("variant names and layer tags") {
  CHECK(parse_variant("mlr") == Variant::MLR);
  CHECK(parse_variant("MIX-MGC") == Variant::MIX);
  CHECK_THROWS_AS(parse_variant("GCN"), ValidationError);
  CHECK(layer_sharing(Variant::MGC, 4) == std::vector<Sharing>(4, Sharing::None));
  CHECK(layer_sharing(Variant::RCT, 4) == std::vector<Sharing>(4, Sharing::Rct));
  CHECK(layer_sharing(Variant::MIX, 4) ==
        std::vector<Sharing>{Sharing::Rct, Sharing::Rct, Sharing::Mlr, Sharing::Mlr});
}

TEST_CASE("parameter layout per variant") {
  auto g = hand_graphs(3, 2, nullptr);
  const NetworkConfig cfg = plain_config({5, 6, 1}, 4);
  MgcNetwork mgc(g, Variant::MGC, cfg, 1), rct(g, Variant::RCT, cfg, 1), mix(g, Variant::MIX, cfg, 1);
  // weights + biases per layer
  CHECK(mgc.params().size() == 3 * (2 + 2));
  CHECK(rct.params().size() == 3 * (4 + 2));
  CHECK(mix.params().size() == (4 + 2) + 2 * (2 + 2));
  CHECK(mgc.weight(0, 1, 1).rows() == 16);
  CHECK(mgc.weight(1, 0, 0).rows() == 20);
  CHECK(mgc.weight(2, 0, 0).cols() == 1);
  CHECK_FALSE(mgc.weight_index(0, 0, 1).has_value());
  CHECK(rct.find_param("l1_w_0_1").has_value());
  CHECK(mgc.bias(1, 0) == Matrix(1, 6));

  // Inter weights start at a tenth of the intra scale.
  const double intra_limit = std::sqrt(6.0 / (16 + 5));
  double inter_max = 0.0;
  for (double x : rct.weight(0, 0, 1).span()) inter_max = std::max(inter_max, std::abs(x));
  CHECK(inter_max <= 0.1 * intra_limit);
  CHECK(inter_max > 0.05 * intra_limit);

  CHECK_THROWS_AS(MgcNetwork(g, Variant::MGC, plain_config({4, 2}, 4), 1), ValidationError);
}

TEST_CASE("identity graphs and weights give four times the input") {
  auto g = hand_graphs(2, 1, nullptr);
  MgcNetwork net(g, Variant::MGC, plain_config({1}, 1), 0);
  net.weight(0, 0, 0) = Matrix(4, 1, 1.0);
  const Matrix h{{1.5}, {-2.0}, {0.25}, {7.0}};  // two samples of two zones
  const auto out = run(net, {h});
  CHECK(out[0] == 4.0 * h);
}

TEST_CASE("zero input yields the bias") {
  std::mt19937_64 rng(1);
  auto g = hand_graphs(3, 1, &rng);
  MgcNetwork net(g, Variant::MGC, plain_config({1}, 2), 0);
  net.bias(0, 0) = Matrix{{0.7}};
  const auto out = run(net, {Matrix(6, 2)});
  CHECK(out[0] == Matrix(6, 1, 0.7));

  // A hidden layer with negative bias is clamped by the ReLU.
  MgcNetwork deep(g, Variant::MGC, plain_config({2, 1}, 2), 0);
  deep.bias(0, 0) = Matrix{{-1.0, 0.5}};
  deep.bias(1, 0) = Matrix{{0.25}};
  const Matrix& w = deep.weight(1, 0, 0);
  const auto deep_out = run(deep, {Matrix(3, 2)});
  for (std::size_t z = 0; z < 3; ++z) {
    double expect = 0.25;
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t j = 0; j < 3; ++j) expect += (*g->normalized_for(0)[r])(z, j) * 0.5 * w(r * 2 + 1, 0);
    CHECK(deep_out[0](z, 0) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("concatenated form equals the sum over graphs") {
  for (Variant variant : {Variant::MGC, Variant::RCT, Variant::MIX}) {
    std::mt19937_64 rng(42);
    auto g = hand_graphs(3, 2, &rng);
    MgcNetwork net(g, variant, plain_config({4, 3, 1}, 2), 9);
    for (Param& p : net.params())
      if (p.role == ParamRole::Bias) p.value = random_matrix(1, p.value.cols(), rng);
    const std::vector<Matrix> inputs = {random_matrix(6, 2, rng), random_matrix(6, 2, rng)};
    const auto got = run(net, inputs);
    const auto want = direct_sum_forward(net, inputs);
    for (std::size_t m = 0; m < 2; ++m) CHECK(max_abs_diff(got[m], want[m]) < 1e-12);
  }
}

TEST_CASE("two-mode cross-task layer expands by hand") {
  std::mt19937_64 rng(7);
  auto g = hand_graphs(2, 2, &rng);
  MgcNetwork net(g, Variant::RCT, plain_config({1}, 1), 3);
  const std::vector<Matrix> h = {Matrix{{1.0}, {2.0}}, Matrix{{-3.0}, {0.5}}};
  net.bias(0, 0) = Matrix{{0.1}};
  net.bias(0, 1) = Matrix{{-0.2}};
  const auto out = run(net, h);
  for (std::size_t m = 0; m < 2; ++m)
    for (std::size_t z = 0; z < 2; ++z) {
      double expect = net.bias(0, m)(0, 0);
      for (std::size_t k = 0; k < 2; ++k) {
        const auto a = g->normalized_for(k);  // source mode's mobility graph
        const Matrix& w = net.weight(0, k, m);
        for (std::size_t r = 0; r < 4; ++r)
          expect += w(r, 0) * ((*a[r])(z, 0) * h[k](0, 0) + (*a[r])(z, 1) * h[k](1, 0));
      }
      CHECK(out[m](z, 0) == doctest::Approx(expect).epsilon(1e-13));
    }
}

TEST_CASE("zeroed inter weights decouple the modes exactly") {
  std::mt19937_64 rng(3);
  auto g = hand_graphs(4, 2, &rng);
  const NetworkConfig cfg = plain_config({5, 3, 1}, 4);
  MgcNetwork mgc(g, Variant::MGC, cfg, 11), rct(g, Variant::RCT, cfg, 11);
  for (std::size_t l = 0; l < 3; ++l)
    for (std::size_t m = 0; m < 2; ++m) {
      CHECK(rct.weight(l, m, m) == mgc.weight(l, m, m));  // identical intra init
      rct.weight(l, m, 1 - m).fill(0.0);
    }
  const std::vector<Matrix> inputs = {random_matrix(8, 4, rng), random_matrix(8, 4, rng)};
  const auto a = run(mgc, inputs), b = run(rct, inputs);
  CHECK(a[0] == b[0]);
  CHECK(a[1] == b[1]);

  // With one mode, the cross-task network is the single-task one.
  auto g1 = hand_graphs(4, 1, &rng);
  MgcNetwork one(g1, Variant::MGC, cfg, 5), one_rct(g1, Variant::RCT, cfg, 5);
  CHECK(one.params().size() == one_rct.params().size());
  CHECK(run(one, {inputs[0]})[0] == run(one_rct, {inputs[0]})[0]);
}

TEST_CASE("batch rows are independent") {
  std::mt19937_64 rng(12);
  auto g = hand_graphs(3, 2, &rng);
  MgcNetwork net(g, Variant::MIX, plain_config({6, 4, 1}, 4), 2);
  const std::vector<Matrix> batch = {random_matrix(12, 4, rng), random_matrix(12, 4, rng)};
  const auto full = run(net, batch);
  for (std::size_t s = 0; s < 4; ++s) {
    std::vector<Matrix> single(2, Matrix(3, 4));
    for (std::size_t m = 0; m < 2; ++m)
      for (std::size_t z = 0; z < 3; ++z)
        for (std::size_t c = 0; c < 4; ++c) single[m](z, c) = batch[m](s * 3 + z, c);
    const auto one = run(net, single);
    for (std::size_t m = 0; m < 2; ++m)
      for (std::size_t z = 0; z < 3; ++z)
        CHECK(std::abs(one[m](z, 0) - full[m](s * 3 + z, 0)) < 1e-12);
  }
}

TEST_CASE("predictions permute with the zones") {
  std::mt19937_64 rng(21);
  const std::size_t v = 5;
  auto g = hand_graphs(v, 2, &rng);
  const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};  // new zone i is old zone perm[i]
  auto permute = [&](const Matrix& a) {
    Matrix out(v, v);
    for (std::size_t i = 0; i < v; ++i)
      for (std::size_t j = 0; j < v; ++j) out(i, j) = a(perm[i], perm[j]);
    return out;
  };
  auto gp = std::make_shared<GraphSet>(*g);
  for (auto& a : gp->shared_normalized) a = permute(a);
  for (auto& a : gp->mobility_normalized) a = permute(a);

  for (Variant variant : {Variant::MGC, Variant::RCT, Variant::MLR, Variant::MIX}) {
    const NetworkConfig cfg = plain_config({6, 4, 1}, 4);
    MgcNetwork net(g, variant, cfg, 8), netp(gp, variant, cfg, 8);
    const std::vector<Matrix> x = {random_matrix(2 * v, 4, rng), random_matrix(2 * v, 4, rng)};
    std::vector<Matrix> xp(2, Matrix(2 * v, 4));
    for (std::size_t m = 0; m < 2; ++m)
      for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t i = 0; i < v; ++i)
          for (std::size_t c = 0; c < 4; ++c) xp[m](s * v + i, c) = x[m](s * v + perm[i], c);
    const auto y = run(net, x), yp = run(netp, xp);
    for (std::size_t m = 0; m < 2; ++m)
      for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t i = 0; i < v; ++i)
          CHECK(std::abs(yp[m](s * v + i, 0) - y[m](s * v + perm[i], 0)) < 1e-9);
  }
}

TEST_CASE("zero final layer predicts the bias, rescaled when requested") {
  std::mt19937_64 rng(30);
  auto g = hand_graphs(3, 2, &rng);
  NetworkConfig cfg = plain_config({4, 1}, 4);
  MgcNetwork net(g, Variant::MLR, cfg, 1);
  for (std::size_t m = 0; m < 2; ++m) {
    net.weight(1, m, m).fill(0.0);
    net.bias(1, m) = Matrix{{0.5 + m}};
  }
  const std::vector<Matrix> x = {random_matrix(3, 4, rng), random_matrix(3, 4, rng)};
  auto out = run(net, x);
  CHECK(out[0] == Matrix(3, 1, 0.5));
  CHECK(out[1] == Matrix(3, 1, 1.5));

  cfg.rescale_output = true;
  MgcNetwork scaled(g, Variant::MLR, cfg, 1);
  for (std::size_t m = 0; m < 2; ++m) {
    scaled.weight(1, m, m).fill(0.0);
    scaled.bias(1, m) = Matrix{{0.5 + m}};
  }
  CHECK_THROWS_AS(run(scaled, x), UsageError);
  FeatureScaler sc;
  sc.mean = {{10, 20, 30}, {1, 2, 3}};
  sc.scale = {{2, 4, 1}, {1, 1, 0.5}};
  scaled.set_output_scaling(sc);
  out = run(scaled, x);
  for (std::size_t m = 0; m < 2; ++m)
    for (std::size_t z = 0; z < 3; ++z)
      CHECK(out[m](z, 0) == doctest::Approx(sc.mean[m][z] + sc.scale[m][z] * (0.5 + m)).epsilon(1e-15));
  sc.mean[0].pop_back();
  CHECK_THROWS_AS(scaled.set_output_scaling(sc), ValidationError);
}

TEST_CASE("input shape and zone order are checked") {
  auto g = hand_graphs(3, 2, nullptr);
  MgcNetwork net(g, Variant::MGC, plain_config({1}, 4), 1);
  CHECK_THROWS_AS(run(net, {Matrix(3, 4)}), ShapeError);
  CHECK_THROWS_AS(run(net, {Matrix(4, 4), Matrix(4, 4)}), ShapeError);
  CHECK_THROWS_AS(run(net, {Matrix(3, 3), Matrix(3, 3)}), ShapeError);
  SampleSet set;
  set.zones = {"z1", "z0", "z2"};
  set.modes = g->modes;
  CHECK_THROWS_AS(net.check_compatible(set), ValidationError);
  set.zones = g->zone_ids;
  set.modes = {"m1", "m0"};
  CHECK_THROWS_AS(predict(net, set), ValidationError);
}

TEST_CASE("initialization is seeded and tag dependent") {
  const Matrix a = init_uniform(8, 5, 1.0, 99, {0, 1, 1});
  CHECK(a == init_uniform(8, 5, 1.0, 99, {0, 1, 1}));
  CHECK_FALSE(a == init_uniform(8, 5, 1.0, 99, {0, 0, 0}));
  CHECK_FALSE(a == init_uniform(8, 5, 1.0, 98, {0, 1, 1}));
  const double limit = std::sqrt(6.0 / 13.0);
  for (double x : a.span()) CHECK(std::abs(x) <= limit);
}

TEST_CASE("a short training run beats the zero predictor") {
  SynthConfig sc;
  sc.n_zones = 4;
  sc.n_hours = 600;
  const SynthData data = synthesize(sc, 17);
  const SplitSpec split = fractional_split(data.demand);
  const Splits sets = make_samples(data.demand, split);
  auto graphs = std::make_shared<GraphSet>(build_graph_set(
      data.zones, data.demand, static_cast<std::size_t>(split.train.end - data.demand.start_hour())));
  auto net = std::make_unique<MgcNetwork>(graphs, Variant::MGC, NetworkConfig{}, 17);
  net->set_output_scaling(sets.train.scaler);

  TrainConfig tc;
  tc.max_steps = 200;
  tc.max_epochs = 1000;
  tc.patience = 1000;
  tc.seed = 17;
  const TrainRun run = fit(std::move(net), sets.train, sets.val, tc);
  CHECK(run.steps.size() == 200);

  const auto preds = predict(*run.model, sets.train);
  double model_loss = 0.0, zero_loss = 0.0;
  for (std::size_t s = 0; s < sets.train.size(); ++s)
    for (std::size_t m = 0; m < 2; ++m)
      for (std::size_t z = 0; z < 4; ++z) {
        const double y = sets.train.samples[s].labels[m][z];
        model_loss += (preds[m](s, z) - y) * (preds[m](s, z) - y);
        zero_loss += y * y;
      }
  CHECK(model_loss < zero_loss);
}
