#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "gradcheck.hpp"
#include "mgc/errors.hpp"
#include "mgc/linalg.hpp"
#include "mgc/mtl.hpp"

using namespace mgc;
using mtl::LogDetSign;
using mtl::MlrLayerState;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (double& v : m.span()) v = n(rng);
  return m;
}

Tensor3 random_tensor(std::size_t a, std::size_t b, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor3 t(a, b, c);
  for (double& v : t.vec()) v = n(rng);
  return t;
}

Matrix random_spd(std::size_t n, std::mt19937_64& rng) {
  const Matrix a = random_matrix(n, n, rng);
  Matrix s = matmul(a, a.transposed());
  for (std::size_t i = 0; i < n; ++i) s(i, i) += 0.5;
  return s;
}

Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      for (std::size_t k = 0; k < b.rows(); ++k)
        for (std::size_t l = 0; l < b.cols(); ++l)
          out(i * b.rows() + k, j * b.cols() + l) = a(i, j) * b(k, l);
  return out;
}

// Explicit vec(W)^T K^{-1} vec(W) with K the full Kronecker covariance. The
// flat tensor order (last index fastest) matches kron(S_I, kron(S_O, S_M)).
double kron_quadratic(const Tensor3& w, const Matrix& si, const Matrix& so, const Matrix& sm) {
  const Matrix k = kron(si, kron(so, sm));
  const Matrix v(w.size(), 1, w.vec());
  const Matrix x = linalg::solve(k, v);
  double q = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) q += v(i, 0) * x(i, 0);
  return q;
}

MlrLayerState free_state(const Tensor3& w, std::size_t layer = 0) {
  return MlrLayerState(w.d1(), w.d2(), w.d3(), layer, false, false);
}

}  // namespace

TEST_CASE("j1 weighs intra and inter norms") {
  const Matrix intra(2, 2, 1.0);                     // ||.||^2 = 4
  const Matrix inter{{1.0, 0.0}, {0.0, 0.0}};        // ||.||^2 = 1
  const Matrix zero(2, 2);
  std::vector<std::vector<const Matrix*>> w = {{&intra, &inter}, {&inter, &intra}};
  CHECK(mtl::j1(w, 0.1) == doctest::Approx(2.8).epsilon(1e-12));
  CHECK(mtl::j1(w, 1.0) == doctest::Approx(10.0).epsilon(1e-12));

  std::vector<std::vector<const Matrix*>> zeros = {{&zero, &zero}, {&zero, &zero}};
  CHECK(mtl::j1(zeros, 0.1) == 0.0);

  ad::Tape tape;
  std::vector<std::vector<ad::Var>> vars(2, std::vector<ad::Var>(2));
  for (int k = 0; k < 2; ++k)
    for (int m = 0; m < 2; ++m) vars[k][m] = tape.leaf(*w[k][m]);
  CHECK(mtl::j1(vars, 0.1).value()(0, 0) == doctest::Approx(2.8).epsilon(1e-12));
}

TEST_CASE("j1 skips absent inter weights") {
  const Matrix intra(1, 3, 2.0);  // 12
  std::vector<std::vector<const Matrix*>> w = {{&intra, nullptr}, {nullptr, &intra}};
  CHECK(mtl::j1(w, 0.5) == doctest::Approx(12.0));
}

TEST_CASE("j2 with identity factors is the squared Frobenius norm") {
  std::mt19937_64 rng(3);
  const Tensor3 w = random_tensor(3, 4, 2, rng);
  MlrLayerState s(3, 4, 2, 0, true, true);
  CHECK(mtl::j2(w, s) == doctest::Approx(inner(w, w)).epsilon(1e-14));
  CHECK(mtl::j2_log_det(s) == 0.0);
}

TEST_CASE("j2 scalar example under both log-det conventions") {
  const Tensor3 w(1, 1, 1, std::vector<double>{2.0});
  MlrLayerState s(1, 1, 1, 0, false, true);
  s.set_sigma(mtl::kInput, Matrix{{2.0}});
  CHECK(mtl::j2_quadratic(w, s) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(mtl::j2(w, s, LogDetSign::AsPrinted) == doctest::Approx(2.0 - std::log(2.0)).epsilon(1e-14));
  CHECK(mtl::j2(w, s, LogDetSign::Prior) == doctest::Approx(2.0 + std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("j2 mode products agree with the explicit Kronecker form") {
  std::mt19937_64 rng(2024);
  for (std::size_t d1 : {2u, 3u}) {
    for (int trial = 0; trial < 20; ++trial) {
      const Tensor3 w = random_tensor(d1, 2, 2, rng);
      MlrLayerState s = free_state(w);
      const Matrix si = random_spd(d1, rng), so = random_spd(2, rng), sm = random_spd(2, rng);
      s.set_sigma(mtl::kInput, si);
      s.set_sigma(mtl::kOutput, so);
      s.set_sigma(mtl::kMode, sm);
      const double oracle = kron_quadratic(w, si, so, sm);
      CHECK(std::abs(mtl::j2_quadratic(w, s) - oracle) <= 1e-10 * std::max(1.0, std::abs(oracle)));
    }
  }
}

TEST_CASE("j2 gradient matches finite differences") {
  std::mt19937_64 rng(11);
  const std::size_t fi = 3, fo = 2, modes = 2;
  MlrLayerState s(fi, fo, modes, 0, false, false);
  s.set_sigma(mtl::kInput, random_spd(fi, rng));
  s.set_sigma(mtl::kOutput, random_spd(fo, rng));
  s.set_sigma(mtl::kMode, random_spd(modes, rng));
  std::vector<Matrix> params = {random_matrix(fi, fo, rng), random_matrix(fi, fo, rng)};
  const auto build = [&](ad::Tape&, const std::vector<ad::Var>& leaves) {
    return mtl::j2(std::span<const ad::Var>(leaves), s);
  };
  const auto res = testing::grad_check(build, params);
  CHECK(res.checked == 12);
  CHECK(res.max_rel_error < 1e-6);

  // The closed-form gradient agrees with the tape.
  const Tensor3 w = mtl::stack_weights(std::span<const Matrix>(params));
  const Tensor3 g = mtl::j2_grad(w, s);
  ad::Tape tape;
  std::vector<ad::Var> leaves = {tape.leaf(params[0]), tape.leaf(params[1])};
  tape.backward(mtl::j2(std::span<const ad::Var>(leaves), s));
  for (std::size_t m = 0; m < modes; ++m) CHECK(max_abs_diff(leaves[m].grad(), g.slice3(m)) < 1e-12);
}

TEST_CASE("j1 and j2 do not depend on mode storage order") {
  std::mt19937_64 rng(5);
  const std::size_t modes = 3;
  std::vector<Matrix> w;
  for (std::size_t m = 0; m < modes; ++m) w.push_back(random_matrix(2, 3, rng));
  const Matrix sm = random_spd(modes, rng);
  const std::vector<std::size_t> perm = {2, 0, 1};

  std::vector<Matrix> wp;
  Matrix smp(modes, modes);
  for (std::size_t a = 0; a < modes; ++a) {
    wp.push_back(w[perm[a]]);
    for (std::size_t b = 0; b < modes; ++b) smp(a, b) = sm(perm[a], perm[b]);
  }
  MlrLayerState s(2, 3, modes, 0, true, true), sp(2, 3, modes, 0, true, true);
  s.set_sigma(mtl::kMode, sm);
  sp.set_sigma(mtl::kMode, smp);
  const double a = mtl::j2(mtl::stack_weights(std::span<const Matrix>(w)), s);
  const double b = mtl::j2(mtl::stack_weights(std::span<const Matrix>(wp)), sp);
  CHECK(std::abs(a - b) <= 1e-10 * std::abs(a));

  // j1 over a full M x M grid with permuted source/target indices.
  std::vector<Matrix> grid;
  for (std::size_t i = 0; i < modes * modes; ++i) grid.push_back(random_matrix(2, 2, rng));
  std::vector<std::vector<const Matrix*>> g(modes, std::vector<const Matrix*>(modes));
  std::vector<std::vector<const Matrix*>> gp(modes, std::vector<const Matrix*>(modes));
  for (std::size_t k = 0; k < modes; ++k)
    for (std::size_t m = 0; m < modes; ++m) {
      g[k][m] = &grid[k * modes + m];
      gp[k][m] = &grid[perm[k] * modes + perm[m]];
    }
  CHECK(mtl::j1(g, 0.1) == doctest::Approx(mtl::j1(gp, 0.1)).epsilon(1e-14));
}

TEST_CASE("layer state guards") {
  MlrLayerState s(2, 2, 2, 2, true, false);
  CHECK_THROWS_AS(s.set_sigma(mtl::kInput, Matrix::identity(2)), UsageError);
  try {
    s.set_sigma(mtl::kMode, Matrix{{1.0, 2.0}, {2.0, 1.0}});
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("layer 3") != std::string::npos);
  }
  CHECK_THROWS_AS(s.set_sigma(mtl::kMode, Matrix::identity(3)), ShapeError);
  CHECK(s.is_identity(mtl::kMode));

  Tensor3 w(2, 2, 2, 1.0);
  w(0, 0, 0) = std::nan("");
  CHECK_THROWS_AS(mtl::flip_flop(w, s, {}), NumericError);
  CHECK_THROWS_AS(mtl::j2(Tensor3(3, 2, 2), s), ShapeError);
}

TEST_CASE("flip-flop on zero weights gives identity factors") {
  const Tensor3 w(3, 2, 2);
  MlrLayerState s = free_state(w);
  mtl::MlrOptions opt;
  opt.fix_input = opt.fix_output = false;
  const auto rep = mtl::flip_flop(w, s, opt);
  CHECK(rep.converged);
  CHECK(max_abs_diff(s.sigma(mtl::kMode), Matrix::identity(2)) < 1e-12);
  // Ridge-only statistic: each free factor is a multiple of the identity.
  for (int f : {mtl::kInput, mtl::kOutput}) {
    const Matrix& sf = s.sigma(f);
    for (std::size_t i = 0; i < sf.rows(); ++i)
      for (std::size_t j = 0; j < sf.cols(); ++j)
        if (i != j) CHECK(sf(i, j) == 0.0);
  }
}

TEST_CASE("flip-flop recovers rank-one mode structure for proportional weights") {
  std::mt19937_64 rng(8);
  for (double c : {0.5, 2.0, 3.0}) {
    const Matrix w1 = random_matrix(6, 4, rng);
    const Matrix w2 = c * w1;
    const std::vector<Matrix> ws = {w1, w2};
    const Tensor3 w = mtl::stack_weights(std::span<const Matrix>(ws));
    MlrLayerState s(6, 4, 2, 0, true, true);
    mtl::MlrOptions opt;
    opt.ridge_rel = 1e-4;
    mtl::flip_flop(w, s, opt);
    const Matrix& sm = s.sigma(mtl::kMode);
    CHECK(linalg::trace(sm) == doctest::Approx(2.0).epsilon(1e-12));
    // Proportional to [[1, c], [c, c^2]]: diagonal ratio c^2, correlation 1.
    CHECK(sm(1, 1) / sm(0, 0) == doctest::Approx(c * c).epsilon(0.05));
    const double corr = sm(0, 1) / std::sqrt(sm(0, 0) * sm(1, 1));
    CHECK(corr == doctest::Approx(c / std::sqrt(c * c)).epsilon(0.05));
  }
}

// Each unridged update is the exact minimizer over one factor; the relative
// ridge shifts that minimizer slightly, so the check uses only the floor.
TEST_CASE("flip-flop never increases the negative log prior") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(seed);
    // Correlated structure so the factors have something to learn.
    Tensor3 w = random_tensor(4, 3, 3, rng);
    const Matrix mix = random_spd(3, rng);
    w = mode_product(w, mix, 3);
    MlrLayerState s = free_state(w);
    mtl::MlrOptions opt;
    opt.fix_input = opt.fix_output = false;
    opt.ridge_rel = 0.0;
    const double start = mtl::j2(w, s);
    const auto rep = mtl::flip_flop(w, s, opt);
    REQUIRE(!rep.j2_after_sweep.empty());
    CHECK(rep.j2_after_sweep.front() <= start + 1e-9 * std::abs(start));
    for (std::size_t i = 1; i < rep.j2_after_sweep.size(); ++i) {
      const double prev = rep.j2_after_sweep[i - 1];
      CHECK(rep.j2_after_sweep[i] <= prev + 1e-9 * std::abs(prev));
    }
    for (int f = 0; f < 3; ++f) {
      const Matrix& sf = s.sigma(f);
      CHECK(max_abs_diff(sf, sf.transposed()) <= 1e-10);
      CHECK(linalg::cholesky(sf).has_value());
    }
    CHECK(linalg::trace(s.sigma(mtl::kMode)) == doctest::Approx(3.0).epsilon(1e-12));
  }
}

TEST_CASE("fixed factors stay exactly identity through flip-flop") {
  std::mt19937_64 rng(4);
  const Tensor3 w = random_tensor(3, 3, 2, rng);
  MlrLayerState s(3, 3, 2, 0, true, true);
  mtl::flip_flop(w, s, {});
  CHECK(s.sigma(mtl::kInput) == Matrix::identity(3));
  CHECK(s.sigma(mtl::kOutput) == Matrix::identity(3));
}
