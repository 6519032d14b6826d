// Times the parallel kernels against the serial reference loops and reports
// the largest elementwise difference between them.
//
//   bench_kernels [repeats]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <random>
#include <string>

#include "mgc/kernels.hpp"

using mgc::Matrix;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (double& v : m.span()) v = n(rng);
  return m;
}

double max_diff(const Matrix& a, const Matrix& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a.span()[i] - b.span()[i]));
  return d;
}

double time_ms(int repeats, const std::function<void()>& f) {
  f();  // warm-up
  double best = 1e300;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

void report(const std::string& name, int repeats, Matrix& out_par, Matrix& out_ref,
            const std::function<void(Matrix&)>& par, const std::function<void(Matrix&)>& ref) {
  const double tp = time_ms(repeats, [&] { par(out_par); });
  const double tr = time_ms(repeats, [&] { ref(out_ref); });
  std::printf("%-34s %10.3f %10.3f %8.2fx %12.3e\n", name.c_str(), tr, tp, tr / tp,
              max_diff(out_par, out_ref));
}

}  // namespace

int main(int argc, char** argv) {
  const int repeats = argc > 1 ? std::max(1, std::atoi(argv[1])) : 5;
  std::mt19937_64 rng(42);
  std::printf("threads: %d, best of %d runs\n", mgc::kernels::thread_count(), repeats);
  std::printf("%-34s %10s %10s %9s %12s\n", "kernel", "serial ms", "omp ms", "speedup", "max |diff|");

  // Shapes from a training step: batch 64 x 63 zones, widths up to 64.
  const std::size_t rows = 64 * 63;
  const Matrix h = random_matrix(rows, 64, rng);
  const Matrix w = random_matrix(64, 32, rng);
  const Matrix g = random_matrix(rows, 32, rng);
  Matrix a(rows, 32), b(rows, 32);
  report("gemm_nn 4032x64 * 64x32", repeats, a, b,
         [&](Matrix& o) { mgc::kernels::gemm_nn(h, w, o); },
         [&](Matrix& o) { mgc::reference::gemm_nn(h, w, o); });
  Matrix c(64, 32), d(64, 32);
  report("gemm_tn (4032x64)^T * 4032x32", repeats, c, d,
         [&](Matrix& o) { mgc::kernels::gemm_tn(h, g, o); },
         [&](Matrix& o) { mgc::reference::gemm_tn(h, g, o); });
  Matrix e(rows, 64), f(rows, 64);
  report("gemm_nt 4032x32 * (64x32)^T", repeats, e, f,
         [&](Matrix& o) { mgc::kernels::gemm_nt(g, w, o); },
         [&](Matrix& o) { mgc::reference::gemm_nt(g, w, o); });

  const Matrix adj = random_matrix(63, 63, rng);
  Matrix p(rows, 64), q(rows, 64);
  report("block_apply 63x63 on 64 blocks", repeats, p, q,
         [&](Matrix& o) { mgc::kernels::block_apply(adj, h, o); },
         [&](Matrix& o) { mgc::reference::block_apply(adj, h, o); });
  report("block_apply transposed", repeats, p, q,
         [&](Matrix& o) { mgc::kernels::block_apply(adj, h, o, true); },
         [&](Matrix& o) { mgc::reference::block_apply(adj, h, o, true); });
  return 0;
}
