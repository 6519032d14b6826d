#include "mgc/kernels.hpp"

#include <algorithm>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "mgc/errors.hpp"

namespace mgc::kernels {
namespace {

// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelWork = 1 << 15;

void prepare(Matrix& out, std::size_t rows, std::size_t cols, bool accumulate) {
  if (accumulate) {
    if (out.rows() != rows || out.cols() != cols)
      throw ShapeError("accumulating kernel: output is " + shape_string(out) + ", expected " +
                       std::to_string(rows) + "x" + std::to_string(cols));
  } else if (out.rows() != rows || out.cols() != cols) {
    out = Matrix(rows, cols);
  } else {
    out.fill(0.0);
  }
}

// Four output rows at a time share each streamed row of b. Per output element
// the k-summation order is ascending, matching the reference kernel.
inline void row_tile(const double* const* arows, std::size_t astride, std::size_t nrows,
                     const Matrix& b, double* const* orows) {
  const std::size_t kdim = b.rows();
  const std::size_t n = b.cols();
  for (std::size_t k = 0; k < kdim; ++k) {
    const double* __restrict brow = b.data() + k * n;
    if (nrows == 4) {
      const double a0 = arows[0][k * astride], a1 = arows[1][k * astride];
      const double a2 = arows[2][k * astride], a3 = arows[3][k * astride];
      if (a0 == 0.0 && a1 == 0.0 && a2 == 0.0 && a3 == 0.0) continue;
      double* __restrict o0 = orows[0];
      double* __restrict o1 = orows[1];
      double* __restrict o2 = orows[2];
      double* __restrict o3 = orows[3];
      for (std::size_t j = 0; j < n; ++j) {
        const double bv = brow[j];
        o0[j] += a0 * bv;
        o1[j] += a1 * bv;
        o2[j] += a2 * bv;
        o3[j] += a3 * bv;
      }
    } else {
      for (std::size_t r = 0; r < nrows; ++r) {
        const double av = arows[r][k * astride];
        if (av == 0.0) continue;
        double* __restrict o = orows[r];
        for (std::size_t j = 0; j < n; ++j) o[j] += av * brow[j];
      }
    }
  }
}

}  // namespace

int thread_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void gemm_nn(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate) {
  require_shape(a.cols() == b.rows(), "gemm_nn", a, b);
  const std::size_t m = a.rows();
  prepare(out, m, b.cols(), accumulate);
  const std::size_t tiles = (m + 3) / 4;
  const bool par = m * a.cols() * b.cols() >= kParallelWork;
  const long long ntiles = static_cast<long long>(tiles);
#pragma omp parallel for schedule(static) if (par)
  for (long long t = 0; t < ntiles; ++t) {
    const std::size_t r0 = static_cast<std::size_t>(t) * 4;
    const std::size_t nr = std::min<std::size_t>(4, m - r0);
    const double* arows[4];
    double* orows[4];
    for (std::size_t r = 0; r < nr; ++r) {
      arows[r] = a.data() + (r0 + r) * a.cols();
      orows[r] = out.data() + (r0 + r) * out.cols();
    }
    row_tile(arows, 1, nr, b, orows);
  }
}

void gemm_tn(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate) {
  require_shape(a.rows() == b.rows(), "gemm_tn", a, b);
  const std::size_t m = a.cols();
  prepare(out, m, b.cols(), accumulate);
  const std::size_t tiles = (m + 3) / 4;
  const bool par = m * a.rows() * b.cols() >= kParallelWork;
  const long long ntiles = static_cast<long long>(tiles);
#pragma omp parallel for schedule(static) if (par)
  for (long long t = 0; t < ntiles; ++t) {
    const std::size_t r0 = static_cast<std::size_t>(t) * 4;
    const std::size_t nr = std::min<std::size_t>(4, m - r0);
    const double* arows[4];
    double* orows[4];
    for (std::size_t r = 0; r < nr; ++r) {
      // Column r0 + r of a, walked with stride a.cols().
      arows[r] = a.data() + (r0 + r);
      orows[r] = out.data() + (r0 + r) * out.cols();
    }
    row_tile(arows, a.cols(), nr, b, orows);
  }
}

void gemm_nt(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate) {
  require_shape(a.cols() == b.cols(), "gemm_nt", a, b);
  gemm_nn(a, b.transposed(), out, accumulate);
}

void block_apply(const Matrix& adj, const Matrix& h, Matrix& out, bool transpose,
                 bool accumulate) {
  const std::size_t n = adj.rows();
  if (adj.cols() != n || n == 0 || h.rows() % n != 0)
    throw ShapeError("block_apply: adjacency " + shape_string(adj) + " vs features " +
                     shape_string(h));
  prepare(out, h.rows(), h.cols(), accumulate);
  const std::size_t blocks = h.rows() / n;
  const std::size_t f = h.cols();
  const long long total = static_cast<long long>(blocks * n);
  const bool par = blocks * n * n * f >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (long long bi = 0; bi < total; ++bi) {
    const std::size_t blk = static_cast<std::size_t>(bi) / n;
    const std::size_t i = static_cast<std::size_t>(bi) % n;
    double* __restrict o = out.data() + (blk * n + i) * f;
    for (std::size_t j = 0; j < n; ++j) {
      const double w = transpose ? adj(j, i) : adj(i, j);
      if (w == 0.0) continue;
      const double* __restrict hr = h.data() + (blk * n + j) * f;
      for (std::size_t c = 0; c < f; ++c) o[c] += w * hr[c];
    }
  }
}

}  // namespace mgc::kernels

namespace mgc::reference {
namespace {

void prepare(Matrix& out, std::size_t rows, std::size_t cols, bool accumulate) {
  if (!accumulate) out = Matrix(rows, cols);
  else if (out.rows() != rows || out.cols() != cols)
    throw ShapeError("reference kernel: accumulate target has wrong shape");
}

}  // namespace

void gemm_nn(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate) {
  require_shape(a.cols() == b.rows(), "reference::gemm_nn", a, b);
  prepare(out, a.rows(), b.cols(), accumulate);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) += s;
    }
}

void gemm_tn(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate) {
  require_shape(a.rows() == b.rows(), "reference::gemm_tn", a, b);
  prepare(out, a.cols(), b.cols(), accumulate);
  for (std::size_t i = 0; i < a.cols(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.rows(); ++k) s += a(k, i) * b(k, j);
      out(i, j) += s;
    }
}

void gemm_nt(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate) {
  require_shape(a.cols() == b.cols(), "reference::gemm_nt", a, b);
  prepare(out, a.rows(), b.rows(), accumulate);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
      out(i, j) += s;
    }
}

void block_apply(const Matrix& adj, const Matrix& h, Matrix& out, bool transpose,
                 bool accumulate) {
  const std::size_t n = adj.rows();
  if (adj.cols() != n || n == 0 || h.rows() % n != 0)
    throw ShapeError("reference::block_apply: bad shapes");
  prepare(out, h.rows(), h.cols(), accumulate);
  for (std::size_t blk = 0; blk < h.rows() / n; ++blk)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < h.cols(); ++c) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j)
          s += (transpose ? adj(j, i) : adj(i, j)) * h(blk * n + j, c);
        out(blk * n + i, c) += s;
      }
}

}  // namespace mgc::reference
