#pragma once

#include <cstddef>

#include "mgc/matrix.hpp"

// Dense kernels behind every differentiable op. The default namespace holds
// the OpenMP versions; mgc::reference holds straightforward serial loops used
// by the tests and the benchmark as ground truth.
//
// All kernels write `out` (resized by the caller) and, when `accumulate` is
// true, add into it instead of overwriting. Each output row is produced by one
// thread with a fixed summation order, so results do not depend on the thread
// count.
namespace mgc::kernels {

// out (+)= a * b
void gemm_nn(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate = false);
// out (+)= a^T * b
void gemm_tn(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate = false);
// out (+)= a * b^T
void gemm_nt(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate = false);

// Applies the n x n matrix `adj` to each consecutive n-row block of h:
// out[b*n + i, :] (+)= sum_j adj(i, j) * h[b*n + j, :]. With transpose = true
// adj^T is applied instead.
void block_apply(const Matrix& adj, const Matrix& h, Matrix& out, bool transpose = false,
                 bool accumulate = false);

// Number of threads the parallel kernels use (omp_get_max_threads, or 1).
int thread_count();

}  // namespace mgc::kernels

namespace mgc::reference {

void gemm_nn(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate = false);
void gemm_tn(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate = false);
void gemm_nt(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate = false);
void block_apply(const Matrix& adj, const Matrix& h, Matrix& out, bool transpose = false,
                 bool accumulate = false);

}  // namespace mgc::reference
