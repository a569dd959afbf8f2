#pragma once

#include <cstddef>

// Dense matrix kernels. `gemm` is the OpenMP-parallel production path;
// `gemm_reference` is a plain serial triple loop kept as the test oracle and
// benchmark baseline. Both compute every output element with the same
// summation order, so their results agree bitwise.
namespace poselift::blas {

// C[b] = (accumulate ? C[b] : 0) + op(A[b]) * op(B[b]) for b in [0, batch).
// op(A) is m x k, op(B) is k x n, C[b] is m x n. A stride of 0 broadcasts a
// single matrix across the batch. When stride_c == 0 all batch products are
// summed into the one output matrix (in batch order).
struct GemmShape {
    std::size_t batch = 1;
    std::size_t m = 0, n = 0, k = 0;
    bool trans_a = false;
    bool trans_b = false;
    std::size_t stride_a = 0, stride_b = 0, stride_c = 0;
    bool accumulate = false;
};

void gemm(const GemmShape& s, const double* a, const double* b, double* c);
void gemm_reference(const GemmShape& s, const double* a, const double* b, double* c);

// Below this many multiply-accumulates the parallel path runs serially.
inline constexpr std::size_t kParallelThreshold = 1 << 14;

}  // namespace poselift::blas
