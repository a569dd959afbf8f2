#include "poselift/blas.hpp"

#include <cstring>
#include <vector>

namespace poselift::blas {
namespace {

inline double elem_a(const GemmShape& s, const double* a, std::size_t i, std::size_t p) {
    return s.trans_a ? a[p * s.m + i] : a[i * s.k + p];
}

inline double elem_b(const GemmShape& s, const double* b, std::size_t p, std::size_t j) {
    return s.trans_b ? b[j * s.k + p] : b[p * s.n + j];
}

// One output row: c_row[j] += sum_p A(i,p) B(p,j), p ascending. Columns are
// processed in register-sized tiles so each partial sum stays in a register
// across the whole p loop. Requires a row-major (untransposed) B.
inline void row_kernel(const GemmShape& s, const double* a, const double* b, double* c_row, std::size_t i) {
    constexpr std::size_t kTile = 8;
    std::size_t j0 = 0;
    for (; j0 + kTile <= s.n; j0 += kTile) {
        double acc[kTile];
        for (std::size_t q = 0; q < kTile; ++q) acc[q] = c_row[j0 + q];
        for (std::size_t p = 0; p < s.k; ++p) {
            const double av = elem_a(s, a, i, p);
            const double* brow = b + p * s.n + j0;
            for (std::size_t q = 0; q < kTile; ++q) acc[q] += av * brow[q];
        }
        for (std::size_t q = 0; q < kTile; ++q) c_row[j0 + q] = acc[q];
    }
    for (std::size_t j = j0; j < s.n; ++j) {
        double acc = c_row[j];
        for (std::size_t p = 0; p < s.k; ++p) acc += elem_a(s, a, i, p) * b[p * s.n + j];
        c_row[j] = acc;
    }
}

void clear_output(const GemmShape& s, double* c) {
    const std::size_t mats = s.stride_c == 0 ? 1 : s.batch;
    for (std::size_t b = 0; b < mats; ++b) std::memset(c + b * s.stride_c, 0, s.m * s.n * sizeof(double));
}

}  // namespace

void gemm(const GemmShape& shape, const double* a, const double* b, double* c) {
    // A transposed B is copied into row-major form so every case runs the
    // vectorizable axpy kernel; the per-element summation order is unchanged.
    GemmShape s = shape;
    std::vector<double> bt;
    if (s.trans_b) {
        const std::size_t mats = s.stride_b == 0 ? 1 : s.batch;
        bt.resize(mats * s.k * s.n);
        for (std::size_t m = 0; m < mats; ++m) {
            const double* src = b + m * s.stride_b;
            double* dst = bt.data() + m * s.k * s.n;
            for (std::size_t j = 0; j < s.n; ++j)
                for (std::size_t p = 0; p < s.k; ++p) dst[p * s.n + j] = src[j * s.k + p];
        }
        b = bt.data();
        s.trans_b = false;
        s.stride_b = s.stride_b == 0 ? 0 : s.k * s.n;
    }
    if (!s.accumulate) clear_output(s, c);
    const bool parallel = s.batch * s.m * s.n * s.k >= kParallelThreshold;
    const long rows = static_cast<long>(s.m);
    if (s.stride_c == 0) {
        // Reduction over the batch: each row is owned by one thread and
        // accumulates batch products in order.
#pragma omp parallel for schedule(static) if (parallel)
        for (long i = 0; i < rows; ++i) {
            for (std::size_t bi = 0; bi < s.batch; ++bi)
                row_kernel(s, a + bi * s.stride_a, b + bi * s.stride_b, c + i * s.n, static_cast<std::size_t>(i));
        }
        return;
    }
    const long total = static_cast<long>(s.batch) * rows;
#pragma omp parallel for schedule(static) if (parallel)
    for (long idx = 0; idx < total; ++idx) {
        const std::size_t bi = static_cast<std::size_t>(idx) / s.m;
        const std::size_t i = static_cast<std::size_t>(idx) % s.m;
        row_kernel(s, a + bi * s.stride_a, b + bi * s.stride_b, c + bi * s.stride_c + i * s.n, i);
    }
}

void gemm_reference(const GemmShape& s, const double* a, const double* b, double* c) {
    if (!s.accumulate) clear_output(s, c);
    for (std::size_t bi = 0; bi < s.batch; ++bi) {
        const double* ab = a + bi * s.stride_a;
        const double* bb = b + bi * s.stride_b;
        double* cb = c + bi * s.stride_c;
        for (std::size_t i = 0; i < s.m; ++i)
            for (std::size_t j = 0; j < s.n; ++j) {
                double acc = cb[i * s.n + j];
                for (std::size_t p = 0; p < s.k; ++p) acc += elem_a(s, ab, i, p) * elem_b(s, bb, p, j);
                cb[i * s.n + j] = acc;
            }
    }
}

}  // namespace poselift::blas
