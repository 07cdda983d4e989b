#pragma once

#include <Eigen/Core>
#include <omp.h>

#include <algorithm>
#include <cstdint>

#include "pipebench/common.hpp"

namespace pipebench {

// Row-major GEMM on raw pointers, parallelized by partitioning output rows.
// Every output row is produced by exactly one thread with a fixed inner
// order, so results are bit-identical from run to run at a given thread
// count. Eigen's own threading is compiled out (EIGEN_DONT_PARALLELIZE).

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

namespace detail {
inline int gemm_threads(int64_t flops, int rows) {
    if (flops < (1 << 21)) return 1;  // not worth forking
    return std::max(1, std::min(threads(), rows));
}
}  // namespace detail

// C[m,n] = A[m,k] * B[k,n]  (+= when accumulate)
template <typename T>
void gemm_nn(const T* A, const T* B, T* C, int m, int k, int n, bool accumulate = false) {
    ConstMatMap<T> a(A, m, k), b(B, k, n);
    MatMap<T> c(C, m, n);
    int nt = detail::gemm_threads(2LL * m * n * k, m);
#pragma omp parallel for schedule(static) num_threads(nt)
    for (int t = 0; t < nt; ++t) {
        int r0 = static_cast<int>(static_cast<int64_t>(m) * t / nt);
        int r1 = static_cast<int>(static_cast<int64_t>(m) * (t + 1) / nt);
        if (r1 <= r0) continue;
        if (accumulate)
            c.middleRows(r0, r1 - r0).noalias() += a.middleRows(r0, r1 - r0) * b;
        else
            c.middleRows(r0, r1 - r0).noalias() = a.middleRows(r0, r1 - r0) * b;
    }
}

// C[m,n] = A[m,k] * B[n,k]^T
template <typename T>
void gemm_nt(const T* A, const T* B, T* C, int m, int k, int n, bool accumulate = false) {
    ConstMatMap<T> a(A, m, k), b(B, n, k);
    MatMap<T> c(C, m, n);
    int nt = detail::gemm_threads(2LL * m * n * k, m);
#pragma omp parallel for schedule(static) num_threads(nt)
    for (int t = 0; t < nt; ++t) {
        int r0 = static_cast<int>(static_cast<int64_t>(m) * t / nt);
        int r1 = static_cast<int>(static_cast<int64_t>(m) * (t + 1) / nt);
        if (r1 <= r0) continue;
        if (accumulate)
            c.middleRows(r0, r1 - r0).noalias() += a.middleRows(r0, r1 - r0) * b.transpose();
        else
            c.middleRows(r0, r1 - r0).noalias() = a.middleRows(r0, r1 - r0) * b.transpose();
    }
}

// C[m,n] = A[k,m]^T * B[k,n]
template <typename T>
void gemm_tn(const T* A, const T* B, T* C, int m, int k, int n, bool accumulate = false) {
    ConstMatMap<T> a(A, k, m), b(B, k, n);
    MatMap<T> c(C, m, n);
    int nt = detail::gemm_threads(2LL * m * n * k, m);
#pragma omp parallel for schedule(static) num_threads(nt)
    for (int t = 0; t < nt; ++t) {
        int r0 = static_cast<int>(static_cast<int64_t>(m) * t / nt);
        int r1 = static_cast<int>(static_cast<int64_t>(m) * (t + 1) / nt);
        if (r1 <= r0) continue;
        if (accumulate)
            c.middleRows(r0, r1 - r0).noalias() += a.middleCols(r0, r1 - r0).transpose() * b;
        else
            c.middleRows(r0, r1 - r0).noalias() = a.middleCols(r0, r1 - r0).transpose() * b;
    }
}

}  // namespace pipebench
