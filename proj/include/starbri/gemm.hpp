#pragma once

#include <cstddef>

namespace starbri {

// C[M,N] = A[M,K] * B[K,N] (or C += when accumulate), row-major with explicit
// leading dimensions. Summation order depends only on the shapes, so results
// are reproducible run to run.
template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a,
          std::size_t lda, const T* b, std::size_t ldb, T* c, std::size_t ldc,
          bool accumulate);

// C[M,N] = A[M,K] * B[N,K]^T, same conventions.
template <typename T>
void gemm_bt(std::size_t m, std::size_t n, std::size_t k, const T* a,
             std::size_t lda, const T* b, std::size_t ldb, T* c,
             std::size_t ldc, bool accumulate);

// dst[cols, rows] = src[rows, cols]^T
template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst);

}  // namespace starbri
