#include "starbri/gemm.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

namespace starbri {

namespace {

// Two 512-bit vectors per accumulator row.
template <typename T>
constexpr std::size_t kPanelWidth = 128 / sizeof(T);
constexpr std::size_t kRowBlock = 8;
constexpr std::size_t kDepthBlock = 256;

// Accumulates an MR x NR tile over `depth` using a packed B panel laid out as
// [depth][NR]. Only the first `cols` columns of the tile are written back.
template <typename T, std::size_t MR>
inline void tile_kernel(std::size_t depth, const T* a, std::size_t lda,
                        const T* panel, T* c, std::size_t ldc,
                        std::size_t cols, bool accumulate) {
  constexpr std::size_t NR = kPanelWidth<T>;
  constexpr std::size_t kLanes = 64 / sizeof(T);
  typedef T vec __attribute__((vector_size(64), aligned(sizeof(T))));
  vec acc[MR][2];
  for (std::size_t r = 0; r < MR; ++r) acc[r][0] = acc[r][1] = vec{};
  for (std::size_t p = 0; p < depth; ++p) {
    const vec b0 = *reinterpret_cast<const vec*>(panel + p * NR);
    const vec b1 = *reinterpret_cast<const vec*>(panel + p * NR + kLanes);
    for (std::size_t r = 0; r < MR; ++r) {
      const T av = a[r * lda + p];
      acc[r][0] += av * b0;
      acc[r][1] += av * b1;
    }
  }
  for (std::size_t r = 0; r < MR; ++r) {
    T* crow = c + r * ldc;
    T tile[NR];
    std::memcpy(tile, &acc[r][0], sizeof(vec));
    std::memcpy(tile + kLanes, &acc[r][1], sizeof(vec));
    if (accumulate) {
      for (std::size_t j = 0; j < cols; ++j) crow[j] += tile[j];
    } else {
      for (std::size_t j = 0; j < cols; ++j) crow[j] = tile[j];
    }
  }
}

template <typename T>
void tile_rows(std::size_t m, std::size_t depth, const T* a, std::size_t lda,
               const T* panel, T* c, std::size_t ldc, std::size_t cols,
               bool accumulate) {
  std::size_t i = 0;
  for (; i + 8 <= m; i += 8) {
    tile_kernel<T, 8>(depth, a + i * lda, lda, panel, c + i * ldc, ldc, cols,
                      accumulate);
  }
  for (; i + 4 <= m; i += 4) {
    tile_kernel<T, 4>(depth, a + i * lda, lda, panel, c + i * ldc, ldc, cols,
                      accumulate);
  }
  for (; i + 2 <= m; i += 2) {
    tile_kernel<T, 2>(depth, a + i * lda, lda, panel, c + i * ldc, ldc, cols,
                      accumulate);
  }
  for (; i < m; ++i) {
    tile_kernel<T, 1>(depth, a + i * lda, lda, panel, c + i * ldc, ldc, cols,
                      accumulate);
  }
}

template <typename T>
void gemm_impl(std::size_t m, std::size_t n, std::size_t k, const T* a,
               std::size_t lda, const T* b, std::size_t ldb, bool b_trans, T* c,
               std::size_t ldc, bool accumulate) {
  constexpr std::size_t NR = kPanelWidth<T>;
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate) {
      for (std::size_t i = 0; i < m; ++i) std::fill_n(c + i * ldc, n, T{0});
    }
    return;
  }
  static_assert(kRowBlock == 8);
  thread_local std::vector<T> panel;
  panel.resize(kDepthBlock * NR);

  for (std::size_t p0 = 0; p0 < k; p0 += kDepthBlock) {
    const std::size_t depth = std::min(kDepthBlock, k - p0);
    const bool acc = accumulate || p0 > 0;
    for (std::size_t j0 = 0; j0 < n; j0 += NR) {
      const std::size_t cols = std::min(NR, n - j0);
      if (b_trans) {
        if (cols < NR) std::fill(panel.begin(), panel.begin() + depth * NR, T{0});
        for (std::size_t j = 0; j < cols; ++j) {
          const T* src = b + (j0 + j) * ldb + p0;
          T* dst = panel.data() + j;
          for (std::size_t p = 0; p < depth; ++p) dst[p * NR] = src[p];
        }
      } else {
        for (std::size_t p = 0; p < depth; ++p) {
          const T* src = b + (p0 + p) * ldb + j0;
          T* dst = panel.data() + p * NR;
          std::copy_n(src, cols, dst);
          std::fill(dst + cols, dst + NR, T{0});
        }
      }
      tile_rows<T>(m, depth, a + p0, lda, panel.data(), c + j0, ldc, cols,
                   acc);
    }
  }
}

}  // namespace

template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a,
          std::size_t lda, const T* b, std::size_t ldb, T* c, std::size_t ldc,
          bool accumulate) {
  gemm_impl(m, n, k, a, lda, b, ldb, false, c, ldc, accumulate);
}

template <typename T>
void gemm_bt(std::size_t m, std::size_t n, std::size_t k, const T* a,
             std::size_t lda, const T* b, std::size_t ldb, T* c,
             std::size_t ldc, bool accumulate) {
  gemm_impl(m, n, k, a, lda, b, ldb, true, c, ldc, accumulate);
}

template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst) {
  constexpr std::size_t B = 32;
  for (std::size_t i0 = 0; i0 < rows; i0 += B) {
    const std::size_t i1 = std::min(rows, i0 + B);
    for (std::size_t j0 = 0; j0 < cols; j0 += B) {
      const std::size_t j1 = std::min(cols, j0 + B);
      for (std::size_t i = i0; i < i1; ++i) {
        for (std::size_t j = j0; j < j1; ++j) dst[j * rows + i] = src[i * cols + j];
      }
    }
  }
}

template void gemm<float>(std::size_t, std::size_t, std::size_t, const float*,
                          std::size_t, const float*, std::size_t, float*,
                          std::size_t, bool);
template void gemm<double>(std::size_t, std::size_t, std::size_t,
                           const double*, std::size_t, const double*,
                           std::size_t, double*, std::size_t, bool);
template void gemm_bt<float>(std::size_t, std::size_t, std::size_t,
                             const float*, std::size_t, const float*,
                             std::size_t, float*, std::size_t, bool);
template void gemm_bt<double>(std::size_t, std::size_t, std::size_t,
                              const double*, std::size_t, const double*,
                              std::size_t, double*, std::size_t, bool);
template void transpose<float>(std::size_t, std::size_t, const float*, float*);
template void transpose<double>(std::size_t, std::size_t, const double*,
                                double*);

}  // namespace starbri
