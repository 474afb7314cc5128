#pragma once

// Row-major GEMM kernels. Every output element is accumulated sequentially
// over the inner dimension, so its value depends only on its own row and
// column operands and never on the position it occupies in the matrix.

#include <algorithm>
#include <cstddef>

namespace mac::detail {

/// C[m x n] (+)= A[m x k] * B[k x n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  if (!accumulate) std::fill_n(c, m * n, T(0));
  constexpr std::size_t kColBlock = 512;
  for (std::size_t j0 = 0; j0 < n; j0 += kColBlock) {
    const std::size_t len = std::min(n, j0 + kColBlock) - j0;
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
      T* __restrict c0 = c + i * n + j0;
      T* __restrict c1 = c0 + n;
      T* __restrict c2 = c1 + n;
      T* __restrict c3 = c2 + n;
      const T* a0 = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const T* __restrict bp = b + p * n + j0;
        const T x0 = a0[p], x1 = a0[k + p], x2 = a0[2 * k + p], x3 = a0[3 * k + p];
        for (std::size_t j = 0; j < len; ++j) {
          const T bv = bp[j];
          c0[j] += x0 * bv;
          c1[j] += x1 * bv;
          c2[j] += x2 * bv;
          c3[j] += x3 * bv;
        }
      }
    }
    for (; i < m; ++i) {
      T* __restrict c0 = c + i * n + j0;
      const T* a0 = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const T* __restrict bp = b + p * n + j0;
        const T x0 = a0[p];
        for (std::size_t j = 0; j < len; ++j) c0[j] += x0 * bp[j];
      }
    }
  }
}

/// C[m x n] (+)= A^T * B with A stored [k x m] and B stored [k x n].
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  if (!accumulate) std::fill_n(c, m * n, T(0));
  constexpr std::size_t kColBlock = 512;
  for (std::size_t j0 = 0; j0 < n; j0 += kColBlock) {
    const std::size_t len = std::min(n, j0 + kColBlock) - j0;
    for (std::size_t p = 0; p < k; ++p) {
      const T* __restrict bp = b + p * n + j0;
      const T* ap = a + p * m;
      for (std::size_t i = 0; i < m; ++i) {
        const T x = ap[i];
        T* __restrict ci = c + i * n + j0;
        for (std::size_t j = 0; j < len; ++j) ci[j] += x * bp[j];
      }
    }
  }
}

/// dst[cols x rows] = src[rows x cols]^T
template <typename T>
void transpose_into(std::size_t rows, std::size_t cols, const T* src, T* dst) {
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
}

}  // namespace mac::detail
