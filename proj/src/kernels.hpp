#pragma once

#include <cstddef>

// Row-major GEMM kernels. Each output element accumulates over the inner
// index in ascending order, so results do not depend on vector width or
// pointer alignment.
namespace attriqe::ad::kernels {

// C[m x n] += A[m x k] * B[k x n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* __restrict ci = c + i * n;
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = ai[p];
      const T* __restrict bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// C[m x n] += A[k x m]^T * B[k x n]
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* ap = a + p * m;
    const T* __restrict bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T aip = ap[i];
      T* __restrict ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// dst[cols x rows] = src[rows x cols]^T
template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst) {
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
}

}  // namespace attriqe::ad::kernels
