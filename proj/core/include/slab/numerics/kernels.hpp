#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace slab::kernels {

// Row-major GEMM variants, all accumulating into C. Loops are ordered so the
// innermost one is a contiguous axpy the compiler can vectorize without
// reassociating a reduction; results are bit-reproducible for a given build.

// C[n,m] += A[n,k] * B[k,m]
template <class T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t n, std::size_t k, std::size_t m) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    T* c0 = c + (i + 0) * m;
    T* c1 = c + (i + 1) * m;
    T* c2 = c + (i + 2) * m;
    T* c3 = c + (i + 3) * m;
    for (std::size_t p = 0; p < k; ++p) {
      const T a0 = a[(i + 0) * k + p];
      const T a1 = a[(i + 1) * k + p];
      const T a2 = a[(i + 2) * k + p];
      const T a3 = a[(i + 3) * k + p];
      const T* brow = b + p * m;
      for (std::size_t j = 0; j < m; ++j) {
        const T bv = brow[j];
        c0[j] += a0 * bv;
        c1[j] += a1 * bv;
        c2[j] += a2 * bv;
        c3[j] += a3 * bv;
      }
    }
  }
  for (; i < n; ++i) {
    T* crow = c + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* brow = b + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[n,m] += A[k,n]^T * B[k,m]
template <class T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t k, std::size_t n, std::size_t m) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * n;
    const T* brow = b + p * m;
    for (std::size_t i = 0; i < n; ++i) {
      const T av = arow[i];
      if (av == T{0}) continue;
      T* crow = c + i * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class T>
void transpose(const T* src, T* dst, std::size_t rows, std::size_t cols) {
  constexpr std::size_t kBlock = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kBlock) {
    for (std::size_t c0 = 0; c0 < cols; c0 += kBlock) {
      const std::size_t r1 = r0 + kBlock < rows ? r0 + kBlock : rows;
      const std::size_t c1 = c0 + kBlock < cols ? c0 + kBlock : cols;
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c) dst[c * rows + r] = src[r * cols + c];
    }
  }
}

// C[n,m] += A[n,k] * B[m,k]^T
template <class T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t n, std::size_t k, std::size_t m) {
  std::vector<T> bt(k * m);
  transpose(b, bt.data(), m, k);
  gemm_nn(a, bt.data(), c, n, k, m);
}

}  // namespace slab::kernels
