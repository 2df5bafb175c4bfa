#pragma once

#include <cstdint>

namespace fld::nn {

// Row-major matrix kernels. The ikj ordering keeps the inner loop on
// contiguous memory so the compiler vectorizes it.

// C[M,N] = A[M,K] * B[K,N]  (or += when accumulate)
template <typename T>
void gemm(bool accumulate, int M, int N, int K, const T* A, const T* B, T* C) {
  if (!accumulate) {
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(M) * N; ++i) C[i] = T(0);
  }
  for (int i = 0; i < M; ++i) {
    T* c = C + static_cast<std::int64_t>(i) * N;
    const T* a = A + static_cast<std::int64_t>(i) * K;
    for (int k = 0; k < K; ++k) {
      const T av = a[k];
      const T* b = B + static_cast<std::int64_t>(k) * N;
      for (int j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

// C[M,N] = A[K,M]^T * B[K,N]
template <typename T>
void gemm_at(bool accumulate, int M, int N, int K, const T* A, const T* B, T* C) {
  if (!accumulate) {
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(M) * N; ++i) C[i] = T(0);
  }
  for (int k = 0; k < K; ++k) {
    const T* a = A + static_cast<std::int64_t>(k) * M;
    const T* b = B + static_cast<std::int64_t>(k) * N;
    for (int i = 0; i < M; ++i) {
      const T av = a[i];
      T* c = C + static_cast<std::int64_t>(i) * N;
      for (int j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

// C[M,N] = A[M,K] * B[N,K]^T
template <typename T>
void gemm_bt(bool accumulate, int M, int N, int K, const T* A, const T* B, T* C) {
  for (int i = 0; i < M; ++i) {
    const T* a = A + static_cast<std::int64_t>(i) * K;
    T* c = C + static_cast<std::int64_t>(i) * N;
    for (int j = 0; j < N; ++j) {
      const T* b = B + static_cast<std::int64_t>(j) * K;
      T acc = T(0);
      for (int k = 0; k < K; ++k) acc += a[k] * b[k];
      c[j] = accumulate ? c[j] + acc : acc;
    }
  }
}

}  // namespace fld::nn
