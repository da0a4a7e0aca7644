#ifndef MMREC_KERNELS_HPP
#define MMREC_KERNELS_HPP

#include <cstddef>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mmrec::kernels {

// Dense kernels behind the differentiable graph and the evaluators.
// Every output element is written by exactly one thread and its inner loop runs
// in the same order as the serial reference, so results are bit-identical to
// `reference::` for any thread count. Reductions accumulate in double.

template <typename T>
using Acc = double;

// C[m x n] = A[m x k] * B[n x k]^T   (optionally +=)
template <typename T>
void matmul_nt(const T* a, const T* b, T* c, size_t m, size_t n, size_t k, bool accumulate = false) {
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(m); ++i) {
    const T* ai = a + static_cast<size_t>(i) * k;
    T* ci = c + static_cast<size_t>(i) * n;
    for (size_t j = 0; j < n; ++j) {
      const T* bj = b + j * k;
      Acc<T> s = 0;
      for (size_t l = 0; l < k; ++l) s += static_cast<Acc<T>>(ai[l]) * static_cast<Acc<T>>(bj[l]);
      ci[j] = accumulate ? static_cast<T>(static_cast<Acc<T>>(ci[j]) + s) : static_cast<T>(s);
    }
  }
}

// C[m x n] = A[m x k] * B[k x n]   (optionally +=)
template <typename T>
void matmul_nn(const T* a, const T* b, T* c, size_t m, size_t n, size_t k, bool accumulate = false) {
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(m); ++i) {
    const T* ai = a + static_cast<size_t>(i) * k;
    T* ci = c + static_cast<size_t>(i) * n;
    for (size_t j = 0; j < n; ++j) {
      Acc<T> s = 0;
      for (size_t l = 0; l < k; ++l) s += static_cast<Acc<T>>(ai[l]) * static_cast<Acc<T>>(b[l * n + j]);
      ci[j] = accumulate ? static_cast<T>(static_cast<Acc<T>>(ci[j]) + s) : static_cast<T>(s);
    }
  }
}

// C[k x n] = A[m x k]^T * B[m x n]   (optionally +=); the weight-gradient shape.
template <typename T>
void matmul_tn(const T* a, const T* b, T* c, size_t m, size_t n, size_t k, bool accumulate = false) {
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(k); ++i) {
    T* ci = c + static_cast<size_t>(i) * n;
    for (size_t j = 0; j < n; ++j) {
      Acc<T> s = 0;
      for (size_t l = 0; l < m; ++l)
        s += static_cast<Acc<T>>(a[l * k + static_cast<size_t>(i)]) * static_cast<Acc<T>>(b[l * n + j]);
      ci[j] = accumulate ? static_cast<T>(static_cast<Acc<T>>(ci[j]) + s) : static_cast<T>(s);
    }
  }
}

// out[j] (+)= sum_i A[i x j]; bias gradients.
template <typename T>
void col_sum(const T* a, T* out, size_t m, size_t n, bool accumulate = false) {
#pragma omp parallel for schedule(static)
  for (long long j = 0; j < static_cast<long long>(n); ++j) {
    Acc<T> s = 0;
    for (size_t i = 0; i < m; ++i) s += static_cast<Acc<T>>(a[i * n + static_cast<size_t>(j)]);
    out[j] = accumulate ? static_cast<T>(static_cast<Acc<T>>(out[j]) + s) : static_cast<T>(s);
  }
}

// out[i] = dot(A row i, B row i)
template <typename T>
void row_dot(const T* a, const T* b, T* out, size_t m, size_t k) {
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(m); ++i) {
    const T* ai = a + static_cast<size_t>(i) * k;
    const T* bi = b + static_cast<size_t>(i) * k;
    Acc<T> s = 0;
    for (size_t l = 0; l < k; ++l) s += static_cast<Acc<T>>(ai[l]) * static_cast<Acc<T>>(bi[l]);
    out[i] = static_cast<T>(s);
  }
}

// scores[u x n] = U[u x d] * E[n x d]^T for ranked retrieval.
template <typename T>
void score_users(const T* users, const T* items, T* scores, size_t n_users, size_t n_items, size_t d) {
  matmul_nt(users, items, scores, n_users, n_items, d);
}

namespace reference {

// Serial transcriptions kept as the testing oracle for the parallel kernels.

template <typename T>
void matmul_nt(const T* a, const T* b, T* c, size_t m, size_t n, size_t k, bool accumulate = false) {
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) {
      Acc<T> s = 0;
      for (size_t l = 0; l < k; ++l) s += static_cast<Acc<T>>(a[i * k + l]) * static_cast<Acc<T>>(b[j * k + l]);
      c[i * n + j] = accumulate ? static_cast<T>(static_cast<Acc<T>>(c[i * n + j]) + s) : static_cast<T>(s);
    }
}

template <typename T>
void matmul_nn(const T* a, const T* b, T* c, size_t m, size_t n, size_t k, bool accumulate = false) {
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) {
      Acc<T> s = 0;
      for (size_t l = 0; l < k; ++l) s += static_cast<Acc<T>>(a[i * k + l]) * static_cast<Acc<T>>(b[l * n + j]);
      c[i * n + j] = accumulate ? static_cast<T>(static_cast<Acc<T>>(c[i * n + j]) + s) : static_cast<T>(s);
    }
}

template <typename T>
void matmul_tn(const T* a, const T* b, T* c, size_t m, size_t n, size_t k, bool accumulate = false) {
  for (size_t i = 0; i < k; ++i)
    for (size_t j = 0; j < n; ++j) {
      Acc<T> s = 0;
      for (size_t l = 0; l < m; ++l) s += static_cast<Acc<T>>(a[l * k + i]) * static_cast<Acc<T>>(b[l * n + j]);
      c[i * n + j] = accumulate ? static_cast<T>(static_cast<Acc<T>>(c[i * n + j]) + s) : static_cast<T>(s);
    }
}

template <typename T>
void col_sum(const T* a, T* out, size_t m, size_t n, bool accumulate = false) {
  for (size_t j = 0; j < n; ++j) {
    Acc<T> s = 0;
    for (size_t i = 0; i < m; ++i) s += static_cast<Acc<T>>(a[i * n + j]);
    out[j] = accumulate ? static_cast<T>(static_cast<Acc<T>>(out[j]) + s) : static_cast<T>(s);
  }
}

template <typename T>
void row_dot(const T* a, const T* b, T* out, size_t m, size_t k) {
  for (size_t i = 0; i < m; ++i) {
    Acc<T> s = 0;
    for (size_t l = 0; l < k; ++l) s += static_cast<Acc<T>>(a[i * k + l]) * static_cast<Acc<T>>(b[i * k + l]);
    out[i] = static_cast<T>(s);
  }
}

}  // namespace reference

inline int thread_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

inline void set_thread_count(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

}  // namespace mmrec::kernels

#endif
