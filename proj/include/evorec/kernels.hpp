#pragma once

#include <cmath>
#include <cstddef>

// Data-parallel inner loops. Scalar reference implementations are templated
// on the element type; the float entry points go through a runtime-selected
// backend (AVX2 when the CPU supports it). Double always uses the scalar
// path -- it exists for the wide-precision gradient checks, not for speed.
//
// All matrices are tight row-major.

namespace evorec::kernels {

enum class Backend { Auto, Scalar, Avx2 };

// Process-wide selection. Auto picks the best supported backend.
void select_backend(Backend b);
Backend active_backend();
const char* backend_name();
bool cpu_has_avx2();

// ---------------------------------------------------------------------------
// Scalar reference kernels.
// ---------------------------------------------------------------------------
namespace scalar {

template <typename T>
T dot(const T* a, const T* b, int n) {
    T acc = 0;
    for (int i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

template <typename T>
void axpy(T alpha, const T* x, T* y, int n) {
    for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// C[M,N] (+)= A[M,K] * B[K,N]
template <typename T>
void gemm_nn(T* c, const T* a, const T* b, int m, int n, int k, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        T* crow = c + static_cast<size_t>(i) * n;
        if (!accumulate)
            for (int j = 0; j < n; ++j) crow[j] = 0;
        const T* arow = a + static_cast<size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            T av = arow[p];
            const T* brow = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[M,N] (+)= A[M,K] * B[N,K]^T
template <typename T>
void gemm_nt(T* c, const T* a, const T* b, int m, int n, int k, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<size_t>(i) * k;
        T* crow = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            T acc = dot(arow, b + static_cast<size_t>(j) * k, k);
            crow[j] = accumulate ? crow[j] + acc : acc;
        }
    }
}

// C[M,N] (+)= A[K,M]^T * B[K,N]
template <typename T>
void gemm_tn(T* c, const T* a, const T* b, int m, int n, int k, bool accumulate) {
    if (!accumulate) {
        for (size_t i = 0; i < static_cast<size_t>(m) * n; ++i) c[i] = 0;
    }
    for (int p = 0; p < k; ++p) {
        const T* arow = a + static_cast<size_t>(p) * m;
        const T* brow = b + static_cast<size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            T av = arow[i];
            T* crow = c + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace scalar

// ---------------------------------------------------------------------------
// Dispatched float entry points.
// ---------------------------------------------------------------------------
float dot(const float* a, const float* b, int n);
void axpy(float alpha, const float* x, float* y, int n);
void gemm_nn(float* c, const float* a, const float* b, int m, int n, int k, bool accumulate);
void gemm_nt(float* c, const float* a, const float* b, int m, int n, int k, bool accumulate);
void gemm_tn(float* c, const float* a, const float* b, int m, int n, int k, bool accumulate);

// Double overloads: scalar reference, always.
inline double dot(const double* a, const double* b, int n) { return scalar::dot(a, b, n); }
inline void axpy(double alpha, const double* x, double* y, int n) { scalar::axpy(alpha, x, y, n); }
inline void gemm_nn(double* c, const double* a, const double* b, int m, int n, int k, bool acc) {
    scalar::gemm_nn(c, a, b, m, n, k, acc);
}
inline void gemm_nt(double* c, const double* a, const double* b, int m, int n, int k, bool acc) {
    scalar::gemm_nt(c, a, b, m, n, k, acc);
}
inline void gemm_tn(double* c, const double* a, const double* b, int m, int n, int k, bool acc) {
    scalar::gemm_tn(c, a, b, m, n, k, acc);
}

// Shared small helpers (not backend-dispatched; cost is negligible).
template <typename T>
void softmax_inplace(T* x, int n) {
    T mx = x[0];
    for (int i = 1; i < n; ++i)
        if (x[i] > mx) mx = x[i];
    T sum = 0;
    for (int i = 0; i < n; ++i) {
        x[i] = std::exp(x[i] - mx);
        sum += x[i];
    }
    T inv = T(1) / sum;
    for (int i = 0; i < n; ++i) x[i] *= inv;
}

}  // namespace evorec::kernels
