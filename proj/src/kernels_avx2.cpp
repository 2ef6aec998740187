// AVX2/FMA float kernels. This translation unit is the only one compiled
// with -mavx2 -mfma; it must never be entered on CPUs without AVX2, which
// the dispatcher guarantees.

#if defined(__x86_64__) || defined(_M_X64) || defined(__i386__)

#include <immintrin.h>

#include <cstddef>

namespace evorec::kernels::avx2 {

static inline float hsum256(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 sh = _mm_movehdup_ps(lo);
    lo = _mm_add_ps(lo, sh);
    sh = _mm_movehl_ps(sh, lo);
    lo = _mm_add_ss(lo, sh);
    return _mm_cvtss_f32(lo);
}

float dot(const float* a, const float* b, int n) {
    __m256 acc0 = _mm256_setzero_ps();
    __m256 acc1 = _mm256_setzero_ps();
    int i = 0;
    for (; i + 16 <= n; i += 16) {
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
        acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 8), _mm256_loadu_ps(b + i + 8), acc1);
    }
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
    }
    float s = hsum256(_mm256_add_ps(acc0, acc1));
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

void axpy(float alpha, const float* x, float* y, int n) {
    __m256 va = _mm256_set1_ps(alpha);
    int i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 vy = _mm256_loadu_ps(y + i);
        vy = _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), vy);
        _mm256_storeu_ps(y + i, vy);
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void gemm_nn(float* c, const float* a, const float* b, int m, int n, int k, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        float* crow = c + static_cast<size_t>(i) * n;
        if (!accumulate) {
            int j = 0;
            __m256 z = _mm256_setzero_ps();
            for (; j + 8 <= n; j += 8) _mm256_storeu_ps(crow + j, z);
            for (; j < n; ++j) crow[j] = 0.f;
        }
        const float* arow = a + static_cast<size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            axpy(arow[p], b + static_cast<size_t>(p) * n, crow, n);
        }
    }
}

void gemm_nt(float* c, const float* a, const float* b, int m, int n, int k, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        const float* arow = a + static_cast<size_t>(i) * k;
        float* crow = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            float v = dot(arow, b + static_cast<size_t>(j) * k, k);
            crow[j] = accumulate ? crow[j] + v : v;
        }
    }
}

void gemm_tn(float* c, const float* a, const float* b, int m, int n, int k, bool accumulate) {
    if (!accumulate) {
        size_t total = static_cast<size_t>(m) * n;
        size_t i = 0;
        __m256 z = _mm256_setzero_ps();
        for (; i + 8 <= total; i += 8) _mm256_storeu_ps(c + i, z);
        for (; i < total; ++i) c[i] = 0.f;
    }
    for (int p = 0; p < k; ++p) {
        const float* arow = a + static_cast<size_t>(p) * m;
        const float* brow = b + static_cast<size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            axpy(arow[i], brow, c + static_cast<size_t>(i) * n, n);
        }
    }
}

}  // namespace evorec::kernels::avx2

#endif  // x86
