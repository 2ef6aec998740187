#include "evorec/kernels.hpp"

#include "evorec/common.hpp"

namespace evorec::kernels {

#if defined(__x86_64__) || defined(_M_X64) || defined(__i386__)
#define EVOREC_X86 1
#else
#define EVOREC_X86 0
#endif

#if EVOREC_X86
namespace avx2 {
float dot(const float* a, const float* b, int n);
void axpy(float alpha, const float* x, float* y, int n);
void gemm_nn(float* c, const float* a, const float* b, int m, int n, int k, bool accumulate);
void gemm_nt(float* c, const float* a, const float* b, int m, int n, int k, bool accumulate);
void gemm_tn(float* c, const float* a, const float* b, int m, int n, int k, bool accumulate);
}  // namespace avx2
#endif

bool cpu_has_avx2() {
#if EVOREC_X86 && defined(__GNUC__)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

namespace {

struct Table {
    float (*dot)(const float*, const float*, int);
    void (*axpy)(float, const float*, float*, int);
    void (*gemm_nn)(float*, const float*, const float*, int, int, int, bool);
    void (*gemm_nt)(float*, const float*, const float*, int, int, int, bool);
    void (*gemm_tn)(float*, const float*, const float*, int, int, int, bool);
};

constexpr Table kScalar = {
    &scalar::dot<float>, &scalar::axpy<float>,
    &scalar::gemm_nn<float>, &scalar::gemm_nt<float>, &scalar::gemm_tn<float>,
};

#if EVOREC_X86
constexpr Table kAvx2 = {
    &avx2::dot, &avx2::axpy, &avx2::gemm_nn, &avx2::gemm_nt, &avx2::gemm_tn,
};
#endif

Backend g_choice = Backend::Auto;
Table g_table = kScalar;
Backend g_active = Backend::Scalar;
bool g_initialized = false;

void apply(Backend b) {
#if EVOREC_X86
    if ((b == Backend::Auto && cpu_has_avx2()) || b == Backend::Avx2) {
        if (!cpu_has_avx2()) throw UsageError("AVX2 backend requested but CPU lacks AVX2");
        g_table = kAvx2;
        g_active = Backend::Avx2;
        return;
    }
#else
    if (b == Backend::Avx2) throw UsageError("AVX2 backend requested on non-x86 build");
#endif
    g_table = kScalar;
    g_active = Backend::Scalar;
}

void ensure_init() {
    if (!g_initialized) {
        apply(g_choice);
        g_initialized = true;
    }
}

}  // namespace

void select_backend(Backend b) {
    g_choice = b;
    apply(b);
    g_initialized = true;
}

Backend active_backend() {
    ensure_init();
    return g_active;
}

const char* backend_name() {
    ensure_init();
    return g_active == Backend::Avx2 ? "avx2" : "scalar";
}

float dot(const float* a, const float* b, int n) {
    ensure_init();
    return g_table.dot(a, b, n);
}
void axpy(float alpha, const float* x, float* y, int n) {
    ensure_init();
    g_table.axpy(alpha, x, y, n);
}
void gemm_nn(float* c, const float* a, const float* b, int m, int n, int k, bool acc) {
    ensure_init();
    g_table.gemm_nn(c, a, b, m, n, k, acc);
}
void gemm_nt(float* c, const float* a, const float* b, int m, int n, int k, bool acc) {
    ensure_init();
    g_table.gemm_nt(c, a, b, m, n, k, acc);
}
void gemm_tn(float* c, const float* a, const float* b, int m, int n, int k, bool acc) {
    ensure_init();
    g_table.gemm_tn(c, a, b, m, n, k, acc);
}

}  // namespace evorec::kernels
