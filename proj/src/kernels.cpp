#include "vaedef/kernels.hpp"

#include <cstdlib>
#include <stdexcept>

#if defined(__x86_64__) || defined(_M_X64)
#define VAEDEF_X86 1
#include <immintrin.h>
#else
#define VAEDEF_X86 0
#endif

namespace vaedef::kernels {

namespace scalar {

void add(const double* a, const double* b, double* c, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) c[i] = a[i] + b[i];
}
void sub(const double* a, const double* b, double* c, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) c[i] = a[i] - b[i];
}
void mul(const double* a, const double* b, double* c, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) c[i] = a[i] * b[i];
}
void axpy(double a, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}
void scale(double a, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a * x[i];
}
double dot(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}
double sum(const double* a, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i];
    return s;
}

void matmul_nn(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] = 0.0;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a[i * k + p];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

void matmul_tn(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m * n; ++i) c[i] = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
        const double* ap = a + p * m;
        const double* bp = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double api = ap[i];
            double* ci = c + i * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
        }
    }
}

void matmul_nt(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            c[i * n + j] = dot(ai, b + j * k, k);
        }
    }
}

}  // namespace scalar

const Backend& scalar_backend() {
    static const Backend b{scalar::add,       scalar::sub,       scalar::mul,
                           scalar::axpy,      scalar::scale,     scalar::dot,
                           scalar::sum,       scalar::matmul_nn, scalar::matmul_tn,
                           scalar::matmul_nt, "scalar"};
    return b;
}

#if VAEDEF_X86

namespace avx2 {

__attribute__((target("avx2,fma"))) void add(const double* a, const double* b,
                                             double* c, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(c + i, _mm256_add_pd(_mm256_loadu_pd(a + i),
                                              _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) c[i] = a[i] + b[i];
}

__attribute__((target("avx2,fma"))) void sub(const double* a, const double* b,
                                             double* c, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(c + i, _mm256_sub_pd(_mm256_loadu_pd(a + i),
                                              _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) c[i] = a[i] - b[i];
}

__attribute__((target("avx2,fma"))) void mul(const double* a, const double* b,
                                             double* c, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(c + i, _mm256_mul_pd(_mm256_loadu_pd(a + i),
                                              _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) c[i] = a[i] * b[i];
}

__attribute__((target("avx2,fma"))) void axpy(double a, const double* x,
                                              double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i),
                                                _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) y[i] += a * x[i];
}

__attribute__((target("avx2,fma"))) void scale(double a, const double* x,
                                               double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) y[i] = a * x[i];
}

__attribute__((target("avx2,fma"))) static inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_add_sd(lo, _mm_unpackhi_pd(lo, lo)));
}

__attribute__((target("avx2,fma"))) double dot(const double* a, const double* b,
                                               std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
    double s = hsum(acc);
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

__attribute__((target("avx2,fma"))) double sum(const double* a, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(a + i));
    double s = hsum(acc);
    for (; i < n; ++i) s += a[i];
    return s;
}

// Row-major GEMM, broadcast-A / streamed-B. The k-loop FMA accumulates in
// the output row so the n-dimension vectorizes cleanly.
__attribute__((target("avx2,fma"))) void matmul_nn(const double* a,
                                                   const double* b, double* c,
                                                   std::size_t m, std::size_t k,
                                                   std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] = 0.0;
        for (std::size_t p = 0; p < k; ++p) {
            const __m256d va = _mm256_set1_pd(a[i * k + p]);
            const double* bp = b + p * n;
            std::size_t j = 0;
            for (; j + 4 <= n; j += 4)
                _mm256_storeu_pd(ci + j, _mm256_fmadd_pd(va, _mm256_loadu_pd(bp + j),
                                                         _mm256_loadu_pd(ci + j)));
            for (; j < n; ++j) ci[j] += a[i * k + p] * bp[j];
        }
    }
}

__attribute__((target("avx2,fma"))) void matmul_tn(const double* a,
                                                   const double* b, double* c,
                                                   std::size_t m, std::size_t k,
                                                   std::size_t n) {
    for (std::size_t i = 0; i < m * n; ++i) c[i] = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
        const double* ap = a + p * m;
        const double* bp = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const __m256d va = _mm256_set1_pd(ap[i]);
            double* ci = c + i * n;
            std::size_t j = 0;
            for (; j + 4 <= n; j += 4)
                _mm256_storeu_pd(ci + j, _mm256_fmadd_pd(va, _mm256_loadu_pd(bp + j),
                                                         _mm256_loadu_pd(ci + j)));
            for (; j < n; ++j) ci[j] += ap[i] * bp[j];
        }
    }
}

__attribute__((target("avx2,fma"))) void matmul_nt(const double* a,
                                                   const double* b, double* c,
                                                   std::size_t m, std::size_t k,
                                                   std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        for (std::size_t j = 0; j < n; ++j) c[i * n + j] = dot(ai, b + j * k, k);
    }
}

}  // namespace avx2

bool avx2_available() {
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}

const Backend& avx2_backend() {
    static const Backend b{avx2::add,       avx2::sub,       avx2::mul,
                           avx2::axpy,      avx2::scale,     avx2::dot,
                           avx2::sum,       avx2::matmul_nn, avx2::matmul_tn,
                           avx2::matmul_nt, "avx2"};
    return b;
}

#else

bool avx2_available() { return false; }
const Backend& avx2_backend() { return scalar_backend(); }

#endif

namespace {

const Backend* g_active = nullptr;

const Backend* pick_default() {
    if (const char* env = std::getenv("VAEDEF_KERNELS")) {
        std::string s(env);
        if (s == "scalar") return &scalar_backend();
        if (s == "avx2" && avx2_available()) return &avx2_backend();
    }
    return avx2_available() ? &avx2_backend() : &scalar_backend();
}

}  // namespace

const Backend& active() {
    if (!g_active) g_active = pick_default();
    return *g_active;
}

void set_active(const std::string& name) {
    if (name == "scalar") {
        g_active = &scalar_backend();
    } else if (name == "avx2") {
        if (!avx2_available()) throw std::runtime_error("avx2 not supported on this CPU");
        g_active = &avx2_backend();
    } else {
        throw std::runtime_error("unknown kernel backend: " + name);
    }
}

}  // namespace vaedef::kernels
