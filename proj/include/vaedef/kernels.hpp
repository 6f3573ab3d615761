#pragma once

#include <cstddef>
#include <string>

// Low-level dense kernels on contiguous double arrays. Every kernel has a
// scalar reference implementation and, where the loop is data-parallel, an
// AVX2/FMA variant. The active backend is chosen once at startup from CPUID
// and can be overridden with the VAEDEF_KERNELS environment variable
// ("scalar" or "avx2").

namespace vaedef::kernels {

struct Backend {
    void (*add)(const double*, const double*, double*, std::size_t);
    void (*sub)(const double*, const double*, double*, std::size_t);
    void (*mul)(const double*, const double*, double*, std::size_t);
    void (*axpy)(double a, const double*, double*, std::size_t);
    void (*scale)(double a, const double*, double*, std::size_t);
    double (*dot)(const double*, const double*, std::size_t);
    double (*sum)(const double*, std::size_t);
    // C (m x n) += / = A (m x k) * B (k x n), row-major.
    void (*matmul_nn)(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n);
    // C (m x n) = A (k x m)^T * B (k x n)
    void (*matmul_tn)(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n);
    // C (m x n) = A (m x k) * B (n x k)^T
    void (*matmul_nt)(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n);
    const char* name;
};

const Backend& scalar_backend();
bool avx2_available();
const Backend& avx2_backend();  // valid only if avx2_available()

// Process-wide active backend (set once, thread-safe initialization).
const Backend& active();
// Force a backend by name; throws on unknown name or unsupported CPU.
void set_active(const std::string& name);

}  // namespace vaedef::kernels
