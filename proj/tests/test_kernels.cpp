#include "doctest.h"

#include <cmath>
#include <vector>

#include "vaedef/kernels.hpp"
#include <array>

#include "vaedef/rng.hpp"

using namespace vaedef;

namespace {

std::vector<double> random_vec(RngStream& rng, std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

}  // namespace

TEST_CASE("scalar and simd elementwise kernels are bit-identical") {
    if (!kernels::avx2_available()) return;
    const auto& s = kernels::scalar_backend();
    const auto& v = kernels::avx2_backend();
    RngStream rng(42);
    for (std::size_t n : {1u, 3u, 4u, 7u, 64u, 129u, 1000u}) {
        auto a = random_vec(rng, n), b = random_vec(rng, n);
        std::vector<double> cs(n), cv(n);
        s.add(a.data(), b.data(), cs.data(), n);
        v.add(a.data(), b.data(), cv.data(), n);
        CHECK(cs == cv);
        s.sub(a.data(), b.data(), cs.data(), n);
        v.sub(a.data(), b.data(), cv.data(), n);
        CHECK(cs == cv);
        s.mul(a.data(), b.data(), cs.data(), n);
        v.mul(a.data(), b.data(), cv.data(), n);
        CHECK(cs == cv);
        s.scale(1.7, a.data(), cs.data(), n);
        v.scale(1.7, a.data(), cv.data(), n);
        CHECK(cs == cv);
    }
}

TEST_CASE("reduction and matmul kernels agree within accumulation tolerance") {
    if (!kernels::avx2_available()) return;
    const auto& s = kernels::scalar_backend();
    const auto& v = kernels::avx2_backend();
    RngStream rng(7);
    for (std::size_t n : {1u, 5u, 32u, 257u}) {
        auto a = random_vec(rng, n), b = random_vec(rng, n);
        CHECK(s.dot(a.data(), b.data(), n) ==
              doctest::Approx(v.dot(a.data(), b.data(), n)).epsilon(1e-12));
        CHECK(s.sum(a.data(), n) == doctest::Approx(v.sum(a.data(), n)).epsilon(1e-12));
    }
    for (auto [m, k, n] : std::vector<std::array<std::size_t, 3>>{
             {1, 1, 1}, {2, 3, 4}, {5, 7, 3}, {16, 33, 9}, {1, 196, 256}}) {
        auto a = random_vec(rng, m * k);
        auto b = random_vec(rng, k * n);
        std::vector<double> cs(m * n), cv(m * n);
        s.matmul_nn(a.data(), b.data(), cs.data(), m, k, n);
        v.matmul_nn(a.data(), b.data(), cv.data(), m, k, n);
        for (std::size_t i = 0; i < m * n; ++i)
            CHECK(cs[i] == doctest::Approx(cv[i]).epsilon(1e-12));

        auto at = random_vec(rng, k * m);
        s.matmul_tn(at.data(), b.data(), cs.data(), m, k, n);
        v.matmul_tn(at.data(), b.data(), cv.data(), m, k, n);
        for (std::size_t i = 0; i < m * n; ++i)
            CHECK(cs[i] == doctest::Approx(cv[i]).epsilon(1e-12));

        auto bt = random_vec(rng, n * k);
        s.matmul_nt(a.data(), bt.data(), cs.data(), m, k, n);
        v.matmul_nt(a.data(), bt.data(), cv.data(), m, k, n);
        for (std::size_t i = 0; i < m * n; ++i)
            CHECK(cs[i] == doctest::Approx(cv[i]).epsilon(1e-12));
    }
}

TEST_CASE("matmul_tn and matmul_nt match explicit transposition") {
    const auto& k = kernels::active();
    RngStream rng(11);
    const std::size_t m = 4, kk = 6, n = 3;
    auto a = random_vec(rng, m * kk);
    auto b = random_vec(rng, kk * n);
    // C = A*B via nn, then the same product phrased through tn/nt on
    // transposed buffers.
    std::vector<double> c_ref(m * n);
    k.matmul_nn(a.data(), b.data(), c_ref.data(), m, kk, n);

    std::vector<double> at(kk * m);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < kk; ++p) at[p * m + i] = a[i * kk + p];
    std::vector<double> c1(m * n);
    k.matmul_tn(at.data(), b.data(), c1.data(), m, kk, n);
    for (std::size_t i = 0; i < m * n; ++i)
        CHECK(c1[i] == doctest::Approx(c_ref[i]).epsilon(1e-12));

    std::vector<double> bt(n * kk);
    for (std::size_t p = 0; p < kk; ++p)
        for (std::size_t j = 0; j < n; ++j) bt[j * kk + p] = b[p * n + j];
    std::vector<double> c2(m * n);
    k.matmul_nt(a.data(), bt.data(), c2.data(), m, kk, n);
    for (std::size_t i = 0; i < m * n; ++i)
        CHECK(c2[i] == doctest::Approx(c_ref[i]).epsilon(1e-12));
}

TEST_CASE("backend selection") {
    kernels::set_active("scalar");
    CHECK(std::string(kernels::active().name) == "scalar");
    if (kernels::avx2_available()) {
        kernels::set_active("avx2");
        CHECK(std::string(kernels::active().name) == "avx2");
    }
    CHECK_THROWS(kernels::set_active("sse9"));
    kernels::set_active(kernels::avx2_available() ? "avx2" : "scalar");
}
