#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>

namespace vaedef {

// Deterministic, platform-independent random stream. One root seed is split
// into independent per-stage / per-item streams by hashing the stage name and
// item index into the initial state (so parallel work never shares a stream).
// Core generator is SplitMix64; normals use Box-Muller on uniforms, which is
// reproducible across standard libraries unlike std::normal_distribution.
class RngStream {
  public:
    explicit RngStream(std::uint64_t seed) : state_(seed) {}

    static std::uint64_t derive(std::uint64_t root, const std::string& stage,
                                std::uint64_t index) {
        std::uint64_t h = root;
        for (char c : stage) h = mix(h ^ static_cast<std::uint64_t>(static_cast<unsigned char>(c)));
        return mix(h ^ mix(index + 0x9e3779b97f4a7c15ULL));
    }

    static RngStream derived(std::uint64_t root, const std::string& stage,
                             std::uint64_t index = 0) {
        return RngStream(derive(root, stage, index));
    }

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix(state_);
    }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform in (0, 1] (safe for log()).
    double uniform_pos() {
        return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform_pos();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // Rejection-free modulo is fine here: n is tiny relative to 2^64.
        return next_u64() % n;
    }

  private:
    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace vaedef
