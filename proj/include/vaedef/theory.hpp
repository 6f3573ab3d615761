#pragma once

#include <cstdint>
#include <vector>

#include "vaedef/defence.hpp"
#include "vaedef/tensor.hpp"
#include "vaedef/vae.hpp"

namespace vaedef::theory {

// Gaussian with full covariance; factored once on construction.
struct FullGaussian {
    Tensor mean;  // (d)
    Tensor cov;   // (d, d), symmetric positive definite

    FullGaussian() = default;
    FullGaussian(Tensor mean_, Tensor cov_);

    std::size_t dim() const { return mean.size(); }
    double log_density(const Tensor& z) const;
    double density(const Tensor& z) const { return std::exp(log_density(z)); }
    Tensor sample(RngStream& rng) const;
    double marginal_std(std::size_t i) const;

    const Tensor& chol() const { return chol_; }  // lower triangular factor
    double log_det() const { return log_det_; }

  private:
    Tensor chol_;
    double log_det_ = 0.0;
};

FullGaussian from_diag(const GaussianParams& p);

// Linear-Gaussian decoder x = W z + b + noise(sigma^2 I), standard normal prior.
struct LinearGaussianVae {
    Tensor decoder_weight;  // (D, latent)
    Tensor offset;          // (D)
    double obs_var = 1.0;

    void validate() const;  // full column rank via smallest singular value
};

// Conjugate posterior: Sigma = (I + W^T W / s^2)^-1, mu = Sigma W^T (x-b)/s^2.
FullGaussian exact_posterior(const LinearGaussianVae& lgv, const Tensor& x);

double kl_full_gaussians(const FullGaussian& a, const FullGaussian& b);

enum class TvMethod { kGrid, kMonteCarlo };

struct TvEstimate {
    double value = 0.0;
    double std_error = 0.0;  // zero for the grid method
};

// Grid: adaptive quadrature of |a - b|/2 over +-8 std (dim <= 2).
// Monte Carlo: mixture importance estimate, any dimension.
TvEstimate tv_gaussians(const FullGaussian& a, const FullGaussian& b, TvMethod method,
                        std::uint64_t seed = 0, std::size_t mc_samples = 200000);

struct Lemma1Result {
    std::vector<double> radii;
    std::vector<double> kls;
    double slope = 0.0;  // log-log least squares
    bool degenerate = false;
    std::vector<double> excluded_radii;  // KL underflow
};

// Fits log KL(p(z|x) || p(z|x + r dir)) against log r; o(||eps||) holds for
// slopes above 1 (exactly 2 on this model).
Lemma1Result lemma1_scaling_check(const LinearGaussianVae& lgv, const Tensor& x,
                                  const Tensor& direction, const std::vector<double>& radii);

struct PinskerReport {
    std::size_t pairs_checked = 0;
    std::size_t violations = 0;
    double min_slack = 0.0;  // min over pairs of bound - tv
    double max_slack = 0.0;
};

PinskerReport pinsker_check(const std::vector<std::pair<FullGaussian, FullGaussian>>& pairs);

// Diagonal-Gaussian encoder for the tractable fixture (possibly
// mis-specified relative to the exact posterior).
struct DiagGaussianEncoder {
    Tensor weight;   // (latent, D)
    Tensor offset;   // (latent)
    Tensor log_var;  // (latent)

    GaussianParams at(const Tensor& x) const;
};

struct Theorem1Result {
    double lhs = 0.0;             // TV[q^(t)(z|x_a), q(z|x_r)]
    double rhs_chain = 0.0;       // TV[q^(t)(z|x_a), p(z|x_a)]
    double rhs_posterior_shift = 0.0;  // sqrt(KL(p(z|x_r) || p(z|x_a)) / 2)
    double rhs_approx_gap = 0.0;       // sqrt(KL(q(z|x_r) || p(z|x_r)) / 2)
    double lhs_se = 0.0;
    double rhs_chain_se = 0.0;

    double rhs_sum() const { return rhs_chain + rhs_posterior_shift + rhs_approx_gap; }
    double combined_se() const;
    bool holds(double se_multiplier = 3.0) const;
};

// Estimates every term of the bound on the linear-Gaussian fixture by
// running `budget` independent defence chains for t steps. Latent dimension
// must be 1 or 2 (histogram TV).
Theorem1Result theorem1_decomposition(const LinearGaussianVae& lgv,
                                      const DiagGaussianEncoder& enc, const Tensor& x_r,
                                      const Tensor& x_a, const HmcConfig& hmc,
                                      std::size_t budget, std::uint64_t seed);

}  // namespace vaedef::theory
