#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "vaedef/rng.hpp"
#include "vaedef/tensor.hpp"
#include "vaedef/vae.hpp"

namespace vaedef {

// Target potential for HMC: U(z) with gradient. eval returns U(z) and, when
// grad_out is non-null, fills the gradient in the same pass.
struct Potential {
    std::function<double(const Tensor&, Tensor*)> eval;

    double energy(const Tensor& z) const { return eval(z, nullptr); }
    Tensor grad(const Tensor& z) const {
        Tensor g(z.shape());
        eval(z, &g);
        return g;
    }
};

// U(z) = -log p(x|z) - log p(z), on a tape built once and re-evaluated.
Potential make_vae_potential(const VaeModel& model, const Tensor& x);

// Same tape with the conditioning input rebindable (the MCMC-aware attack
// moves x every PGD step without rebuilding the tape).
struct VaePotentialTape {
    Potential pot;
    std::function<void(const Tensor&)> set_x;
};
VaePotentialTape make_vae_potential_tape(const VaeModel& model, std::size_t data_dim);

double potential_energy(const VaeModel& model, const Tensor& x, const Tensor& z);

struct HmcConfig {
    std::size_t steps = 500;        // T
    double step_size = 0.1;         // eta
    std::size_t leapfrog_steps = 20;  // L
    bool adaptive = true;
    double target_acceptance = 0.9;
    double adapt_gain = 0.01;

    void validate() const;
};

struct HmcTrace {
    std::vector<double> acceptance;  // alpha per step
    std::vector<double> step_sizes;  // eta used per step
    Tensor final_z;
    std::size_t accepted = 0;
};

// Standard half-kick / drift / half-kick with K(p) = p^T p / 2.
std::pair<Tensor, Tensor> leapfrog(const Potential& pot, Tensor z, Tensor p, double eta,
                                   std::size_t L);

struct HmcStepResult {
    Tensor z;
    bool accepted = false;
    double alpha = 0.0;
};

HmcStepResult hmc_step(const Potential& pot, const Tensor& z, double eta, std::size_t L,
                       RngStream& rng);

// eta' = eta + gain * ((alpha - target) / target) * eta
double adapt_step_size(double eta, double alpha_prev, double target = 0.9,
                       double gain = 0.01);

// z_0 ~ q(z|x_adv), then T HMC steps on U(z); T = 0 returns the encoder
// sample unchanged.
std::pair<Tensor, HmcTrace> defend(const VaeModel& model, const Tensor& x_adv,
                                   const HmcConfig& config, RngStream& rng);

// Same chain on an arbitrary potential from a given start (theory checks).
std::pair<Tensor, HmcTrace> run_hmc(const Potential& pot, Tensor z0,
                                    const HmcConfig& config, RngStream& rng);

}  // namespace vaedef
