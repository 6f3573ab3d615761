#include "vaedef/defence.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

#include "vaedef/autodiff.hpp"

namespace vaedef {

void HmcConfig::validate() const {
    if (leapfrog_steps < 1) throw std::invalid_argument("hmc: L must be >= 1");
    if (step_size <= 0) throw std::invalid_argument("hmc: eta must be > 0");
    if (target_acceptance <= 0 || target_acceptance >= 1)
        throw std::invalid_argument("hmc: target_acceptance must be in (0,1)");
}

VaePotentialTape make_vae_potential_tape(const VaeModel& model, std::size_t data_dim) {
    struct Tape {
        ad::Graph g;
        ad::NodeId z, x, u;
        std::size_t latent;
    };
    auto tape = std::make_shared<Tape>();
    tape->latent = model.latent_dim;
    ad::Graph& g = tape->g;
    tape->z = g.input(Tensor({1, model.latent_dim}), true, "z");
    tape->x = g.constant(Tensor({1, data_dim}), "x");
    ad::NodeId dec = graphops::decoder(g, model, tape->z);
    ad::NodeId ll = graphops::log_likelihood_node(g, model, dec, tape->x);
    ad::NodeId zeros = g.constant(Tensor({1, model.latent_dim}));
    ad::NodeId prior = ad::gaussian_log_density_node(g, tape->z, zeros, zeros);
    tape->u = g.scale(g.add(ll, prior), -1.0);

    VaePotentialTape out;
    out.set_x = [tape](const Tensor& x) {
        tape->g.set_input(tape->x, Tensor({1, x.size()}, x.vec()));
    };
    out.pot.eval = [tape](const Tensor& z, Tensor* grad_out) {
        Tensor zr({1, tape->latent}, z.vec());
        tape->g.set_input(tape->z, zr);
        tape->g.forward();
        const double u = tape->g.value(tape->u)[0];
        if (!std::isfinite(u)) throw std::runtime_error("potential: non-finite energy");
        if (grad_out) {
            tape->g.backward_scalar(tape->u);
            const Tensor& gz = tape->g.grad(tape->z);
            for (std::size_t i = 0; i < gz.size(); ++i) (*grad_out)[i] = gz[i];
        }
        return u;
    };
    return out;
}

Potential make_vae_potential(const VaeModel& model, const Tensor& x) {
    VaePotentialTape tape = make_vae_potential_tape(model, x.size());
    tape.set_x(x);
    return tape.pot;
}

double potential_energy(const VaeModel& model, const Tensor& x, const Tensor& z) {
    Tensor zeros(z.shape());
    return -log_likelihood(model, x, z) - ad::gaussian_log_density(z, zeros, zeros);
}

std::pair<Tensor, Tensor> leapfrog(const Potential& pot, Tensor z, Tensor p, double eta,
                                   std::size_t L) {
    if (!z.same_shape(p)) throw std::invalid_argument("leapfrog: z/p shape mismatch");
    if (eta == 0.0) return {std::move(z), std::move(p)};
    Tensor g = pot.grad(z);
    for (std::size_t l = 0; l < L; ++l) {
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= 0.5 * eta * g[i];
        for (std::size_t i = 0; i < z.size(); ++i) z[i] += eta * p[i];
        g = pot.grad(z);
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= 0.5 * eta * g[i];
    }
    if (!z.all_finite() || !p.all_finite())
        throw std::runtime_error("leapfrog: non-finite state");
    return {std::move(z), std::move(p)};
}

HmcStepResult hmc_step(const Potential& pot, const Tensor& z, double eta, std::size_t L,
                       RngStream& rng) {
    Tensor p(z.shape());
    for (auto& v : p.vec()) v = rng.normal();

    double kinetic0 = 0.0;
    for (double v : p.vec()) kinetic0 += 0.5 * v * v;
    const double h0 = pot.energy(z) + kinetic0;

    auto [z_new, p_new] = leapfrog(pot, z, p, eta, L);
    double kinetic1 = 0.0;
    for (double v : p_new.vec()) kinetic1 += 0.5 * v * v;
    const double h1 = pot.energy(z_new) + kinetic1;

    HmcStepResult res;
    res.alpha = std::min(1.0, std::exp(h0 - h1));
    const double u = rng.uniform();
    if (u < res.alpha) {
        res.z = std::move(z_new);
        res.accepted = true;
    } else {
        res.z = z;  // bitwise unchanged on reject
        res.accepted = false;
    }
    return res;
}

double adapt_step_size(double eta, double alpha_prev, double target, double gain) {
    return eta + gain * ((alpha_prev - target) / target) * eta;
}

std::pair<Tensor, HmcTrace> run_hmc(const Potential& pot, Tensor z0, const HmcConfig& config,
                                    RngStream& rng) {
    config.validate();
    HmcTrace trace;
    trace.acceptance.reserve(config.steps);
    trace.step_sizes.reserve(config.steps);
    Tensor z = std::move(z0);
    double eta = config.step_size;
    for (std::size_t t = 0; t < config.steps; ++t) {
        HmcStepResult res = hmc_step(pot, z, eta, config.leapfrog_steps, rng);
        trace.acceptance.push_back(res.alpha);
        trace.step_sizes.push_back(eta);
        if (res.accepted) ++trace.accepted;
        z = std::move(res.z);
        if (config.adaptive)
            eta = adapt_step_size(eta, res.alpha, config.target_acceptance,
                                  config.adapt_gain);
    }
    trace.final_z = z;
    return {std::move(z), std::move(trace)};
}

std::pair<Tensor, HmcTrace> defend(const VaeModel& model, const Tensor& x_adv,
                                   const HmcConfig& config, RngStream& rng) {
    config.validate();
    GaussianParams q = encode(model, x_adv);
    Tensor noise({model.latent_dim});
    for (auto& v : noise.vec()) v = rng.normal();
    Tensor z0 = reparameterize(q, noise);
    if (config.steps == 0) {
        HmcTrace trace;
        trace.final_z = z0;
        return {std::move(z0), std::move(trace)};
    }
    Potential pot = make_vae_potential(model, x_adv);
    return run_hmc(pot, std::move(z0), config, rng);
}

}  // namespace vaedef
