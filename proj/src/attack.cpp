#include "vaedef/attack.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "vaedef/autodiff.hpp"

namespace vaedef {

std::string to_string(AttackObjective kind) {
    switch (kind) {
        case AttackObjective::kSkl: return "skl";
        case AttackObjective::kKlForward: return "kl-forward";
        case AttackObjective::kKlReverse: return "kl-reverse";
        case AttackObjective::kL2Mean: return "l2-mean";
        case AttackObjective::kClassifierCe: return "classifier-ce";
        case AttackObjective::kSupervisedKl: return "supervised-kl";
        case AttackObjective::kMcmcAware: return "mcmc-aware";
    }
    return "?";
}

AttackObjective attack_objective_from_string(const std::string& s) {
    if (s == "skl") return AttackObjective::kSkl;
    if (s == "kl-forward") return AttackObjective::kKlForward;
    if (s == "kl-reverse") return AttackObjective::kKlReverse;
    if (s == "l2-mean") return AttackObjective::kL2Mean;
    if (s == "classifier-ce") return AttackObjective::kClassifierCe;
    if (s == "supervised-kl") return AttackObjective::kSupervisedKl;
    if (s == "mcmc-aware") return AttackObjective::kMcmcAware;
    throw std::invalid_argument("unknown attack objective: " + s);
}

void AttackConfig::validate() const {
    if (radius <= 0) throw std::invalid_argument("attack: radius must be > 0");
    if (steps < 1) throw std::invalid_argument("attack: steps must be >= 1");
    if (restarts < 1) throw std::invalid_argument("attack: restarts must be >= 1");
    if (step_size <= 0) throw std::invalid_argument("attack: step_size must be > 0");
    if (init_std < 0) throw std::invalid_argument("attack: init_std must be >= 0");
}

void AdversarialExample::check_feasible() const {
    for (std::size_t i = 0; i < epsilon.size(); ++i) {
        if (std::abs(epsilon[i]) > config.radius + 1e-9)
            throw std::runtime_error("adversarial example violates the L-inf ball");
        if (x_adv[i] < 0.0 || x_adv[i] > 1.0)
            throw std::runtime_error("adversarial example outside [0,1]");
        const double expect = std::clamp(x_ref[i] + epsilon[i], 0.0, 1.0);
        if (std::abs(x_adv[i] - expect) > 1e-12)
            throw std::runtime_error("stored perturbation inconsistent with x_adv");
    }
}

double kl_diag_gaussians(const GaussianParams& a, const GaussianParams& b) {
    if (a.mean.size() != b.mean.size())
        throw std::invalid_argument("kl_diag_gaussians: dimension mismatch");
    double kl = 0.0;
    for (std::size_t i = 0; i < a.mean.size(); ++i) {
        const double dm = a.mean[i] - b.mean[i];
        kl += 0.5 * (std::exp(a.log_var[i] - b.log_var[i]) +
                     dm * dm * std::exp(-b.log_var[i]) - 1.0 + b.log_var[i] -
                     a.log_var[i]);
    }
    return kl;
}

double symmetric_kl(const GaussianParams& a, const GaussianParams& b) {
    return kl_diag_gaussians(a, b) + kl_diag_gaussians(b, a);
}

namespace {

// KL( (mu_a, lv_a) || (mu_b, lv_b) ) for diagonal Gaussians, on the tape.
ad::NodeId kl_node(ad::Graph& g, ad::NodeId mu_a, ad::NodeId lv_a, ad::NodeId mu_b,
                   ad::NodeId lv_b) {
    ad::NodeId ratio = g.exp(g.sub(lv_a, lv_b));
    ad::NodeId quad = g.mul(g.square(g.sub(mu_a, mu_b)), g.exp(g.scale(lv_b, -1.0)));
    ad::NodeId lv_diff = g.sub(lv_b, lv_a);
    ad::NodeId per_dim = g.add_scalar(g.add(g.add(ratio, quad), lv_diff), -1.0);
    return g.scale(g.sum(per_dim), 0.5);
}

// Differentiable objective tape for the non-chain attacks: eps is the sole
// differentiable input, everything else enters as constants.
struct ObjectiveTape {
    ad::Graph g;
    ad::NodeId eps;
    ad::NodeId objective;
};

ObjectiveTape build_objective_tape(AttackObjective kind, const VaeModel& model,
                                   const LinearClassifier* classifier,
                                   const Tensor& x_ref, const Tensor* x_target) {
    if (kind == AttackObjective::kClassifierCe && !classifier)
        throw std::invalid_argument("classifier-ce objective requires a classifier");
    if (kind == AttackObjective::kSupervisedKl && !x_target)
        throw std::invalid_argument("supervised-kl objective requires a target point");
    if (kind == AttackObjective::kMcmcAware)
        throw std::invalid_argument("mcmc-aware objective uses its own driver");

    ObjectiveTape t;
    ad::Graph& g = t.g;
    const std::size_t d = x_ref.size();
    t.eps = g.input(Tensor({1, d}), true, "eps");
    ad::NodeId xr = g.constant(Tensor({1, d}, x_ref.vec()));
    ad::NodeId xa = g.add(xr, t.eps);
    auto enc = graphops::encoder(g, model, xa);

    GaussianParams ref = encode(model, x_ref);
    ad::NodeId mu_r = g.constant(Tensor({1, ref.mean.size()}, ref.mean.vec()));
    ad::NodeId lv_r = g.constant(Tensor({1, ref.log_var.size()}, ref.log_var.vec()));

    switch (kind) {
        case AttackObjective::kSkl:
            t.objective = g.add(kl_node(g, enc.mean, enc.log_var, mu_r, lv_r),
                                kl_node(g, mu_r, lv_r, enc.mean, enc.log_var));
            break;
        case AttackObjective::kKlForward:
            t.objective = kl_node(g, enc.mean, enc.log_var, mu_r, lv_r);
            break;
        case AttackObjective::kKlReverse:
            t.objective = kl_node(g, mu_r, lv_r, enc.mean, enc.log_var);
            break;
        case AttackObjective::kL2Mean:
            t.objective = g.sum(g.square(g.sub(enc.mean, mu_r)));
            break;
        case AttackObjective::kClassifierCe: {
            const std::size_t classes = classifier->classes();
            const std::size_t lat = model.latent_dim;
            // weight (C, L) enters transposed so logits = mu * W^T + b
            Tensor wt({lat, classes});
            for (std::size_t c = 0; c < classes; ++c)
                for (std::size_t j = 0; j < lat; ++j)
                    wt.at2(j, c) = classifier->weight.at2(c, j);
            ad::NodeId logits = g.bias_add(g.matmul(enc.mean, g.constant(std::move(wt))),
                                           g.constant(classifier->bias));
            const int label = classifier->predict(ref.mean);
            Tensor sel({classes, 1});
            sel[static_cast<std::size_t>(label)] = 1.0;
            ad::NodeId l_y = g.matmul(logits, g.constant(std::move(sel)));
            ad::NodeId lse = g.log(g.sum(g.exp(logits)));
            t.objective = g.sub(lse, g.sum(l_y));
            break;
        }
        case AttackObjective::kSupervisedKl: {
            GaussianParams tgt = encode(model, *x_target);
            ad::NodeId mu_t = g.constant(Tensor({1, tgt.mean.size()}, tgt.mean.vec()));
            ad::NodeId lv_t = g.constant(Tensor({1, tgt.log_var.size()}, tgt.log_var.vec()));
            t.objective = g.scale(kl_node(g, enc.mean, enc.log_var, mu_t, lv_t), -1.0);
            break;
        }
        default:
            break;
    }
    return t;
}

}  // namespace

double attack_objective(AttackObjective kind, const VaeModel& model,
                        const LinearClassifier* classifier, const Tensor& x_ref,
                        const Tensor* x_target, const Tensor& epsilon) {
    ObjectiveTape t = build_objective_tape(kind, model, classifier, x_ref, x_target);
    t.g.set_input(t.eps, Tensor({1, epsilon.size()}, epsilon.vec()));
    t.g.forward();
    return t.g.value(t.objective)[0];
}

Tensor project(Tensor epsilon, double radius, const Tensor& x_ref, bool box_constraint) {
    if (epsilon.size() != x_ref.size())
        throw std::invalid_argument("project: shape mismatch");
    for (std::size_t i = 0; i < epsilon.size(); ++i) {
        double e = std::clamp(epsilon[i], -radius, radius);
        if (box_constraint) e = std::clamp(e, -x_ref[i], 1.0 - x_ref[i]);
        epsilon[i] = e;
    }
    return epsilon;
}

namespace {

AdversarialExample finalize(const Tensor& x_ref, Tensor eps, const AttackConfig& config,
                            std::vector<double> trace, double final_obj,
                            std::size_t restart) {
    AdversarialExample ex;
    ex.x_ref = x_ref;
    ex.x_adv = Tensor(x_ref.shape());
    for (std::size_t i = 0; i < x_ref.size(); ++i)
        ex.x_adv[i] = std::clamp(x_ref[i] + eps[i], 0.0, 1.0);
    // stored perturbation is the effective one
    ex.epsilon = Tensor(x_ref.shape());
    for (std::size_t i = 0; i < x_ref.size(); ++i)
        ex.epsilon[i] = ex.x_adv[i] - x_ref[i];
    ex.objective_trace = std::move(trace);
    ex.config = config;
    ex.final_objective = final_obj;
    ex.restart_index = restart;
    ex.check_feasible();
    return ex;
}

Tensor init_epsilon(std::size_t d, const AttackConfig& config, RngStream& rng) {
    Tensor eps({d});
    for (auto& e : eps.vec()) e = config.init_std * rng.normal();
    return eps;
}

}  // namespace

std::vector<AdversarialExample> pgd_attack_all(const VaeModel& model,
                                               const LinearClassifier* classifier,
                                               const Tensor& x_ref, const Tensor* x_target,
                                               const AttackConfig& config,
                                               std::uint64_t seed) {
    config.validate();
    ObjectiveTape tape = build_objective_tape(config.objective, model, classifier, x_ref,
                                              x_target);
    const std::size_t d = x_ref.size();
    std::vector<AdversarialExample> out;
    out.reserve(config.restarts);

    auto eval = [&](const Tensor& eps, Tensor* grad) {
        tape.g.set_input(tape.eps, Tensor({1, d}, eps.vec()));
        tape.g.forward();
        const double obj = tape.g.value(tape.objective)[0];
        if (grad) {
            tape.g.backward_scalar(tape.objective);
            const Tensor& ge = tape.g.grad(tape.eps);
            if (!ge.all_finite())
                throw std::runtime_error("pgd_attack: non-finite gradient");
            for (std::size_t i = 0; i < d; ++i) (*grad)[i] = ge[i];
        }
        return obj;
    };

    for (std::size_t r = 0; r < config.restarts; ++r) {
        RngStream rng = RngStream::derived(seed, "pgd", r);
        Tensor eps = project(init_epsilon(d, config, rng), config.radius, x_ref,
                             config.box_constraint);
        Tensor grad({d});
        std::vector<double> trace;
        double obj = eval(eps, nullptr);
        trace.push_back(obj);
        Tensor best_eps = eps;
        double best_obj = obj;
        for (std::size_t s = 0; s < config.steps; ++s) {
            obj = eval(eps, &grad);
            for (std::size_t i = 0; i < d; ++i) eps[i] += config.step_size * grad[i];
            eps = project(std::move(eps), config.radius, x_ref, config.box_constraint);
            obj = eval(eps, nullptr);
            trace.push_back(obj);
            if (obj > best_obj) {
                best_obj = obj;
                best_eps = eps;
            }
        }
        out.push_back(finalize(x_ref, best_eps, config, std::move(trace), best_obj, r));
    }
    return out;
}

AdversarialExample pgd_attack(const VaeModel& model, const LinearClassifier* classifier,
                              const Tensor& x_ref, const Tensor* x_target,
                              const AttackConfig& config, std::uint64_t seed) {
    auto all = pgd_attack_all(model, classifier, x_ref, x_target, config, seed);
    std::size_t best = 0;
    for (std::size_t i = 1; i < all.size(); ++i)
        if (all[i].final_objective > all[best].final_objective) best = i;
    return all[best];
}

std::vector<AdversarialExample> mcmc_aware_attack_all(const VaeModel& model,
                                                      const HmcConfig& hmc_config,
                                                      const Tensor& x_ref,
                                                      const AttackConfig& config,
                                                      std::uint64_t seed) {
    config.validate();
    if (hmc_config.steps > 0) hmc_config.validate();
    const std::size_t d = x_ref.size();
    const std::size_t lat = model.latent_dim;

    // Tape: z0(eps) = mu(x_ref+eps) + sigma(x_ref+eps) * n, objective proxy
    // ||z0 + offset - z_ref_chain||^2 with offset = chain displacement
    // (constant during backprop).
    ad::Graph g;
    ad::NodeId eps_in = g.input(Tensor({1, d}), true, "eps");
    ad::NodeId xr = g.constant(Tensor({1, d}, x_ref.vec()));
    auto enc = graphops::encoder(g, model, g.add(xr, eps_in));
    ad::NodeId noise_in = g.constant(Tensor({1, lat}), "noise");
    ad::NodeId z0 = g.add(enc.mean, g.mul(g.exp(g.scale(enc.log_var, 0.5)), noise_in));
    ad::NodeId offset_in = g.constant(Tensor({1, lat}), "offset");
    ad::NodeId zr_in = g.constant(Tensor({1, lat}), "z_ref");
    ad::NodeId objective = g.sum(g.square(g.sub(g.add(z0, offset_in), zr_in)));

    VaePotentialTape adv_pot = make_vae_potential_tape(model, d);
    Potential ref_pot = make_vae_potential(model, x_ref);
    GaussianParams q_ref = encode(model, x_ref);

    std::vector<AdversarialExample> out;
    out.reserve(config.restarts);
    for (std::size_t r = 0; r < config.restarts; ++r) {
        RngStream rng = RngStream::derived(seed, "mcmc-aware", r);
        Tensor eps = project(init_epsilon(d, config, rng), config.radius, x_ref,
                             config.box_constraint);
        std::vector<double> trace;
        Tensor best_eps = eps;
        double best_obj = -1e300;

        for (std::size_t s = 0; s < config.steps; ++s) {
            // sample both latents through the defence chain
            Tensor n_a({lat}), n_r({lat});
            for (auto& v : n_a.vec()) v = rng.normal();
            for (auto& v : n_r.vec()) v = rng.normal();

            Tensor x_a({d});
            for (std::size_t i = 0; i < d; ++i) x_a[i] = x_ref[i] + eps[i];

            g.set_input(eps_in, Tensor({1, d}, eps.vec()));
            g.set_input(noise_in, Tensor({1, lat}, n_a.vec()));
            g.forward();
            Tensor z0a({lat});
            for (std::size_t i = 0; i < lat; ++i) z0a[i] = g.value(z0)[i];

            Tensor z_tilde_a = z0a;
            if (hmc_config.steps > 0) {
                adv_pot.set_x(x_a);
                z_tilde_a = run_hmc(adv_pot.pot, z0a, hmc_config, rng).first;
            }
            Tensor z0r = reparameterize(q_ref, n_r);
            Tensor z_tilde_r = z0r;
            if (hmc_config.steps > 0)
                z_tilde_r = run_hmc(ref_pot, z0r, hmc_config, rng).first;

            Tensor offset({1, lat});
            for (std::size_t i = 0; i < lat; ++i) offset[i] = z_tilde_a[i] - z0a[i];
            g.set_input(offset_in, offset);
            g.set_input(zr_in, Tensor({1, lat}, z_tilde_r.vec()));
            g.forward();
            const double obj = g.value(objective)[0];
            trace.push_back(obj);
            if (obj > best_obj) {
                best_obj = obj;
                best_eps = eps;
            }
            g.backward_scalar(objective);
            const Tensor& ge = g.grad(eps_in);
            if (!ge.all_finite())
                throw std::runtime_error("mcmc_aware_attack: non-finite gradient at step " +
                                         std::to_string(s));
            for (std::size_t i = 0; i < d; ++i) eps[i] += config.step_size * ge[i];
            eps = project(std::move(eps), config.radius, x_ref, config.box_constraint);
        }
        out.push_back(finalize(x_ref, best_eps, config, std::move(trace), best_obj, r));
    }
    return out;
}

AdversarialExample mcmc_aware_attack(const VaeModel& model, const HmcConfig& hmc_config,
                                     const Tensor& x_ref, const AttackConfig& config,
                                     std::uint64_t seed) {
    auto all = mcmc_aware_attack_all(model, hmc_config, x_ref, config, seed);
    std::size_t best = 0;
    for (std::size_t i = 1; i < all.size(); ++i)
        if (all[i].final_objective > all[best].final_objective) best = i;
    return all[best];
}

// ----------------------------------------------------------------------
// Archive I/O

namespace {

void write_u32(std::ostream& o, std::uint32_t v) { o.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& o, std::uint64_t v) { o.write(reinterpret_cast<const char*>(&v), 8); }
void write_f64(std::ostream& o, double v) { o.write(reinterpret_cast<const char*>(&v), 8); }
std::uint32_t read_u32(std::istream& i) {
    std::uint32_t v;
    i.read(reinterpret_cast<char*>(&v), 4);
    if (!i) throw std::runtime_error("truncated attack archive");
    return v;
}
std::uint64_t read_u64(std::istream& i) {
    std::uint64_t v;
    i.read(reinterpret_cast<char*>(&v), 8);
    if (!i) throw std::runtime_error("truncated attack archive");
    return v;
}
double read_f64(std::istream& i) {
    double v;
    i.read(reinterpret_cast<char*>(&v), 8);
    if (!i) throw std::runtime_error("truncated attack archive");
    return v;
}

}  // namespace

void save_attack_archive(const AttackArchive& a, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write attack archive " + path);
    out.write("ATK1", 4);
    write_u32(out, 1);  // version
    write_u64(out, a.config_hash);
    write_u32(out, static_cast<std::uint32_t>(a.data_dim));
    write_u32(out, static_cast<std::uint32_t>(a.records.size()));
    write_u32(out, static_cast<std::uint32_t>(a.best_per_reference.size()));
    for (const auto& r : a.records) {
        write_u32(out, r.reference_index);
        write_u32(out, r.restart_index);
        write_f64(out, r.config.radius);
        write_u32(out, static_cast<std::uint32_t>(r.config.steps));
        write_f64(out, r.config.step_size);
        write_f64(out, r.config.init_std);
        write_u32(out, static_cast<std::uint32_t>(r.config.restarts));
        write_u32(out, static_cast<std::uint32_t>(r.config.objective));
        write_u32(out, r.config.box_constraint ? 1u : 0u);
        for (double v : r.epsilon.vec()) write_f64(out, v);
        write_f64(out, r.final_objective);
    }
    for (auto b : a.best_per_reference) write_u32(out, b);
}

AttackArchive load_attack_archive(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open attack archive " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "ATK1", 4) != 0)
        throw std::runtime_error("bad attack archive magic in " + path);
    if (read_u32(in) != 1) throw std::runtime_error("unsupported attack archive version");
    AttackArchive a;
    a.config_hash = read_u64(in);
    a.data_dim = read_u32(in);
    const std::uint32_t n_rec = read_u32(in);
    const std::uint32_t n_best = read_u32(in);
    for (std::uint32_t i = 0; i < n_rec; ++i) {
        AttackArchive::Record r;
        r.reference_index = read_u32(in);
        r.restart_index = read_u32(in);
        r.config.radius = read_f64(in);
        r.config.steps = read_u32(in);
        r.config.step_size = read_f64(in);
        r.config.init_std = read_f64(in);
        r.config.restarts = read_u32(in);
        r.config.objective = static_cast<AttackObjective>(read_u32(in));
        r.config.box_constraint = read_u32(in) != 0;
        r.epsilon = Tensor({a.data_dim});
        for (auto& v : r.epsilon.vec()) v = read_f64(in);
        r.final_objective = read_f64(in);
        a.records.push_back(std::move(r));
    }
    for (std::uint32_t i = 0; i < n_best; ++i) a.best_per_reference.push_back(read_u32(in));
    return a;
}

}  // namespace vaedef
