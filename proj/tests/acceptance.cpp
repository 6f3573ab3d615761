// Acceptance gate: one pass/fail line per criterion, exit 0 only if all pass.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>

#include "vaedef/attack.hpp"
#include "vaedef/autodiff.hpp"
#include "vaedef/config.hpp"
#include "vaedef/dataset.hpp"
#include "vaedef/defence.hpp"
#include "vaedef/metrics.hpp"
#include "vaedef/pipeline.hpp"
#include "vaedef/report.hpp"
#include "vaedef/theory.hpp"
#include "vaedef/vae.hpp"

using namespace vaedef;
namespace fs = std::filesystem;

namespace {

bool g_all_ok = true;

void verdict(int criterion, bool pass, const std::string& what,
             const std::string& detail = "") {
    g_all_ok = g_all_ok && pass;
    std::cout << (pass ? "PASS" : "FAIL") << " criterion " << criterion << ": " << what;
    if (!detail.empty()) std::cout << " [" << detail << "]";
    std::cout << "\n" << std::flush;
}

bool grad_close(double analytic, double numeric, double tol = 1e-6) {
    return std::abs(analytic - numeric) <= tol * std::max(1.0, std::abs(numeric));
}

// ------------------------------------------------------------------ 1

// Random composition of tape primitives over a single input vector.
double check_random_graphs(std::size_t count) {
    std::size_t failures = 0;
    for (std::size_t trial = 0; trial < count; ++trial) {
        RngStream rng(1000 + trial);
        const std::size_t n = 2 + rng.below(5);
        Tensor x0({n});
        for (auto& v : x0.vec()) v = 0.25 + 0.5 * rng.uniform();

        auto build = [&](ad::Graph& g, ad::NodeId in) {
            ad::NodeId cur = in;
            RngStream ops(2000 + trial);
            for (int depth = 0; depth < 5; ++depth) {
                switch (ops.below(7)) {
                    case 0: cur = g.sigmoid(cur); break;
                    case 1: cur = g.tanh(cur); break;
                    case 2: cur = g.softplus(cur); break;
                    case 3: cur = g.square(cur); break;
                    case 4: cur = g.mul(cur, in); break;
                    case 5: cur = g.add(cur, g.scale(in, 0.5)); break;
                    default: cur = g.exp(g.scale(cur, 0.3)); break;
                }
            }
            return g.sum(cur);
        };

        ad::Graph g;
        const ad::NodeId in = g.input(x0);
        const ad::NodeId out = build(g, in);
        g.forward();
        g.backward_scalar(out);
        const Tensor analytic = g.grad(in);

        const Tensor numeric = ad::numerical_gradient(
            [&](const Tensor& p) {
                ad::Graph h;
                const ad::NodeId hin = h.input(p);
                const ad::NodeId hout = build(h, hin);
                h.forward();
                return h.value(hout)[0];
            },
            x0);
        for (std::size_t i = 0; i < n; ++i)
            if (!grad_close(analytic[i], numeric[i])) ++failures;
    }
    return failures == 0;
}

// Tape for the SKL attack objective with epsilon as the only input.
bool check_objective_gradient(const VaeModel& model, const Tensor& x_ref) {
    const std::size_t d = x_ref.size();
    const GaussianParams ref = encode(model, x_ref);

    ad::Graph g;
    Tensor eps0({1, d});
    RngStream rng(7);
    for (auto& v : eps0.vec()) v = 0.02 * rng.normal();
    const ad::NodeId eps = g.input(eps0);
    const ad::NodeId xa = g.add(eps, g.constant(Tensor({1, d}, x_ref.vec())));
    const auto enc = graphops::encoder(g, model, xa);
    const ad::NodeId mu_r = g.constant(Tensor({1, model.latent_dim}, ref.mean.vec()));
    const ad::NodeId lv_r = g.constant(Tensor({1, model.latent_dim}, ref.log_var.vec()));

    // SKL(a, r) = 1/2 sum[ e^(la-lr) + e^(lr-la) + (mu_a-mu_r)^2 (e^-lr + e^-la) - 2 ]
    const ad::NodeId dmu2 = g.square(g.sub(enc.mean, mu_r));
    const ad::NodeId term = g.add(
        g.add(g.exp(g.sub(enc.log_var, lv_r)), g.exp(g.sub(lv_r, enc.log_var))),
        g.mul(dmu2, g.add(g.exp(g.scale(lv_r, -1.0)), g.exp(g.scale(enc.log_var, -1.0)))));
    const ad::NodeId skl = g.scale(g.add_scalar(g.sum(term),
                                                -2.0 * static_cast<double>(model.latent_dim)),
                                   0.5);
    g.forward();
    g.backward_scalar(skl);
    const Tensor analytic = g.grad(eps);

    // consistency of the tape itself against the library objective
    const double lib = attack_objective(AttackObjective::kSkl, model, nullptr, x_ref, nullptr,
                                        Tensor({d}, eps0.vec()));
    if (std::abs(lib - g.value(skl)[0]) > 1e-9 * std::max(1.0, std::abs(lib))) return false;

    const Tensor numeric = ad::numerical_gradient(
        [&](const Tensor& p) {
            return attack_objective(AttackObjective::kSkl, model, nullptr, x_ref, nullptr, p);
        },
        Tensor({d}, eps0.vec()));
    for (std::size_t i = 0; i < d; ++i)
        if (!grad_close(analytic[i], numeric[i])) return false;
    return true;
}

bool check_potential_gradient(const VaeModel& model, const Tensor& x) {
    const Potential pot = make_vae_potential(model, x);
    RngStream rng(8);
    for (int trial = 0; trial < 3; ++trial) {
        Tensor z({model.latent_dim});
        for (auto& v : z.vec()) v = rng.normal();
        const Tensor analytic = pot.grad(z);
        const Tensor numeric = ad::numerical_gradient(
            [&](const Tensor& p) { return potential_energy(model, x, p); }, z);
        for (std::size_t i = 0; i < z.size(); ++i)
            if (!grad_close(analytic[i], numeric[i])) return false;
    }
    return true;
}

// Independent parameter-gradient tape for the single-sample ELBO, compared
// against finite differences of the library elbo().
bool check_elbo_parameter_gradient(const VaeModel& model, const Tensor& x) {
    Tensor noise({model.latent_dim});
    RngStream nrng(9);
    for (auto& v : noise.vec()) v = nrng.normal();

    ad::Graph g;
    struct P {
        Tensor* target;
        ad::NodeId node;
    };
    std::vector<P> params;
    VaeModel work = model;  // mutated during finite differencing
    auto param = [&](Tensor& t) {
        const ad::NodeId id = g.input(t);
        params.push_back({&t, id});
        return id;
    };

    auto dense = [&](ad::NodeId in, DenseLayer& layer, bool tanh_act) {
        const ad::NodeId lin = g.bias_add(g.matmul(in, param(layer.weight)),
                                          param(layer.bias));
        return tanh_act ? g.tanh(lin) : lin;
    };

    const ad::NodeId xin = g.constant(Tensor({1, x.size()}, x.vec()));
    ad::NodeId h = xin;
    for (auto& layer : work.encoder_trunk) h = dense(h, layer, true);
    const ad::NodeId mu = dense(h, work.mean_head, false);
    const ad::NodeId lv = dense(h, work.logvar_head, false);

    const ad::NodeId noise_c = g.constant(Tensor({1, work.latent_dim}, noise.vec()));
    ad::NodeId z = g.add(mu, g.mul(g.exp(g.scale(lv, 0.5)), noise_c));
    for (std::size_t i = 0; i + 1 < work.decoder.size(); ++i)
        z = dense(z, work.decoder[i], true);
    ad::NodeId probs = g.clamp(g.sigmoid(dense(z, work.decoder.back(), false)),
                               kBernoulliProbFloor, 1.0 - kBernoulliProbFloor);

    // Bernoulli log likelihood
    const ad::NodeId xc = g.constant(Tensor({1, x.size()}, x.vec()));
    const ad::NodeId one_minus_x = g.scale(g.add_scalar(xc, -1.0), -1.0);
    const ad::NodeId one_minus_p = g.scale(g.add_scalar(probs, -1.0), -1.0);
    const ad::NodeId ll =
        g.sum(g.add(g.mul(xc, g.log(probs)), g.mul(one_minus_x, g.log(one_minus_p))));

    // KL(q || N(0, I)) = 1/2 sum( e^lv + mu^2 - 1 - lv )
    const ad::NodeId kl = g.scale(
        g.add_scalar(g.sum(g.sub(g.add(g.exp(lv), g.square(mu)), lv)),
                     -static_cast<double>(work.latent_dim)),
        0.5);
    const ad::NodeId obj = g.add(ll, g.scale(kl, -work.beta));
    g.forward();

    if (std::abs(g.value(obj)[0] - elbo(work, x, noise)) > 1e-9) return false;
    g.backward_scalar(obj);

    // sampled coordinates across every parameter tensor
    RngStream pick(10);
    for (const auto& p : params) {
        const Tensor& analytic = g.grad(p.node);
        for (int probe = 0; probe < 4; ++probe) {
            const std::size_t i = pick.below(p.target->size());
            const double h0 = 1e-5;
            const double orig = (*p.target)[i];
            (*p.target)[i] = orig + h0;
            const double up = elbo(work, x, noise);
            (*p.target)[i] = orig - h0;
            const double down = elbo(work, x, noise);
            (*p.target)[i] = orig;
            const double numeric = (up - down) / (2.0 * h0);
            if (!grad_close(analytic[i], numeric, 2e-6)) return false;
        }
    }
    return true;
}

// ------------------------------------------------------------------ shared fixtures

Potential standard_normal_potential(std::size_t dim) {
    Potential pot;
    pot.eval = [dim](const Tensor& z, Tensor* grad) {
        double u = 0.5 * dim * std::log(2.0 * std::numbers::pi);
        for (std::size_t i = 0; i < z.size(); ++i) u += 0.5 * z[i] * z[i];
        if (grad)
            for (std::size_t i = 0; i < z.size(); ++i) (*grad)[i] = z[i];
        return u;
    };
    return pot;
}

struct DeskFixture {
    Dataset data;
    Dataset refs;
    VaeModel model;
    LinearClassifier classifier;
    AttackArchive archive;  // skl attacks, radius 0.1, 10 restarts
};

DeskFixture build_desk_fixture() {
    DeskFixture f;
    const std::uint64_t seed = 1;
    f.data = generate_synthetic(RngStream::derive(seed, "data", 0), 50, 4, 14);

    f.model = make_vae(f.data.dim(), {256, 128}, 16, 1.0, DecoderFamily::kBernoulli,
                       Objective::kElbo, RngStream::derive(seed, "init", 0));
    TrainConfig train_cfg;
    train_cfg.epochs = 20;
    train_cfg.batch_size = 32;
    train_cfg.learning_rate = 5e-4;
    train_cfg.seed = RngStream::derive(seed, "train", 0);
    train(f.model, f.data, train_cfg);

    Tensor feats({f.data.size(), f.model.latent_dim});
    for (std::size_t i = 0; i < f.data.size(); ++i) {
        const Tensor mu = encode(f.model, f.data.image(i)).mean;
        for (std::size_t j = 0; j < f.model.latent_dim; ++j) feats.at2(i, j) = mu[j];
    }
    ClassifierConfig ccfg;
    ccfg.seed = RngStream::derive(seed, "classifier", 0);
    f.classifier = fit_linear_classifier(feats, f.data.labels, ccfg);

    f.refs = stratified_sample(f.data, 5, RngStream::derive(seed, "refs", 0));

    AttackConfig atk;
    atk.radius = 0.1;
    atk.objective = AttackObjective::kSkl;  // defaults: 50 steps, lr 1, 10 restarts
    f.archive.data_dim = f.data.dim();
    for (std::size_t i = 0; i < f.refs.size(); ++i) {
        const auto runs = pgd_attack_all(f.model, nullptr, f.refs.image(i), nullptr, atk,
                                         RngStream::derive(seed, "attack", i));
        const std::size_t base = f.archive.records.size();
        std::size_t best = base;
        double best_obj = -1e300;
        for (const auto& run : runs) {
            if (run.final_objective > best_obj) {
                best_obj = run.final_objective;
                best = base + run.restart_index;
            }
            f.archive.records.push_back({static_cast<std::uint32_t>(i),
                                         static_cast<std::uint32_t>(run.restart_index),
                                         run.config, run.epsilon, run.final_objective});
        }
        f.archive.best_per_reference.push_back(static_cast<std::uint32_t>(best));
    }
    return f;
}

HmcConfig paper_defence(std::size_t steps = 500) {
    HmcConfig hmc;
    hmc.steps = steps;
    hmc.step_size = 0.1;
    hmc.leapfrog_steps = 20;
    hmc.adaptive = true;
    return hmc;
}

std::vector<unsigned char> read_all(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

std::string fmt(double v) { return report::format_double(v); }

}  // namespace

int main() {
    const auto t_start = std::chrono::steady_clock::now();
    auto elapsed = [&] {
        return std::chrono::duration_cast<std::chrono::seconds>(
                   std::chrono::steady_clock::now() - t_start)
            .count();
    };

    // --- criterion 1: gradient correctness ------------------------------
    {
        Dataset small = generate_synthetic(71, 20, 2, 8);
        VaeModel grad_model = make_vae(small.dim(), {24, 16}, 4, 1.0,
                                       DecoderFamily::kBernoulli, Objective::kElbo, 2);
        TrainConfig tc;
        tc.epochs = 4;
        tc.batch_size = 20;
        tc.learning_rate = 2e-3;
        tc.seed = 3;
        train(grad_model, small, tc);
        const Tensor x = small.image(0);

        const bool graphs_ok = check_random_graphs(100);
        const bool obj_ok = check_objective_gradient(grad_model, x);
        const bool pot_ok = check_potential_gradient(grad_model, x);
        const bool elbo_ok = check_elbo_parameter_gradient(grad_model, x);
        verdict(1, graphs_ok && obj_ok && pot_ok && elbo_ok,
                "autodiff matches central finite differences on 100 random graphs and all "
                "three network gradient paths",
                std::string("graphs=") + (graphs_ok ? "ok" : "bad") +
                    " objective=" + (obj_ok ? "ok" : "bad") +
                    " potential=" + (pot_ok ? "ok" : "bad") +
                    " elbo-params=" + (elbo_ok ? "ok" : "bad"));
    }

    // --- criterion 2: HMC sampler validity ------------------------------
    {
        const Potential pot = standard_normal_potential(8);

        RngStream rng(21);
        Tensor z({8});
        double eta = 0.25;
        std::vector<double> sum(8, 0.0), sum_sq(8, 0.0);
        const std::size_t steps = 5000;
        for (std::size_t t = 0; t < steps; ++t) {
            const HmcStepResult res = hmc_step(pot, z, eta, 8, rng);
            z = res.z;
            eta = adapt_step_size(eta, res.alpha);
            for (std::size_t i = 0; i < 8; ++i) {
                sum[i] += z[i];
                sum_sq[i] += z[i] * z[i];
            }
        }
        bool moments_ok = true;
        double worst_mean = 0.0, worst_var = 1.0;
        for (std::size_t i = 0; i < 8; ++i) {
            const double mean = sum[i] / steps;
            const double var = sum_sq[i] / steps - mean * mean;
            if (std::abs(mean) > std::abs(worst_mean)) worst_mean = mean;
            if (std::abs(var - 1.0) > std::abs(worst_var - 1.0)) worst_var = var;
            moments_ok = moments_ok && std::abs(mean) < 0.05 && var > 0.9 && var < 1.1;
        }

        RngStream lr(22);
        Tensor z0({4}), p0({4});
        for (auto& v : z0.vec()) v = lr.normal();
        for (auto& v : p0.vec()) v = lr.normal();
        auto [z1, p1] = leapfrog(pot, z0, p0, 0.2, 15);
        for (auto& v : p1.vec()) v = -v;
        auto [z2, p2] = leapfrog(pot, z1, p1, 0.2, 15);
        double rev_err = 0.0;
        for (std::size_t i = 0; i < 4; ++i)
            rev_err = std::max({rev_err, std::abs(z2[i] - z0[i]), std::abs(-p2[i] - p0[i])});

        RngStream tiny_rng(23);
        const HmcStepResult tiny = hmc_step(pot, z, 1e-4, 5, tiny_rng);

        verdict(2, moments_ok && rev_err < 1e-8 && tiny.alpha > 0.999,
                "prior-target HMC moments, leapfrog reversibility, and the small-step "
                "acceptance limit",
                "worst_mean=" + fmt(worst_mean) + " worst_var=" + fmt(worst_var) +
                    " rev_err=" + fmt(rev_err) + " alpha=" + fmt(tiny.alpha));
    }

    // --- criterion 3: adaptive step size --------------------------------
    {
        const bool fixed_point = adapt_step_size(0.37, 0.9) == 0.37;

        const Potential pot = standard_normal_potential(8);
        HmcConfig cfg;
        cfg.steps = 1500;
        cfg.step_size = 0.8;
        cfg.leapfrog_steps = 10;
        cfg.adaptive = true;
        RngStream rng(31);
        const auto [zf, trace] = run_hmc(pot, Tensor({8}), cfg, rng);
        double trailing = 0.0;
        for (std::size_t t = cfg.steps - 200; t < cfg.steps; ++t)
            trailing += trace.acceptance[t];
        trailing /= 200.0;

        verdict(3, fixed_point && trailing > 0.85 && trailing < 0.95,
                "per-step adaptation reaches the 0.9 acceptance target with an exact fixed "
                "point",
                "trailing_acceptance=" + fmt(trailing));
    }

    // --- criterion 4: scaling of the posterior KL -----------------------
    {
        theory::LinearGaussianVae lgv;
        lgv.decoder_weight = Tensor({3, 1}, {1.0, -0.5, 0.25});
        lgv.offset = Tensor::vector({0.1, -0.2, 0.05});
        lgv.obs_var = 0.4;
        std::vector<double> radii;
        for (double r = 1e-3; r <= 0.1 + 1e-9; r *= std::pow(100.0, 0.125))
            radii.push_back(r);
        const theory::Lemma1Result res = theory::lemma1_scaling_check(
            lgv, Tensor::vector({0.5, 0.2, -0.1}), Tensor::vector({1.0, -0.5, 0.25}), radii);
        verdict(4, !res.degenerate && res.slope >= 1.8 && res.slope <= 2.2,
                "posterior KL scales quadratically in the perturbation radius",
                "slope=" + fmt(res.slope));
    }

    // --- criterion 5: TV vs the KL bound --------------------------------
    {
        std::vector<std::pair<theory::FullGaussian, theory::FullGaussian>> pairs;
        RngStream rng(41);
        for (int i = 0; i < 200; ++i) {
            const std::size_t d = (i % 2) + 1;
            auto random_gaussian = [&] {
                Tensor mean({d});
                for (auto& v : mean.vec()) v = 2.0 * rng.normal();
                Tensor a({d, d});
                for (auto& v : a.vec()) v = rng.normal();
                Tensor cov({d, d});
                for (std::size_t r = 0; r < d; ++r)
                    for (std::size_t c = 0; c < d; ++c) {
                        double s = (r == c) ? 0.3 : 0.0;
                        for (std::size_t k = 0; k < d; ++k) s += a.at2(r, k) * a.at2(c, k);
                        cov.at2(r, c) = s;
                    }
                return theory::FullGaussian(std::move(mean), std::move(cov));
            };
            pairs.emplace_back(random_gaussian(), random_gaussian());
        }
        const theory::PinskerReport rep = theory::pinsker_check(pairs);
        verdict(5, rep.pairs_checked == 200 && rep.violations == 0 && rep.min_slack >= -1e-9,
                "TV lower-bounds sqrt(KL/2) on 200 random Gaussian pairs by grid integration",
                "min_slack=" + fmt(rep.min_slack));
    }

    // --- criterion 6: the TV bound decomposition ------------------------
    {
        const std::string dir = "acceptance_theory";
        fs::remove_all(dir);
        fs::create_directories(dir);
        {
            std::ofstream cfg(dir + "/theory.cfg");
            cfg << "seed = 1\noutput.dir = " << dir << "/out\n";
        }
        StageOverrides opts;
        opts.config_path = dir + "/theory.cfg";
        opts.check_filter = "theorem1";
        const int code = cmd_theory(opts);
        bool rows_ok = code == kExitOk;
        std::string detail = "exit=" + std::to_string(code);
        if (fs::exists(dir + "/out/theory.csv")) {
            const report::Csv csv = report::read_csv(dir + "/out/theory.csv");
            std::size_t bound_rows = 0, decay_rows = 0;
            for (const auto& row : csv.rows) {
                if (row[3] != "true") rows_ok = false;
                if (row[0].find("chain_decay") != std::string::npos)
                    ++decay_rows;
                else
                    ++bound_rows;
            }
            rows_ok = rows_ok && bound_rows == 6 && decay_rows == 2;  // {1,2}-dim x t in {0,10,100}
            detail += " bound_rows=" + std::to_string(bound_rows) +
                      " decay_rows=" + std::to_string(decay_rows);
        } else {
            rows_ok = false;
        }
        verdict(6, rows_ok,
                "TV(defended, clean-encoder) obeys the three-term bound for t in {0,10,100} "
                "and the chain term halves by t=100",
                detail);
    }

    // --- criteria 7-10: shared desk-scale fixture ------------------------
    std::cout << "building desk-scale fixture (t+" << elapsed() << "s)\n" << std::flush;
    DeskFixture desk = build_desk_fixture();
    const std::uint64_t eval_seed = RngStream::derive(1, "defend-eval", 0);

    const RobustnessReport plain = robustness_report(desk.model, desk.classifier, desk.refs,
                                                     desk.archive, std::nullopt, eval_seed);
    std::cout << "undefended report done (t+" << elapsed() << "s)\n" << std::flush;
    const RobustnessReport defended = robustness_report(
        desk.model, desk.classifier, desk.refs, desk.archive, paper_defence(500), eval_seed);
    std::cout << "defended report done (t+" << elapsed() << "s)\n" << std::flush;

    verdict(7,
            defended.msssim_mean >= plain.msssim_mean + 0.05 &&
                defended.adversarial_accuracy >= plain.adversarial_accuracy + 0.05,
            "the defence lifts reconstruction similarity and adversarial accuracy by >= 0.05",
            "msssim " + fmt(plain.msssim_mean) + " -> " + fmt(defended.msssim_mean) +
                ", accuracy " + fmt(plain.adversarial_accuracy) + " -> " +
                fmt(defended.adversarial_accuracy));

    // --- criterion 8: step-count ablation -------------------------------
    {
        const RobustnessReport t100 = robustness_report(
            desk.model, desk.classifier, desk.refs, desk.archive, paper_defence(100),
            eval_seed);
        const double jump_0_100 = t100.msssim_mean - plain.msssim_mean;
        const double jump_100_500 = defended.msssim_mean - t100.msssim_mean;
        verdict(8, jump_0_100 > jump_100_500,
                "most of the robustness gain appears between 0 and 100 defence steps",
                "0->100=" + fmt(jump_0_100) + " 100->500=" + fmt(jump_100_500));
    }

    // --- criterion 9: feasibility invariant ------------------------------
    {
        std::size_t feasible = 0;
        for (const auto& rec : desk.archive.records) {
            bool ok = true;
            const Tensor x_ref = desk.refs.image(rec.reference_index);
            for (std::size_t i = 0; i < rec.epsilon.size(); ++i) {
                if (std::abs(rec.epsilon[i]) > 0.1 + 1e-9) ok = false;
                const double xa = x_ref[i] + rec.epsilon[i];
                if (xa < -1e-12 || xa > 1.0 + 1e-12) ok = false;
            }
            if (ok) ++feasible;
        }
        verdict(9, feasible == desk.archive.records.size(),
                "every stored adversarial example respects the L-inf ball and the pixel box",
                std::to_string(feasible) + "/" + std::to_string(desk.archive.records.size()));
    }

    // --- criterion 10: attacking through the defence ---------------------
    {
        HmcConfig attacker_chain;
        attacker_chain.steps = 5;
        attacker_chain.step_size = 0.1;
        attacker_chain.leapfrog_steps = 5;
        AttackConfig atk;
        atk.radius = 0.1;
        atk.objective = AttackObjective::kMcmcAware;
        atk.steps = 25;
        atk.restarts = 3;

        AttackArchive aware;
        aware.data_dim = desk.data.dim();
        for (std::size_t i = 0; i < desk.refs.size(); ++i) {
            const AdversarialExample ex =
                mcmc_aware_attack(desk.model, attacker_chain, desk.refs.image(i), atk,
                                  RngStream::derive(1, "attack-aware", i));
            ex.check_feasible();
            aware.records.push_back({static_cast<std::uint32_t>(i), 0, ex.config, ex.epsilon,
                                     ex.final_objective});
            aware.best_per_reference.push_back(static_cast<std::uint32_t>(i));
        }
        std::cout << "mcmc-aware attacks done (t+" << elapsed() << "s)\n" << std::flush;
        const RobustnessReport aware_defended = robustness_report(
            desk.model, desk.classifier, desk.refs, aware, paper_defence(500), eval_seed);
        verdict(10, aware_defended.msssim_mean >= defended.msssim_mean - 0.02,
                "attacking through the defence chain does not beat the defence",
                "aware=" + fmt(aware_defended.msssim_mean) +
                    " plain-skl=" + fmt(defended.msssim_mean));
    }

    // --- criterion 11: byte-level reproducibility ------------------------
    {
        const std::string dir = "acceptance_repro";
        fs::remove_all(dir);
        fs::create_directories(dir);
        {
            std::ofstream cfg(dir + "/exp.cfg");
            cfg << "dataset.per_class = 12\ndataset.classes = 2\ndataset.side = 8\n"
                   "model.latent_dim = 3\nmodel.hidden = 16\ntrain.epochs = 3\n"
                   "train.batch_size = 12\ntrain.learning_rate = 0.002\n"
                   "attack.steps = 6\nattack.restarts = 2\nhmc.steps = 5\nhmc.leapfrog = 3\n"
                   "eval.per_class = 2\nseed = 11\noutput.dir = "
                << dir << "/out\n";
        }
        StageOverrides opts;
        opts.config_path = dir + "/exp.cfg";
        bool ok = cmd_train(opts) == kExitOk && cmd_attack(opts) == kExitOk &&
                  cmd_defend_eval(opts) == kExitOk && cmd_radius_sweep(opts) == kExitOk;
        const auto ckpt = read_all(dir + "/out/model.vaec");
        const auto loss = read_all(dir + "/out/train_loss.csv");
        const auto atk = read_all(dir + "/out/attacks.atk");
        const auto de = read_all(dir + "/out/defend_eval.csv");
        const auto sweep = read_all(dir + "/out/radius_sweep.csv");
        ok = ok && cmd_train(opts) == kExitOk && cmd_attack(opts) == kExitOk &&
             cmd_defend_eval(opts) == kExitOk && cmd_radius_sweep(opts) == kExitOk;
        ok = ok && read_all(dir + "/out/model.vaec") == ckpt &&
             read_all(dir + "/out/train_loss.csv") == loss &&
             read_all(dir + "/out/attacks.atk") == atk &&
             read_all(dir + "/out/defend_eval.csv") == de &&
             read_all(dir + "/out/radius_sweep.csv") == sweep;
        verdict(11, ok,
                "rerunning every stage with the same config and seed reproduces checkpoints "
                "and CSV outputs byte-for-byte");
    }

    std::cout << (g_all_ok ? "ALL CRITERIA PASSED" : "CRITERIA FAILED") << " (t+"
              << elapsed() << "s)\n";
    return g_all_ok ? 0 : 1;
}
