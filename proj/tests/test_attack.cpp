#include <cmath>
#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "vaedef/attack.hpp"
#include "vaedef/dataset.hpp"
#include "vaedef/vae.hpp"

using namespace vaedef;

namespace {

VaeModel trained_fixture() {
    Dataset ds = generate_synthetic(51, 15, 2, 8);
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 15;
    cfg.learning_rate = 2e-3;
    cfg.seed = 9;
    VaeModel m = make_vae(ds.dim(), {16}, 3, 1.0, DecoderFamily::kBernoulli,
                          Objective::kElbo, 6);
    train(m, ds, cfg);
    return m;
}

AttackConfig quick_config(AttackObjective objective, double radius = 0.1) {
    AttackConfig cfg;
    cfg.radius = radius;
    cfg.steps = 12;
    cfg.restarts = 3;
    cfg.objective = objective;
    return cfg;
}

}  // namespace

TEST_CASE("symmetric kl closed form") {
    GaussianParams a, b;
    a.mean = Tensor::vector({0.0});
    a.log_var = Tensor::vector({0.0});
    b = a;
    CHECK(symmetric_kl(a, b) == doctest::Approx(0.0));

    b.mean[0] = 1.0;
    CHECK(symmetric_kl(a, b) == doctest::Approx(1.0));  // 0.5 each direction
    CHECK(symmetric_kl(a, b) == doctest::Approx(symmetric_kl(b, a)));

    a.mean = Tensor::vector({0.3, -0.2});
    a.log_var = Tensor::vector({0.1, -0.4});
    b.mean = Tensor::vector({-0.1, 0.5});
    b.log_var = Tensor::vector({-0.2, 0.3});
    CHECK(symmetric_kl(a, b) ==
          doctest::Approx(kl_diag_gaussians(a, b) + kl_diag_gaussians(b, a)));
    CHECK(symmetric_kl(a, b) > 0.0);
}

TEST_CASE("attack objectives vanish at zero perturbation") {
    VaeModel m = trained_fixture();
    const Tensor x = generate_synthetic(52, 1, 2, 8).image(0);
    Tensor eps({x.size()});
    CHECK(attack_objective(AttackObjective::kSkl, m, nullptr, x, nullptr, eps) ==
          doctest::Approx(0.0));
    CHECK(attack_objective(AttackObjective::kL2Mean, m, nullptr, x, nullptr, eps) ==
          doctest::Approx(0.0));
    CHECK(attack_objective(AttackObjective::kKlForward, m, nullptr, x, nullptr, eps) ==
          doctest::Approx(0.0));
    // self-targeted supervised attack peaks (at 0) for zero perturbation
    CHECK(attack_objective(AttackObjective::kSupervisedKl, m, nullptr, x, &x, eps) ==
          doctest::Approx(0.0));
    Tensor eps2 = eps;
    eps2[0] = 0.05;
    CHECK(attack_objective(AttackObjective::kSupervisedKl, m, nullptr, x, &x, eps2) < 0.0);
    // skl is non-negative and positive once the posterior moves
    CHECK(attack_objective(AttackObjective::kSkl, m, nullptr, x, nullptr, eps2) > 0.0);
}

TEST_CASE("projection clamps to the ball then the box") {
    Tensor x_ref = Tensor::vector({0.5, 0.5, 1.0});
    Tensor eps = Tensor::vector({0.05, 0.5, 0.2});
    const Tensor out = project(eps, 0.2, x_ref, true);
    CHECK(out[0] == doctest::Approx(0.05));  // interior: unchanged
    CHECK(out[1] == doctest::Approx(0.2));   // ball clamp
    CHECK(out[2] == doctest::Approx(0.0));   // boundary pixel: box clamp

    // with the box disabled only the ball applies
    const Tensor loose = project(eps, 0.2, x_ref, false);
    CHECK(loose[2] == doctest::Approx(0.2));
}

TEST_CASE("pgd with a constant encoder keeps the projected initialization") {
    VaeModel m = trained_fixture();
    for (Tensor* t : m.parameters()) std::fill(t->vec().begin(), t->vec().end(), 0.0);
    const Tensor x = generate_synthetic(53, 1, 2, 8).image(0);

    AttackConfig one = quick_config(AttackObjective::kSkl);
    one.steps = 1;
    one.restarts = 1;
    AttackConfig many = one;
    many.steps = 30;
    const AdversarialExample a = pgd_attack(m, nullptr, x, nullptr, one, 77);
    const AdversarialExample b = pgd_attack(m, nullptr, x, nullptr, many, 77);
    CHECK(a.epsilon.vec() == b.epsilon.vec());  // zero gradient: no movement
}

TEST_CASE("pgd improves the objective, stays feasible, and is deterministic") {
    VaeModel m = trained_fixture();
    const Tensor x = generate_synthetic(54, 1, 2, 8).image(0);
    const AttackConfig cfg = quick_config(AttackObjective::kSkl);

    const auto all = pgd_attack_all(m, nullptr, x, nullptr, cfg, 3);
    REQUIRE(all.size() == cfg.restarts);
    for (const auto& ex : all) {
        ex.check_feasible();
        REQUIRE(!ex.objective_trace.empty());
        CHECK(ex.final_objective >= ex.objective_trace.front());
        double linf = 0.0;
        for (double e : ex.epsilon.vec()) linf = std::max(linf, std::abs(e));
        CHECK(linf <= cfg.radius + 1e-9);
        for (double v : ex.x_adv.vec()) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }

    const AdversarialExample best = pgd_attack(m, nullptr, x, nullptr, cfg, 3);
    for (const auto& ex : all) CHECK(best.final_objective >= ex.final_objective);

    const AdversarialExample rerun = pgd_attack(m, nullptr, x, nullptr, cfg, 3);
    CHECK(best.epsilon.vec() == rerun.epsilon.vec());
    CHECK(best.final_objective == rerun.final_objective);
    CHECK(best.restart_index == rerun.restart_index);
}

TEST_CASE("all objective kinds drive a successful pgd run") {
    VaeModel m = trained_fixture();
    Dataset refs = generate_synthetic(55, 2, 2, 8);
    const Tensor x = refs.image(0);
    Tensor x_target;
    for (std::size_t i = 0; i < refs.size(); ++i)
        if (refs.labels[i] != refs.labels[0]) x_target = refs.image(i);

    // classifier on latent means for the classifier-ce objective
    Tensor feats({refs.size(), m.latent_dim});
    for (std::size_t i = 0; i < refs.size(); ++i) {
        const Tensor mu = encode(m, refs.image(i)).mean;
        for (std::size_t j = 0; j < m.latent_dim; ++j) feats.at2(i, j) = mu[j];
    }
    LinearClassifier cls = fit_linear_classifier(feats, refs.labels, {});

    for (AttackObjective kind :
         {AttackObjective::kSkl, AttackObjective::kKlForward, AttackObjective::kKlReverse,
          AttackObjective::kL2Mean, AttackObjective::kClassifierCe,
          AttackObjective::kSupervisedKl}) {
        AttackConfig cfg = quick_config(kind);
        cfg.restarts = 1;
        const AdversarialExample ex = pgd_attack(
            m, kind == AttackObjective::kClassifierCe ? &cls : nullptr, x,
            kind == AttackObjective::kSupervisedKl ? &x_target : nullptr, cfg, 5);
        ex.check_feasible();
        CHECK(std::isfinite(ex.final_objective));
    }

    CHECK_THROWS_AS(attack_objective(AttackObjective::kClassifierCe, m, nullptr, x, nullptr,
                                     Tensor({x.size()})),
                    std::invalid_argument);
    CHECK_THROWS_AS(attack_objective(AttackObjective::kSupervisedKl, m, nullptr, x, nullptr,
                                     Tensor({x.size()})),
                    std::invalid_argument);
}

TEST_CASE("objective names round-trip") {
    for (AttackObjective kind :
         {AttackObjective::kSkl, AttackObjective::kKlForward, AttackObjective::kKlReverse,
          AttackObjective::kL2Mean, AttackObjective::kClassifierCe,
          AttackObjective::kSupervisedKl, AttackObjective::kMcmcAware})
        CHECK(attack_objective_from_string(to_string(kind)) == kind);
    CHECK_THROWS_AS(attack_objective_from_string("nonsense"), std::invalid_argument);
}

TEST_CASE("pgd approaches the analytic optimum on a near-linear two-pixel toy") {
    // Small weights keep tanh in its linear regime; the l2-mean objective is
    // then a quadratic e' A e maximized over the box at one of its corners.
    VaeModel m = make_vae(2, {2}, 2, 1.0, DecoderFamily::kBernoulli, Objective::kElbo, 1);
    for (Tensor* t : m.parameters()) std::fill(t->vec().begin(), t->vec().end(), 0.0);
    m.encoder_trunk[0].weight.at2(0, 0) = 0.05;
    m.encoder_trunk[0].weight.at2(1, 1) = 0.03;
    m.mean_head.weight.at2(0, 0) = 0.06;
    m.mean_head.weight.at2(1, 1) = -0.04;

    const Tensor x = Tensor::vector({0.5, 0.5});
    AttackConfig cfg;
    cfg.radius = 0.1;
    cfg.steps = 400;
    cfg.step_size = 400.0;  // tiny gradients in the linear regime
    cfg.restarts = 4;
    cfg.objective = AttackObjective::kL2Mean;

    double best_corner = 0.0;
    for (double s0 : {-0.1, 0.1})
        for (double s1 : {-0.1, 0.1}) {
            Tensor eps = Tensor::vector({s0, s1});
            best_corner = std::max(
                best_corner,
                attack_objective(AttackObjective::kL2Mean, m, nullptr, x, nullptr, eps));
        }
    const AdversarialExample ex = pgd_attack(m, nullptr, x, nullptr, cfg, 13);
    CHECK(ex.final_objective >= 0.95 * best_corner);
}

TEST_CASE("mcmc-aware attack is feasible, deterministic, and runs with T=0") {
    VaeModel m = trained_fixture();
    const Tensor x = generate_synthetic(56, 1, 2, 8).image(0);
    AttackConfig cfg = quick_config(AttackObjective::kMcmcAware);
    cfg.steps = 6;
    cfg.restarts = 2;
    HmcConfig chain;
    chain.steps = 3;
    chain.step_size = 0.1;
    chain.leapfrog_steps = 3;

    const AdversarialExample a = mcmc_aware_attack(m, chain, x, cfg, 19);
    const AdversarialExample b = mcmc_aware_attack(m, chain, x, cfg, 19);
    a.check_feasible();
    CHECK(a.epsilon.vec() == b.epsilon.vec());
    CHECK(std::isfinite(a.final_objective));

    chain.steps = 0;  // defence disabled: reduces to a latent-sample attack
    const AdversarialExample c = mcmc_aware_attack(m, chain, x, cfg, 19);
    c.check_feasible();
    CHECK(std::isfinite(c.final_objective));
}

TEST_CASE("attack archive round-trips bit-exactly") {
    AttackArchive a;
    a.config_hash = 0x1234abcd5678ef01ULL;
    a.data_dim = 4;
    AttackConfig cfg = quick_config(AttackObjective::kSkl, 0.25);
    a.records.push_back({0, 0, cfg, Tensor::vector({0.1, -0.2, 0.0, 0.25}), 1.5});
    a.records.push_back({0, 1, cfg, Tensor::vector({-0.05, 0.2, 0.1, 0.0}), 2.25});
    a.best_per_reference = {1};

    const std::string path = "attack_test_archive.bin";
    save_attack_archive(a, path);

    std::ifstream in(path, std::ios::binary);
    char magic[4];
    in.read(magic, 4);
    CHECK(std::string(magic, 4) == "ATK1");
    in.close();

    const AttackArchive b = load_attack_archive(path);
    CHECK(b.config_hash == a.config_hash);
    CHECK(b.data_dim == a.data_dim);
    REQUIRE(b.records.size() == 2);
    CHECK(b.records[1].epsilon.vec() == a.records[1].epsilon.vec());
    CHECK(b.records[1].final_objective == a.records[1].final_objective);
    CHECK(b.records[1].config.radius == cfg.radius);
    CHECK(b.records[1].config.objective == cfg.objective);
    CHECK(b.best_per_reference == a.best_per_reference);
    std::remove(path.c_str());
}
