#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "doctest.h"
#include "vaedef/autodiff.hpp"
#include "vaedef/dataset.hpp"
#include "vaedef/vae.hpp"

using namespace vaedef;

namespace {

VaeModel small_model(std::size_t data_dim = 16, std::size_t latent = 3, double beta = 1.0,
                     DecoderFamily family = DecoderFamily::kBernoulli,
                     std::uint64_t seed = 5) {
    return make_vae(data_dim, {12, 8}, latent, beta, family, Objective::kElbo, seed);
}

void zero_all(VaeModel& m) {
    for (Tensor* t : m.parameters())
        std::fill(t->vec().begin(), t->vec().end(), 0.0);
}

Tensor random_image(std::size_t d, std::uint64_t seed) {
    RngStream rng(seed);
    Tensor x({d});
    for (auto& v : x.vec()) v = rng.uniform();
    return x;
}

}  // namespace

TEST_CASE("encode reduces to the head bias for a zero-weight encoder") {
    VaeModel m = small_model();
    zero_all(m);
    m.mean_head.bias = Tensor::vector({0.3, -0.7, 1.5});
    const GaussianParams p = encode(m, random_image(16, 1));
    CHECK(p.mean[0] == doctest::Approx(0.3));
    CHECK(p.mean[1] == doctest::Approx(-0.7));
    CHECK(p.mean[2] == doctest::Approx(1.5));
    CHECK(p.log_var[0] == doctest::Approx(0.0));
}

TEST_CASE("encode is deterministic and differentiable against finite differences") {
    VaeModel m = small_model();
    const Tensor x = random_image(16, 2);
    const GaussianParams a = encode(m, x);
    const GaussianParams b = encode(m, x);
    CHECK(a.mean.vec() == b.mean.vec());
    CHECK(a.log_var.vec() == b.log_var.vec());

    // d mean_0 / d x against the central-difference oracle
    auto f = [&](const Tensor& point) { return encode(m, point).mean[0]; };
    const Tensor num = ad::numerical_gradient(f, x);

    ad::Graph g;
    const ad::NodeId xin = g.input(Tensor({1, 16}, x.vec()));
    const auto enc = graphops::encoder(g, m, xin);
    Tensor seed({1, m.latent_dim});
    seed[0] = 1.0;
    g.forward();
    g.backward(enc.mean, seed);
    const Tensor& grad = g.grad(xin);
    for (std::size_t i = 0; i < 16; ++i)
        CHECK(grad[i] == doctest::Approx(num[i]).epsilon(1e-6));
}

TEST_CASE("reparameterize matches its closed form and sampling moments") {
    GaussianParams p;
    p.mean = Tensor::vector({1.0, -2.0});
    p.log_var = Tensor::vector({0.0, std::log(4.0)});

    Tensor zero({2});
    const Tensor z0 = reparameterize(p, zero);
    CHECK(z0[0] == doctest::Approx(1.0));
    CHECK(z0[1] == doctest::Approx(-2.0));

    const Tensor n = Tensor::vector({0.5, -0.25});
    const Tensor z1 = reparameterize(p, n);
    CHECK(z1[0] == doctest::Approx(1.5));           // unit variance: mean + n
    CHECK(z1[1] == doctest::Approx(-2.0 - 0.5));    // std 2

    RngStream rng(9);
    double s1 = 0.0, s2 = 0.0;
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) {
        Tensor noise({2});
        noise[0] = rng.normal();
        noise[1] = rng.normal();
        const double v = reparameterize(p, noise)[1];
        s1 += v;
        s2 += v * v;
    }
    const double mean = s1 / draws;
    const double var = s2 / draws - mean * mean;
    CHECK(var == doctest::Approx(4.0).epsilon(0.03));
}

TEST_CASE("decode saturates to sigmoid(bias) for a zero-weight bernoulli decoder") {
    VaeModel m = small_model();
    zero_all(m);
    for (auto& b : m.decoder.back().bias.vec()) b = 1.2;
    Tensor z({3});
    const Tensor out = decode(m, z);
    const double expect = 1.0 / (1.0 + std::exp(-1.2));
    for (double v : out.vec()) CHECK(v == doctest::Approx(expect));
    CHECK(decode(m, z).vec() == out.vec());
}

TEST_CASE("log likelihood closed forms") {
    // single-pixel model with p = sigmoid(0) = 0.5
    VaeModel m = make_vae(1, {4}, 2, 1.0, DecoderFamily::kBernoulli, Objective::kElbo, 3);
    zero_all(m);
    Tensor z({2});
    const Tensor x1 = Tensor::vector({1.0});
    CHECK(log_likelihood(m, x1, z) == doctest::Approx(std::log(0.5)));

    // binary x predicted exactly (up to the probability clamp)
    VaeModel big = small_model();
    zero_all(big);
    Tensor xb({16});
    for (std::size_t i = 0; i < 16; ++i) xb[i] = (i % 2 == 0) ? 1.0 : 0.0;
    for (std::size_t i = 0; i < 16; ++i)
        big.decoder.back().bias[i] = (i % 2 == 0) ? 50.0 : -50.0;  // saturate sigmoid
    Tensor z3({3});
    CHECK(log_likelihood(big, xb, z3) == doctest::Approx(0.0).epsilon(1e-5));

    // gaussian family at the mean
    VaeModel gm = small_model(16, 3, 1.0, DecoderFamily::kGaussianFixedVar);
    zero_all(gm);
    Tensor x0({16});
    CHECK(log_likelihood(gm, x0, z3) ==
          doctest::Approx(-8.0 * std::log(2.0 * std::numbers::pi)));
}

TEST_CASE("kl to the standard normal matches closed forms") {
    GaussianParams p;
    p.mean = Tensor::vector({0.0});
    p.log_var = Tensor::vector({0.0});
    CHECK(kl_to_standard_normal(p) == doctest::Approx(0.0));

    p.mean[0] = 1.0;
    CHECK(kl_to_standard_normal(p) == doctest::Approx(0.5));

    p.mean[0] = 0.0;
    p.log_var[0] = std::log(4.0);
    CHECK(kl_to_standard_normal(p) == doctest::Approx(0.5 * (4.0 - 1.0 - std::log(4.0))));

    RngStream rng(4);
    for (int i = 0; i < 50; ++i) {
        GaussianParams q;
        q.mean = Tensor::vector({rng.normal(), rng.normal()});
        q.log_var = Tensor::vector({rng.normal(), rng.normal()});
        CHECK(kl_to_standard_normal(q) >= 0.0);
    }
}

TEST_CASE("elbo composes its parts and is linear in beta through the KL term") {
    VaeModel m = small_model();
    const Tensor x = random_image(16, 6);
    Tensor noise({3});
    RngStream rng(7);
    for (auto& v : noise.vec()) v = rng.normal();

    const GaussianParams q = encode(m, x);
    const Tensor z = reparameterize(q, noise);
    const double ll = log_likelihood(m, x, z);
    const double kl = kl_to_standard_normal(q);
    CHECK(elbo(m, x, noise) == doctest::Approx(ll - kl));

    m.beta = 2.0;
    CHECK(elbo(m, x, noise) == doctest::Approx(ll - 2.0 * kl));
}

TEST_CASE("tc penalty degenerate and analytic cases") {
    // a single latent factor has zero total correlation by definition
    std::vector<GaussianParams> batch1;
    std::vector<Tensor> z1;
    for (int i = 0; i < 4; ++i) {
        GaussianParams p;
        p.mean = Tensor::vector({0.1 * i});
        p.log_var = Tensor::vector({0.0});
        batch1.push_back(p);
        z1.push_back(Tensor::vector({0.1 * i}));
    }
    CHECK(tc_penalty(batch1, z1, 100) == doctest::Approx(0.0));

    // batches of one are rejected
    batch1.resize(1);
    z1.resize(1);
    CHECK_THROWS_AS(tc_penalty(batch1, z1, 100), std::invalid_argument);

    // identical factorized posteriors: estimate near zero
    std::vector<GaussianParams> same;
    std::vector<Tensor> zs;
    RngStream rng(12);
    for (int i = 0; i < 64; ++i) {
        GaussianParams p;
        p.mean = Tensor::vector({0.0, 0.0});
        p.log_var = Tensor::vector({0.0, 0.0});
        same.push_back(p);
        zs.push_back(Tensor::vector({rng.normal(), rng.normal()}));
    }
    CHECK(std::abs(tc_penalty(same, zs, 64)) < 0.35);

    // mirrored means create correlated aggregate dimensions: estimate > 0
    std::vector<GaussianParams> corr;
    std::vector<Tensor> zc;
    for (int i = 0; i < 64; ++i) {
        const double s = (i % 2 == 0) ? 3.0 : -3.0;
        GaussianParams p;
        p.mean = Tensor::vector({s, s});
        p.log_var = Tensor::vector({std::log(0.05), std::log(0.05)});
        corr.push_back(p);
        Tensor z({2});
        z[0] = s + 0.2 * rng.normal();
        z[1] = s + 0.2 * rng.normal();
        zc.push_back(z);
    }
    CHECK(tc_penalty(corr, zc, 64) > 0.0);
}

TEST_CASE("training reduces the loss and is bit-reproducible") {
    Dataset ds = generate_synthetic(21, 25, 2, 8);
    TrainConfig cfg;
    cfg.epochs = 8;
    cfg.batch_size = 16;
    cfg.learning_rate = 2e-3;
    cfg.seed = 17;

    VaeModel m1 = make_vae(ds.dim(), {24, 16}, 4, 1.0, DecoderFamily::kBernoulli,
                           Objective::kElbo, 2);
    VaeModel m2 = make_vae(ds.dim(), {24, 16}, 4, 1.0, DecoderFamily::kBernoulli,
                           Objective::kElbo, 2);
    const std::vector<double> loss1 = train(m1, ds, cfg);
    const std::vector<double> loss2 = train(m2, ds, cfg);

    REQUIRE(loss1.size() == cfg.epochs);
    CHECK(loss1.back() < loss1.front());
    CHECK(loss1 == loss2);
    auto p1 = m1.parameters();
    auto p2 = m2.parameters();
    for (std::size_t i = 0; i < p1.size(); ++i) CHECK(p1[i]->vec() == p2[i]->vec());
}

TEST_CASE("tcvae training runs and stays finite") {
    Dataset ds = generate_synthetic(22, 20, 2, 8);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 10;
    cfg.learning_rate = 1e-3;
    cfg.seed = 5;
    VaeModel m = make_vae(ds.dim(), {16}, 3, 4.0, DecoderFamily::kBernoulli,
                          Objective::kTcVae, 8);
    const std::vector<double> loss = train(m, ds, cfg);
    for (double l : loss) CHECK(std::isfinite(l));
}

TEST_CASE("iwae bound tightens with more importance samples") {
    Dataset ds = generate_synthetic(23, 20, 2, 8);
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.batch_size = 16;
    cfg.learning_rate = 2e-3;
    cfg.seed = 3;
    VaeModel m = make_vae(ds.dim(), {24, 16}, 4, 1.0, DecoderFamily::kBernoulli,
                          Objective::kElbo, 2);
    train(m, ds, cfg);

    double mean_k1 = 0.0, mean_k10 = 0.0, mean_k100 = 0.0, mean_neg_elbo = 0.0;
    const std::size_t count = 50;
    RngStream noise_rng(31);
    for (std::size_t i = 0; i < count; ++i) {
        const Tensor x = ds.image(i % ds.size());
        mean_k1 += iwae_nll(m, x, 1, 100 + i);
        mean_k10 += iwae_nll(m, x, 10, 200 + i);
        mean_k100 += iwae_nll(m, x, 100, 300 + i);
        Tensor noise({m.latent_dim});
        for (auto& v : noise.vec()) v = noise_rng.normal();
        mean_neg_elbo += -elbo(m, x, noise);
    }
    mean_k1 /= count;
    mean_k10 /= count;
    mean_k100 /= count;
    mean_neg_elbo /= count;
    CHECK(mean_k10 <= mean_k1 + 0.5);
    CHECK(mean_k100 <= mean_k10 + 0.25);
    CHECK(mean_k100 <= mean_neg_elbo + 0.5);
}

TEST_CASE("checkpoints round-trip bit-exactly with the documented magic") {
    VaeModel m = small_model(16, 3, 2.5);
    const std::string path = "vae_test_ckpt.bin";
    save_checkpoint(m, path);

    std::ifstream in(path, std::ios::binary);
    char magic[4];
    in.read(magic, 4);
    CHECK(std::string(magic, 4) == "VAEC");
    in.close();

    VaeModel back = load_checkpoint(path);
    CHECK(back.latent_dim == m.latent_dim);
    CHECK(back.beta == m.beta);
    CHECK(back.family == m.family);
    auto pa = m.parameters();
    auto pb = back.parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->vec() == pb[i]->vec());
    std::remove(path.c_str());
}
