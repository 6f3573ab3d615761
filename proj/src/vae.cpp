#include "vaedef/vae.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>

namespace vaedef {

namespace {

constexpr double kHalfLog2Pi = 0.9189385332046727;

Tensor as_row(const Tensor& x) {
    return Tensor({1, x.size()}, x.vec());
}

Tensor as_flat(const Tensor& x) {
    return Tensor({x.size()}, x.vec());
}

double logsumexp(const std::vector<double>& v) {
    double m = v[0];
    for (double x : v) m = std::max(m, x);
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

}  // namespace

std::vector<Tensor*> VaeModel::parameters() {
    std::vector<Tensor*> out;
    auto push = [&](DenseLayer& l) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    };
    for (auto& l : encoder_trunk) push(l);
    push(mean_head);
    push(logvar_head);
    for (auto& l : decoder) push(l);
    return out;
}

std::vector<const Tensor*> VaeModel::parameters() const {
    auto mutable_this = const_cast<VaeModel*>(this);
    std::vector<const Tensor*> out;
    for (auto* t : mutable_this->parameters()) out.push_back(t);
    return out;
}

VaeModel make_vae(std::size_t data_dim, const std::vector<std::size_t>& hidden,
                  std::size_t latent_dim, double beta, DecoderFamily family,
                  Objective objective, std::uint64_t seed) {
    if (beta <= 0) throw std::invalid_argument("make_vae: beta must be > 0");
    VaeModel m;
    m.latent_dim = latent_dim;
    m.beta = beta;
    m.family = family;
    m.objective = objective;

    RngStream rng = RngStream::derived(seed, "init", 0);
    auto dense = [&](std::size_t in, std::size_t out) {
        DenseLayer l;
        l.weight = Tensor({in, out});
        l.bias = Tensor({out});
        const double s = std::sqrt(2.0 / static_cast<double>(in + out));
        for (auto& w : l.weight.vec()) w = s * rng.normal();
        return l;
    };

    std::size_t prev = data_dim;
    for (std::size_t h : hidden) {
        m.encoder_trunk.push_back(dense(prev, h));
        prev = h;
    }
    if (m.encoder_trunk.empty()) m.encoder_trunk.push_back(dense(data_dim, data_dim));
    m.mean_head = dense(prev, latent_dim);
    m.logvar_head = dense(prev, latent_dim);

    prev = latent_dim;
    for (auto it = hidden.rbegin(); it != hidden.rend(); ++it) {
        m.decoder.push_back(dense(prev, *it));
        prev = *it;
    }
    m.decoder.push_back(dense(prev, data_dim));
    return m;
}

namespace graphops {

namespace {

ad::NodeId trunk_forward(ad::Graph& g, const std::vector<DenseLayer>& layers,
                         ad::NodeId x, bool last_linear) {
    ad::NodeId h = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        ad::NodeId w = g.constant(layers[i].weight);
        ad::NodeId b = g.constant(layers[i].bias);
        h = g.bias_add(g.matmul(h, w), b);
        if (!(last_linear && i + 1 == layers.size())) h = g.tanh(h);
    }
    return h;
}

}  // namespace

EncoderNodes encoder(ad::Graph& g, const VaeModel& model, ad::NodeId x) {
    ad::NodeId h = trunk_forward(g, model.encoder_trunk, x, false);
    EncoderNodes out;
    out.mean = g.bias_add(g.matmul(h, g.constant(model.mean_head.weight)),
                          g.constant(model.mean_head.bias));
    out.log_var = g.bias_add(g.matmul(h, g.constant(model.logvar_head.weight)),
                             g.constant(model.logvar_head.bias));
    return out;
}

ad::NodeId decoder(ad::Graph& g, const VaeModel& model, ad::NodeId z) {
    ad::NodeId out = trunk_forward(g, model.decoder, z, true);
    if (model.family == DecoderFamily::kBernoulli)
        out = g.clamp(g.sigmoid(out), kBernoulliProbFloor, 1.0 - kBernoulliProbFloor);
    return out;
}

ad::NodeId log_likelihood_node(ad::Graph& g, const VaeModel& model, ad::NodeId dec_out,
                               ad::NodeId x) {
    if (model.family == DecoderFamily::kBernoulli) {
        ad::NodeId ones = g.constant(Tensor::full(g.value(x).shape(), 1.0));
        ad::NodeId t1 = g.mul(x, g.log(dec_out));
        ad::NodeId t2 = g.mul(g.sub(ones, x), g.log(g.sub(ones, dec_out)));
        return g.sum(g.add(t1, t2));
    }
    // Gaussian with unit variance: -1/2 ||x - mean||^2 - D/2 log 2pi per row
    const double c = kHalfLog2Pi * static_cast<double>(g.value(x).size());
    ad::NodeId sq = g.sum(g.square(g.sub(x, dec_out)));
    return g.add_scalar(g.scale(sq, -0.5), -c);
}

}  // namespace graphops

GaussianParams encode(const VaeModel& model, const Tensor& x) {
    if (x.size() != model.data_dim())
        throw std::invalid_argument("encode: input dimension mismatch");
    ad::Graph g;
    ad::NodeId xin = g.constant(as_row(x));
    auto enc = graphops::encoder(g, model, xin);
    return {as_flat(g.value(enc.mean)), as_flat(g.value(enc.log_var))};
}

Tensor reparameterize(const GaussianParams& params, const Tensor& noise) {
    if (noise.size() != params.mean.size())
        throw std::invalid_argument("reparameterize: noise dimension mismatch");
    Tensor z(params.mean.shape());
    for (std::size_t i = 0; i < z.size(); ++i)
        z[i] = params.mean[i] + std::exp(0.5 * params.log_var[i]) * noise[i];
    return z;
}

Tensor decode(const VaeModel& model, const Tensor& z) {
    if (z.size() != model.latent_dim)
        throw std::invalid_argument("decode: latent dimension mismatch");
    ad::Graph g;
    ad::NodeId zin = g.constant(as_row(z));
    ad::NodeId out = graphops::decoder(g, model, zin);
    return as_flat(g.value(out));
}

double log_likelihood(const VaeModel& model, const Tensor& x, const Tensor& z) {
    Tensor out = decode(model, z);
    if (model.family == DecoderFamily::kBernoulli) {
        double ll = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double p = std::clamp(out[i], kBernoulliProbFloor, 1.0 - kBernoulliProbFloor);
            ll += x[i] * std::log(p) + (1.0 - x[i]) * std::log(1.0 - p);
        }
        return ll;
    }
    return ad::gaussian_log_density(x, out, Tensor::zeros(x.shape()));
}

double kl_to_standard_normal(const GaussianParams& params) {
    if (!params.mean.same_shape(params.log_var))
        throw std::invalid_argument("kl_to_standard_normal: shape mismatch");
    double kl = 0.0;
    for (std::size_t i = 0; i < params.mean.size(); ++i)
        kl += 0.5 * (std::exp(params.log_var[i]) + params.mean[i] * params.mean[i] - 1.0 -
                     params.log_var[i]);
    return kl;
}

double elbo(const VaeModel& model, const Tensor& x, const Tensor& noise) {
    GaussianParams q = encode(model, x);
    Tensor z = reparameterize(q, noise);
    return log_likelihood(model, x, z) - model.beta * kl_to_standard_normal(q);
}

double tc_penalty(const std::vector<GaussianParams>& batch_params,
                  const std::vector<Tensor>& batch_z, std::size_t dataset_size) {
    const std::size_t m = batch_params.size();
    if (m < 2) throw std::invalid_argument("tc_penalty: need a batch of >= 2 samples");
    if (batch_z.size() != m) throw std::invalid_argument("tc_penalty: z/params mismatch");
    const std::size_t d = batch_params[0].mean.size();
    if (d == 1) return 0.0;  // single factor, TC vanishes

    // Stratified minibatch weights: the member that generated z_i carries mass
    // 1/N, the remaining M-1 members share the rest of the dataset. This keeps
    // the estimate unbiased-in-q for identical posteriors (plain 1/(N*M)
    // weighting would inflate TC by (d-1)*log N there).
    const double n = static_cast<double>(dataset_size);
    const double log_w_self = -std::log(n);
    const double log_w_other =
        std::log(n - 1.0) - std::log(n) - std::log(static_cast<double>(m - 1));
    double tc = 0.0;
    std::vector<double> joint(m);
    std::vector<std::vector<double>> per_dim(d, std::vector<double>(m));
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            const double log_w = (j == i) ? log_w_self : log_w_other;
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double lv = batch_params[j].log_var[k];
                const double diff = batch_z[i][k] - batch_params[j].mean[k];
                const double ld = -kHalfLog2Pi - 0.5 * lv -
                                  diff * diff / (2.0 * std::exp(lv));
                per_dim[k][j] = log_w + ld;
                s += ld;
            }
            joint[j] = log_w + s;
        }
        double log_qz = logsumexp(joint);
        double log_prod = 0.0;
        for (std::size_t k = 0; k < d; ++k) log_prod += logsumexp(per_dim[k]);
        tc += log_qz - log_prod;
    }
    return tc / static_cast<double>(m);
}

double iwae_nll(const VaeModel& model, const Tensor& x, std::size_t k, std::uint64_t seed) {
    if (k < 1) throw std::invalid_argument("iwae_nll: k must be >= 1");
    GaussianParams q = encode(model, x);
    RngStream rng = RngStream::derived(seed, "iwae", 0);
    Tensor zeros({model.latent_dim});
    std::vector<double> logw(k);
    for (std::size_t i = 0; i < k; ++i) {
        Tensor noise({model.latent_dim});
        for (auto& n : noise.vec()) n = rng.normal();
        Tensor z = reparameterize(q, noise);
        const double lp = ad::gaussian_log_density(z, zeros, zeros);
        const double lq = ad::gaussian_log_density(z, q.mean, q.log_var);
        logw[i] = log_likelihood(model, x, z) + lp - lq;
    }
    return -(logsumexp(logw) - std::log(static_cast<double>(k)));
}

// ----------------------------------------------------------------------
// Training

namespace {

// Reusable training tape for one batch size. Parameters are differentiable
// inputs; x and noise are constants refreshed every step.
struct TrainTape {
    ad::Graph g;
    ad::NodeId x, noise;
    std::vector<ad::NodeId> params;
    ad::NodeId loss;
    std::size_t rows;
};

ad::NodeId tape_dense(ad::Graph& g, TrainTape& t, const DenseLayer& l, ad::NodeId in) {
    ad::NodeId w = g.input(l.weight, true);
    ad::NodeId b = g.input(l.bias, true);
    t.params.push_back(w);
    t.params.push_back(b);
    return g.bias_add(g.matmul(in, w), b);
}

// Selector row (1 x m) picking sample i; used to slice batch rows on the
// tape without a dedicated slicing primitive.
ad::NodeId selector(ad::Graph& g, std::size_t m, std::size_t i) {
    Tensor e({1, m});
    e[i] = 1.0;
    return g.constant(std::move(e));
}

TrainTape build_train_tape(const VaeModel& model, std::size_t rows,
                           std::size_t dataset_size) {
    TrainTape t;
    t.rows = rows;
    ad::Graph& g = t.g;
    const std::size_t d_data = model.data_dim();
    const std::size_t d_lat = model.latent_dim;

    t.x = g.constant(Tensor({rows, d_data}));
    t.noise = g.constant(Tensor({rows, d_lat}));

    ad::NodeId h = t.x;
    for (const auto& l : model.encoder_trunk) h = g.tanh(tape_dense(g, t, l, h));
    ad::NodeId mu = tape_dense(g, t, model.mean_head, h);
    ad::NodeId lv = tape_dense(g, t, model.logvar_head, h);

    ad::NodeId std_dev = g.exp(g.scale(lv, 0.5));
    ad::NodeId z = g.add(mu, g.mul(std_dev, t.noise));

    ad::NodeId dec = z;
    for (std::size_t i = 0; i < model.decoder.size(); ++i) {
        dec = tape_dense(g, t, model.decoder[i], dec);
        if (i + 1 < model.decoder.size()) dec = g.tanh(dec);
    }
    ad::NodeId ll;
    if (model.family == DecoderFamily::kBernoulli) {
        ad::NodeId p = g.clamp(g.sigmoid(dec), kBernoulliProbFloor, 1.0 - kBernoulliProbFloor);
        ad::NodeId ones = g.constant(Tensor::full({rows, d_data}, 1.0));
        ll = g.sum(g.add(g.mul(t.x, g.log(p)),
                         g.mul(g.sub(ones, t.x), g.log(g.sub(ones, p)))));
    } else {
        const double c = kHalfLog2Pi * static_cast<double>(rows * d_data);
        ll = g.add_scalar(g.scale(g.sum(g.square(g.sub(t.x, dec))), -0.5), -c);
    }

    // KL(q || N(0,I)) summed over the batch
    ad::NodeId ones_lat = g.constant(Tensor::full({rows, d_lat}, 1.0));
    ad::NodeId kl = g.scale(
        g.sum(g.sub(g.add(g.exp(lv), g.square(mu)), g.add(ones_lat, lv))), 0.5);

    const double inv_rows = 1.0 / static_cast<double>(rows);
    if (model.objective == Objective::kElbo) {
        t.loss = g.scale(g.add(g.scale(ll, -1.0), g.scale(kl, model.beta)), inv_rows);
        return t;
    }

    // beta-TCVAE: beta=1 ELBO loss plus (beta-1) * minibatch-weighted TC.
    ad::NodeId base = g.scale(g.add(g.scale(ll, -1.0), kl), inv_rows);
    if (model.latent_dim == 1 || rows < 2) {
        t.loss = base;
        return t;
    }
    const double n = static_cast<double>(dataset_size);
    const double w_self = 1.0 / n;
    const double w_other = (n - 1.0) / (n * static_cast<double>(rows - 1));
    std::vector<ad::NodeId> sel(rows);
    for (std::size_t i = 0; i < rows; ++i) sel[i] = selector(g, rows, i);
    std::vector<ad::NodeId> z_rows(rows), mu_rows(rows), lv_rows(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        z_rows[i] = g.matmul(sel[i], z);
        mu_rows[i] = g.matmul(sel[i], mu);
        lv_rows[i] = g.matmul(sel[i], lv);
    }
    ad::NodeId tc_acc = g.constant(Tensor::scalar(0.0));
    for (std::size_t i = 0; i < rows; ++i) {
        ad::NodeId joint_sum = g.constant(Tensor::scalar(0.0));
        ad::NodeId dim_sum = g.constant(Tensor({1, d_lat}));
        for (std::size_t j = 0; j < rows; ++j) {
            // per-dim log density of z_i under q(.|x_j)
            ad::NodeId diff2 = g.square(g.sub(z_rows[i], mu_rows[j]));
            ad::NodeId quad = g.scale(g.mul(diff2, g.exp(g.scale(lv_rows[j], -1.0))), 0.5);
            ad::NodeId ld = g.scale(
                g.add_scalar(g.add(quad, g.scale(lv_rows[j], 0.5)), kHalfLog2Pi), -1.0);
            const double w = (j == i) ? w_self : w_other;
            joint_sum = g.add(joint_sum, g.scale(g.exp(g.sum(ld)), w));
            dim_sum = g.add(dim_sum, g.scale(g.exp(ld), w));
        }
        ad::NodeId log_qz = g.log(joint_sum);
        ad::NodeId log_prod = g.sum(g.log(dim_sum));
        tc_acc = g.add(tc_acc, g.sub(log_qz, log_prod));
    }
    ad::NodeId tc = g.scale(tc_acc, 1.0 / static_cast<double>(rows));
    t.loss = g.add(base, g.scale(tc, model.beta - 1.0));
    return t;
}

struct AdamState {
    std::vector<Tensor> m, v;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::size_t step = 0;

    void init(const std::vector<Tensor*>& params) {
        for (auto* p : params) {
            m.emplace_back(p->shape());
            v.emplace_back(p->shape());
        }
    }

    void update(std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
                double lr) {
        ++step;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor& p = *params[i];
            const Tensor& gr = *grads[i];
            for (std::size_t j = 0; j < p.size(); ++j) {
                m[i][j] = beta1 * m[i][j] + (1.0 - beta1) * gr[j];
                v[i][j] = beta2 * v[i][j] + (1.0 - beta2) * gr[j] * gr[j];
                p[j] -= lr * (m[i][j] / bc1) / (std::sqrt(v[i][j] / bc2) + eps);
            }
        }
    }
};

}  // namespace

std::vector<double> train(VaeModel& model, const Dataset& data, const TrainConfig& config) {
    if (data.dim() != model.data_dim())
        throw std::invalid_argument("train: dataset dimension does not match model");
    std::vector<double> curve;
    if (config.epochs == 0) return curve;

    auto params = model.parameters();
    AdamState adam;
    adam.init(params);
    double lr = config.learning_rate;

    // one tape per distinct batch size (full batches + possible remainder)
    std::vector<std::unique_ptr<TrainTape>> tapes;
    auto tape_for = [&](std::size_t rows) -> TrainTape& {
        for (auto& t : tapes)
            if (t->rows == rows) return *t;
        tapes.push_back(std::make_unique<TrainTape>(
            build_train_tape(model, rows, data.size())));
        return *tapes.back();
    };

    double best_loss = 1e300;
    std::size_t stall = 0;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        RngStream noise_rng = RngStream::derived(config.seed, "train-noise", epoch);
        auto batches = batch_indices(data.size(), config.batch_size, config.seed, epoch);
        double epoch_loss = 0.0;
        std::size_t seen = 0;
        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            const auto& rows = batches[bi];
            TrainTape& t = tape_for(rows.size());
            Tensor xb = gather_rows(data.images, rows);
            Tensor nb({rows.size(), model.latent_dim});
            for (auto& v : nb.vec()) v = noise_rng.normal();
            t.g.set_input(t.x, xb);
            t.g.set_input(t.noise, nb);
            for (std::size_t pi = 0; pi < params.size(); ++pi)
                t.g.set_input(t.params[pi], *params[pi]);
            t.g.forward();
            const double loss = t.g.value(t.loss)[0];
            if (!std::isfinite(loss))
                throw std::runtime_error("train: non-finite loss at epoch " +
                                         std::to_string(epoch) + ", batch " +
                                         std::to_string(bi));
            t.g.backward_scalar(t.loss);
            std::vector<const Tensor*> grads;
            grads.reserve(params.size());
            for (auto id : t.params) grads.push_back(&t.g.grad(id));
            adam.update(params, grads, lr);
            epoch_loss += loss * static_cast<double>(rows.size());
            seen += rows.size();
        }
        epoch_loss /= static_cast<double>(seen);
        curve.push_back(epoch_loss);
        if (epoch_loss < best_loss - 1e-9) {
            best_loss = epoch_loss;
            stall = 0;
        } else if (++stall >= config.lr_decay_patience) {
            lr *= 0.5;
            stall = 0;
        }
    }
    return curve;
}

// ----------------------------------------------------------------------
// Checkpoint I/O. Layout (little-endian):
//   "VAEC" | version u32 | latent_dim u32 | beta f64 | family u32 |
//   layer_count u32 | per layer: rows u32, cols u32, weights f64[rows*cols],
//   biases f64[cols]
// Layer order: encoder trunk, mean head, log-var head, decoder.

namespace {

void write_u32(std::ostream& o, std::uint32_t v) {
    o.write(reinterpret_cast<const char*>(&v), 4);
}
void write_f64(std::ostream& o, double v) {
    o.write(reinterpret_cast<const char*>(&v), 8);
}
std::uint32_t read_u32(std::istream& i) {
    std::uint32_t v;
    i.read(reinterpret_cast<char*>(&v), 4);
    if (!i) throw std::runtime_error("truncated checkpoint");
    return v;
}
double read_f64(std::istream& i) {
    double v;
    i.read(reinterpret_cast<char*>(&v), 8);
    if (!i) throw std::runtime_error("truncated checkpoint");
    return v;
}

void write_layer(std::ostream& o, const DenseLayer& l) {
    write_u32(o, static_cast<std::uint32_t>(l.weight.dim(0)));
    write_u32(o, static_cast<std::uint32_t>(l.weight.dim(1)));
    for (double v : l.weight.vec()) write_f64(o, v);
    for (double v : l.bias.vec()) write_f64(o, v);
}

DenseLayer read_layer(std::istream& i) {
    const std::size_t rows = read_u32(i);
    const std::size_t cols = read_u32(i);
    DenseLayer l;
    l.weight = Tensor({rows, cols});
    l.bias = Tensor({cols});
    for (auto& v : l.weight.vec()) v = read_f64(i);
    for (auto& v : l.bias.vec()) v = read_f64(i);
    return l;
}

}  // namespace

void save_checkpoint(const VaeModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path);
    out.write("VAEC", 4);
    write_u32(out, 1);
    write_u32(out, static_cast<std::uint32_t>(model.latent_dim));
    write_f64(out, model.beta);
    write_u32(out, model.family == DecoderFamily::kBernoulli ? 0u : 1u);
    const std::uint32_t n_layers = static_cast<std::uint32_t>(
        model.encoder_trunk.size() + 2 + model.decoder.size());
    write_u32(out, n_layers);
    for (const auto& l : model.encoder_trunk) write_layer(out, l);
    write_layer(out, model.mean_head);
    write_layer(out, model.logvar_head);
    for (const auto& l : model.decoder) write_layer(out, l);
}

VaeModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "VAEC", 4) != 0)
        throw std::runtime_error("bad checkpoint magic in " + path);
    const std::uint32_t version = read_u32(in);
    if (version != 1) throw std::runtime_error("unsupported checkpoint version");
    VaeModel m;
    m.latent_dim = read_u32(in);
    m.beta = read_f64(in);
    m.family = read_u32(in) == 0 ? DecoderFamily::kBernoulli : DecoderFamily::kGaussianFixedVar;
    const std::uint32_t n_layers = read_u32(in);
    std::vector<DenseLayer> layers;
    for (std::uint32_t i = 0; i < n_layers; ++i) layers.push_back(read_layer(in));

    // The mean and log-var heads are the unique adjacent pair of
    // same-shaped layers with latent_dim outputs followed by a layer
    // consuming latent_dim.
    std::size_t head = layers.size();
    for (std::size_t i = 0; i + 2 < layers.size(); ++i) {
        if (layers[i].weight.dim(1) == m.latent_dim &&
            layers[i + 1].weight.shape() == layers[i].weight.shape() &&
            layers[i + 2].weight.dim(0) == m.latent_dim) {
            head = i;
            break;
        }
    }
    if (head + 2 >= layers.size())
        throw std::runtime_error("checkpoint layer layout not recognized");
    for (std::size_t i = 0; i < head; ++i) m.encoder_trunk.push_back(std::move(layers[i]));
    m.mean_head = std::move(layers[head]);
    m.logvar_head = std::move(layers[head + 1]);
    for (std::size_t i = head + 2; i < layers.size(); ++i)
        m.decoder.push_back(std::move(layers[i]));
    return m;
}

}  // namespace vaedef
