#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vaedef/autodiff.hpp"
#include "vaedef/dataset.hpp"
#include "vaedef/rng.hpp"
#include "vaedef/tensor.hpp"

namespace vaedef {

struct GaussianParams {
    Tensor mean;
    Tensor log_var;
};

struct DenseLayer {
    Tensor weight;  // (in, out), row-major
    Tensor bias;    // (out)
};

enum class DecoderFamily { kBernoulli, kGaussianFixedVar };
enum class Objective { kElbo, kTcVae };

constexpr double kBernoulliProbFloor = 1e-7;

// Dense Gaussian-encoder VAE. Encoder: trunk of tanh layers then separate
// mean / log-variance heads; decoder mirrors the trunk. Bernoulli decoders
// put a sigmoid on the output layer, Gaussian decoders leave it linear with
// unit observation variance.
struct VaeModel {
    std::vector<DenseLayer> encoder_trunk;
    DenseLayer mean_head;
    DenseLayer logvar_head;
    std::vector<DenseLayer> decoder;  // last layer is the output layer
    std::size_t latent_dim = 0;
    double beta = 1.0;
    DecoderFamily family = DecoderFamily::kBernoulli;
    Objective objective = Objective::kElbo;

    std::size_t data_dim() const { return encoder_trunk.front().weight.dim(0); }
    std::vector<Tensor*> parameters();
    std::vector<const Tensor*> parameters() const;
};

struct TrainConfig {
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    double learning_rate = 5e-4;
    std::size_t lr_decay_patience = 10;
    std::uint64_t seed = 0;
};

VaeModel make_vae(std::size_t data_dim, const std::vector<std::size_t>& hidden,
                  std::size_t latent_dim, double beta, DecoderFamily family,
                  Objective objective, std::uint64_t seed);

GaussianParams encode(const VaeModel& model, const Tensor& x);
Tensor reparameterize(const GaussianParams& params, const Tensor& noise);
Tensor decode(const VaeModel& model, const Tensor& z);
double log_likelihood(const VaeModel& model, const Tensor& x, const Tensor& z);
double kl_to_standard_normal(const GaussianParams& params);
double elbo(const VaeModel& model, const Tensor& x, const Tensor& noise);

// Minibatch-weighted-sampling estimate of the total correlation
// E[log q(z) - sum_j log q(z_j)] over the aggregate posterior.
double tc_penalty(const std::vector<GaussianParams>& batch_params,
                  const std::vector<Tensor>& batch_z, std::size_t dataset_size);

// Importance-sampled negative log-likelihood (log-sum-exp stabilized).
double iwae_nll(const VaeModel& model, const Tensor& x, std::size_t k, std::uint64_t seed);

// Adam training; returns per-epoch mean negative ELBO (+TC penalty for the
// tcvae objective). Deterministic given config.seed.
std::vector<double> train(VaeModel& model, const Dataset& data, const TrainConfig& config);

void save_checkpoint(const VaeModel& model, const std::string& path);
VaeModel load_checkpoint(const std::string& path);

// Tape builders shared with the attack and defence modules. All parameters
// enter as constants; only the provided inputs carry gradients.
namespace graphops {

struct EncoderNodes {
    ad::NodeId mean;     // (rows, latent)
    ad::NodeId log_var;  // (rows, latent)
};

EncoderNodes encoder(ad::Graph& g, const VaeModel& model, ad::NodeId x);
// Bernoulli family: clamped probabilities; Gaussian family: mean.
ad::NodeId decoder(ad::Graph& g, const VaeModel& model, ad::NodeId z);
// log p(x|z) summed over all entries of the batch.
ad::NodeId log_likelihood_node(ad::Graph& g, const VaeModel& model, ad::NodeId dec_out,
                               ad::NodeId x);

}  // namespace graphops

}  // namespace vaedef
