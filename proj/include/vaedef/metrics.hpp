#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vaedef/attack.hpp"
#include "vaedef/classifier.hpp"
#include "vaedef/defence.hpp"
#include "vaedef/tensor.hpp"
#include "vaedef/vae.hpp"

namespace vaedef {

struct SsimConstants {
    double c1 = 0.01 * 0.01;
    double c2 = 0.03 * 0.03;
};

// Mean local SSIM with a Gaussian window (default 11, sigma 1.5). For small
// images the window shrinks to the largest odd size that fits (>= 3), with
// sigma scaled proportionally.
double ssim(const Tensor& x, const Tensor& y, std::size_t image_side,
            std::size_t window_size = 11, SsimConstants constants = {});

// Multi-scale SSIM: contrast-structure terms at every scale, luminance at
// the coarsest, standard exponents renormalized when the level count is
// reduced for small images.
double msssim(const Tensor& x, const Tensor& y, std::size_t image_side,
              std::size_t levels = 5);

// Sum of squared differences per image, averaged over the set when given
// matrices.
double mse(const Tensor& x, const Tensor& y);

struct PairMetrics {
    std::size_t reference_index = 0;
    double msssim_recon = 0.0;   // MSSSIM between reconstructions
    double msssim_input = 0.0;   // MSSSIM between x_ref and x_adv
    double mse_recon = 0.0;
    bool class_match = false;    // prediction preserved
};

struct RobustnessReport {
    std::vector<PairMetrics> pairs;
    double msssim_mean = 0.0;
    double msssim_std = 0.0;
    double adversarial_accuracy = 0.0;
    double mse_mean = 0.0;
    bool defended = false;
    std::size_t hmc_steps = 0;
};

// Proportion of (x_ref, x_adv) pairs whose predicted class is preserved.
// The reference is always classified on the encoder mean; the adversarial
// point uses the defended latent when a defence config is supplied.
double adversarial_accuracy(const VaeModel& model, const LinearClassifier& classifier,
                            const std::vector<std::pair<Tensor, Tensor>>& pairs,
                            const std::optional<HmcConfig>& defence,
                            std::uint64_t seed);

RobustnessReport robustness_report(const VaeModel& model,
                                   const LinearClassifier& classifier,
                                   const Dataset& references,
                                   const AttackArchive& archive,
                                   const std::optional<HmcConfig>& defence,
                                   std::uint64_t seed);

}  // namespace vaedef
