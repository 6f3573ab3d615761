#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vaedef/classifier.hpp"
#include "vaedef/defence.hpp"
#include "vaedef/tensor.hpp"
#include "vaedef/vae.hpp"

namespace vaedef {

enum class AttackObjective {
    kSkl,
    kKlForward,
    kKlReverse,
    kL2Mean,
    kClassifierCe,
    kSupervisedKl,
    kMcmcAware,
};

std::string to_string(AttackObjective kind);
AttackObjective attack_objective_from_string(const std::string& s);

struct AttackConfig {
    double radius = 0.1;  // L-inf ball
    std::size_t steps = 50;
    double step_size = 1.0;
    double init_std = 0.2;
    std::size_t restarts = 10;
    AttackObjective objective = AttackObjective::kSkl;
    // Keeps x_adv inside [0,1]; can be disabled to match the paper's
    // unconstrained formulation exactly.
    bool box_constraint = true;

    void validate() const;
};

struct AdversarialExample {
    Tensor x_ref;
    Tensor epsilon;
    Tensor x_adv;
    std::vector<double> objective_trace;
    AttackConfig config;
    double final_objective = 0.0;
    std::size_t restart_index = 0;

    void check_feasible() const;  // ||eps||_inf <= radius + 1e-9, x_adv in [0,1]
};

double kl_diag_gaussians(const GaussianParams& a, const GaussianParams& b);
double symmetric_kl(const GaussianParams& a, const GaussianParams& b);

double attack_objective(AttackObjective kind, const VaeModel& model,
                        const LinearClassifier* classifier, const Tensor& x_ref,
                        const Tensor* x_target, const Tensor& epsilon);

Tensor project(Tensor epsilon, double radius, const Tensor& x_ref, bool box_constraint);

// PGD ascent of the chosen objective; one result per restart.
std::vector<AdversarialExample> pgd_attack_all(const VaeModel& model,
                                               const LinearClassifier* classifier,
                                               const Tensor& x_ref, const Tensor* x_target,
                                               const AttackConfig& config,
                                               std::uint64_t seed);
// Best restart by final objective, ties broken by lowest restart index.
AdversarialExample pgd_attack(const VaeModel& model, const LinearClassifier* classifier,
                              const Tensor& x_ref, const Tensor* x_target,
                              const AttackConfig& config, std::uint64_t seed);

// Appendix-style attack through the defence chain: both latents are drawn
// via encoder + T HMC steps and the squared latent distance is ascended.
// The chain displacement is treated as constant during backprop (the
// gradient flows through the encoder sample only).
std::vector<AdversarialExample> mcmc_aware_attack_all(const VaeModel& model,
                                                      const HmcConfig& hmc_config,
                                                      const Tensor& x_ref,
                                                      const AttackConfig& config,
                                                      std::uint64_t seed);
AdversarialExample mcmc_aware_attack(const VaeModel& model, const HmcConfig& hmc_config,
                                     const Tensor& x_ref, const AttackConfig& config,
                                     std::uint64_t seed);

// Fixed-layout binary archive, magic "ATK1".
struct AttackArchive {
    std::uint64_t config_hash = 0;
    std::size_t data_dim = 0;
    struct Record {
        std::uint32_t reference_index = 0;
        std::uint32_t restart_index = 0;
        AttackConfig config;
        Tensor epsilon;
        double final_objective = 0.0;
    };
    std::vector<Record> records;
    std::vector<std::uint32_t> best_per_reference;  // record index per reference
};

void save_attack_archive(const AttackArchive& a, const std::string& path);
AttackArchive load_attack_archive(const std::string& path);

}  // namespace vaedef
