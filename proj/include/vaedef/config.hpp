#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vaedef/attack.hpp"
#include "vaedef/defence.hpp"
#include "vaedef/vae.hpp"

namespace vaedef {

// Raised for malformed or out-of-range configuration; the CLI maps it to
// exit code 1. The message carries file, line, and key where available.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Flat key=value file: dotted section prefixes (model.beta=1.0), one key per
// line, '#' starts a comment, blank lines ignored.
class ConfigMap {
  public:
    void set(const std::string& key, const std::string& value, int line = 0);
    bool has(const std::string& key) const;

    std::string get_string(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, std::optional<double> fallback = {}) const;
    std::int64_t get_int(const std::string& key, std::optional<std::int64_t> fallback = {}) const;
    std::uint64_t get_u64(const std::string& key, std::optional<std::uint64_t> fallback = {}) const;
    bool get_bool(const std::string& key, std::optional<bool> fallback = {}) const;
    std::vector<double> get_double_list(const std::string& key,
                                        const std::vector<double>& fallback) const;
    std::vector<std::size_t> get_size_list(const std::string& key,
                                           const std::vector<std::size_t>& fallback) const;

    const std::map<std::string, std::string>& entries() const { return values_; }
    int line_of(const std::string& key) const;
    const std::string& source() const { return source_; }
    void set_source(std::string s) { source_ = std::move(s); }

  private:
    [[noreturn]] void fail(const std::string& key, const std::string& what) const;
    std::map<std::string, std::string> values_;
    std::map<std::string, int> lines_;
    std::string source_ = "<memory>";
};

ConfigMap parse_config_text(const std::string& text, const std::string& source_name);
ConfigMap parse_config_file(const std::string& path);

enum class DatasetKind { kSynthetic, kIdx };

struct ExperimentConfig {
    // dataset
    DatasetKind dataset_kind = DatasetKind::kSynthetic;
    std::string dataset_images;  // idx only
    std::string dataset_labels;  // idx only
    std::size_t dataset_per_class = 200;
    int dataset_classes = 4;
    std::size_t dataset_side = 14;

    // model
    std::size_t latent_dim = 16;
    std::vector<std::size_t> hidden = {256, 128};
    double beta = 1.0;
    Objective objective = Objective::kElbo;
    DecoderFamily family = DecoderFamily::kBernoulli;

    // train
    TrainConfig train;

    // attack
    AttackConfig attack;
    // chain settings the mcmc-aware attacker simulates the defence with
    // (kept short: every PGD step runs two chains)
    std::size_t attack_chain_steps = 5;
    std::size_t attack_chain_leapfrog = 5;

    // defence
    HmcConfig hmc;

    // eval
    std::size_t eval_per_class = 5;

    // sweep
    std::vector<double> sweep_radii = {0.01, 0.05, 0.1, 0.2, 0.3, 0.5};

    std::uint64_t seed = 1;
    std::string output_dir = "out";

    void validate() const;  // throws ConfigError
};

ExperimentConfig experiment_config_from_map(const ConfigMap& map);

// FNV-1a over the canonical "key=value\n" serialization of the keys that
// determine upstream artifacts (dataset, model, train, attack, seed), after
// CLI overrides are applied. Defence and eval settings are excluded so a
// defence-side sweep can reuse one attack archive.
std::uint64_t artifact_config_hash(const ExperimentConfig& cfg);

}  // namespace vaedef
