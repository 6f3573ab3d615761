#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace vaedef {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;   // validation / configuration error
inline constexpr int kExitRuntime = 2;  // runtime failure (including failed checks)

// Command-line overrides applied on top of the config file.
struct StageOverrides {
    std::string config_path;
    std::optional<double> radius;            // attack.radius
    std::optional<std::size_t> hmc_steps;    // hmc.steps
    std::optional<double> step_size;         // hmc.step_size
    std::optional<std::size_t> leapfrog;     // hmc.leapfrog
    std::optional<bool> adaptive;            // hmc.adaptive
    std::optional<std::uint64_t> seed;       // root seed
    std::string out_dir;                     // output.dir, when nonempty
    std::string check_filter;                // theory: run checks whose name contains this
};

// Each stage returns a process exit code and reports failures on stderr.
int cmd_train(const StageOverrides& opts);
int cmd_attack(const StageOverrides& opts);
int cmd_defend_eval(const StageOverrides& opts);
int cmd_radius_sweep(const StageOverrides& opts);
int cmd_theory(const StageOverrides& opts);

}  // namespace vaedef
