// Command-line harness: train -> attack -> defend-eval / radius-sweep, plus
// the theory checks. Exit codes: 0 success, 1 validation error, 2 runtime
// failure.
#include <CLI11.hpp>

#include "vaedef/pipeline.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Adversarial attacks and an MCMC defence for variational autoencoders"};
    app.require_subcommand(1);

    vaedef::StageOverrides opts;
    double radius = 0.0;
    std::size_t hmc_steps = 0, leapfrog = 0;
    double step_size = 0.0;
    bool adaptive_on = false, adaptive_off = false;
    std::uint64_t seed = 0;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opts.config_path, "experiment config file")
            ->required();
        sub->add_option("--seed", seed, "override the root seed");
        sub->add_option("--out", opts.out_dir, "override the output directory");
        sub->add_option("--radius", radius, "override the attack radius");
        sub->add_option("--hmc-steps", hmc_steps, "override the defence chain length T");
        sub->add_option("--step-size", step_size, "override the HMC step size");
        sub->add_option("--leapfrog", leapfrog, "override the leapfrog step count L");
        sub->add_flag("--adaptive", adaptive_on, "force adaptive HMC step size on");
        sub->add_flag("--no-adaptive", adaptive_off, "force adaptive HMC step size off");
        return sub;
    };

    CLI::App* train = add_common(app.add_subcommand("train", "train the model"));
    CLI::App* attack = add_common(app.add_subcommand("attack", "build the attack archive"));
    CLI::App* defend =
        add_common(app.add_subcommand("defend-eval", "paired no-defence vs defence report"));
    CLI::App* sweep =
        add_common(app.add_subcommand("radius-sweep", "similarity vs attack radius"));
    CLI::App* theory = add_common(app.add_subcommand("theory", "tractable-fixture checks"));
    theory->add_option("--check", opts.check_filter,
                       "run only the suite whose name contains this (lemma1/pinsker/theorem1)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : vaedef::kExitConfig;
    }

    CLI::App* sub = app.get_subcommands().front();
    if (sub->count("--radius")) opts.radius = radius;
    if (sub->count("--hmc-steps")) opts.hmc_steps = hmc_steps;
    if (sub->count("--step-size")) opts.step_size = step_size;
    if (sub->count("--leapfrog")) opts.leapfrog = leapfrog;
    if (adaptive_on) opts.adaptive = true;
    if (adaptive_off) opts.adaptive = false;
    if (sub->count("--seed")) opts.seed = seed;

    if (sub == train) return vaedef::cmd_train(opts);
    if (sub == attack) return vaedef::cmd_attack(opts);
    if (sub == defend) return vaedef::cmd_defend_eval(opts);
    if (sub == sweep) return vaedef::cmd_radius_sweep(opts);
    if (sub == theory) return vaedef::cmd_theory(opts);
    return vaedef::kExitConfig;
}
