#include "vaedef/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "vaedef/attack.hpp"
#include "vaedef/classifier.hpp"
#include "vaedef/config.hpp"
#include "vaedef/dataset.hpp"
#include "vaedef/defence.hpp"
#include "vaedef/metrics.hpp"
#include "vaedef/report.hpp"
#include "vaedef/theory.hpp"
#include "vaedef/vae.hpp"

namespace vaedef {

namespace {

constexpr const char* kToolVersion = "vaedef 1.0.0";

namespace fs = std::filesystem;

ExperimentConfig load_config(const StageOverrides& opts) {
    if (opts.config_path.empty()) throw ConfigError("--config PATH is required");
    ConfigMap map = parse_config_file(opts.config_path);
    auto override_str = [&](const std::string& key, const std::string& value) {
        map.set(key, value, 0);
    };
    if (opts.radius) override_str("attack.radius", report::format_double(*opts.radius));
    if (opts.hmc_steps) override_str("hmc.steps", std::to_string(*opts.hmc_steps));
    if (opts.step_size) override_str("hmc.step_size", report::format_double(*opts.step_size));
    if (opts.leapfrog) override_str("hmc.leapfrog", std::to_string(*opts.leapfrog));
    if (opts.adaptive) override_str("hmc.adaptive", *opts.adaptive ? "true" : "false");
    if (opts.seed) override_str("seed", std::to_string(*opts.seed));
    if (!opts.out_dir.empty()) override_str("output.dir", opts.out_dir);
    return experiment_config_from_map(map);
}

std::string timestamp() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::tm tm_buf{};
    gmtime_r(&t, &tm_buf);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_buf);
    return buf;
}

// Manifest is written with status=running before the stage body and
// finalized with the artifact list afterwards.
struct Manifest {
    std::string path;
    std::string stage;
    std::uint64_t config_hash = 0;
    std::uint64_t root_seed = 0;
    std::string started;
    std::vector<std::string> artifacts;

    void write(const std::string& status) const {
        std::ofstream out(path, std::ios::binary);
        out << "stage=" << stage << "\nstatus=" << status << "\ntool=" << kToolVersion
            << "\nconfig_hash=" << config_hash << "\nroot_seed=" << root_seed
            << "\nstarted=" << started << "\n";
        if (status == "complete") out << "finished=" << timestamp() << "\n";
        for (const auto& a : artifacts) out << "artifact=" << a << "\n";
    }
};

Manifest open_manifest(const ExperimentConfig& cfg, const std::string& stage) {
    fs::create_directories(cfg.output_dir);
    Manifest m;
    m.path = cfg.output_dir + "/manifest_" + stage + ".txt";
    m.stage = stage;
    m.config_hash = artifact_config_hash(cfg);
    m.root_seed = cfg.seed;
    m.started = timestamp();
    m.write("running");
    return m;
}

Dataset build_dataset(const ExperimentConfig& cfg) {
    if (cfg.dataset_kind == DatasetKind::kIdx)
        return load_idx(cfg.dataset_images, cfg.dataset_labels);
    return generate_synthetic(RngStream::derive(cfg.seed, "data", 0), cfg.dataset_per_class,
                              cfg.dataset_classes, cfg.dataset_side);
}

Dataset build_references(const ExperimentConfig& cfg, const Dataset& ds) {
    return stratified_sample(ds, cfg.eval_per_class, RngStream::derive(cfg.seed, "refs", 0));
}

std::string checkpoint_path(const ExperimentConfig& cfg) { return cfg.output_dir + "/model.vaec"; }
std::string classifier_path(const ExperimentConfig& cfg) {
    return cfg.output_dir + "/classifier.lcl";
}
std::string archive_path(const ExperimentConfig& cfg) { return cfg.output_dir + "/attacks.atk"; }

Tensor encoder_mean_features(const VaeModel& model, const Tensor& images) {
    const std::size_t n = images.dim(0), d = images.dim(1);
    Tensor features({n, model.latent_dim});
    Tensor row({d});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) row[j] = images.at2(i, j);
        const GaussianParams p = encode(model, row);
        for (std::size_t k = 0; k < model.latent_dim; ++k) features.at2(i, k) = p.mean[k];
    }
    return features;
}

int run_stage(const char* name, const std::function<int()>& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        std::cerr << name << ": configuration error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << name << ": " << e.what() << "\n";
        return kExitRuntime;
    }
}

}  // namespace

int cmd_train(const StageOverrides& opts) {
    return run_stage("train", [&] {
        ExperimentConfig cfg = load_config(opts);
        Manifest manifest = open_manifest(cfg, "train");
        Dataset ds = build_dataset(cfg);
        ds.validate();

        VaeModel model = make_vae(ds.dim(), cfg.hidden, cfg.latent_dim, cfg.beta, cfg.family,
                                  cfg.objective, RngStream::derive(cfg.seed, "init", 0));
        std::vector<double> losses = train(model, ds, cfg.train);
        save_checkpoint(model, checkpoint_path(cfg));

        report::Csv loss_csv;
        loss_csv.header = {"epoch", "loss"};
        for (std::size_t e = 0; e < losses.size(); ++e)
            loss_csv.add_row({std::to_string(e + 1), report::format_double(losses[e])});
        const std::string loss_path = cfg.output_dir + "/train_loss.csv";
        report::write_csv(loss_csv, loss_path);

        const Tensor features = encoder_mean_features(model, ds.images);
        ClassifierConfig cls_cfg;
        cls_cfg.seed = RngStream::derive(cfg.seed, "classifier", 0);
        LinearClassifier cls = fit_linear_classifier(features, ds.labels, cls_cfg);
        save_classifier(cls, classifier_path(cfg));

        manifest.artifacts = {checkpoint_path(cfg), loss_path, classifier_path(cfg)};
        manifest.write("complete");
        std::cout << "train: " << losses.size() << " epochs, final loss "
                  << report::format_double(losses.back()) << ", checkpoint "
                  << checkpoint_path(cfg) << "\n";
        return kExitOk;
    });
}

int cmd_attack(const StageOverrides& opts) {
    return run_stage("attack", [&] {
        ExperimentConfig cfg = load_config(opts);
        Manifest manifest = open_manifest(cfg, "attack");
        VaeModel model = load_checkpoint(checkpoint_path(cfg));
        Dataset ds = build_dataset(cfg);
        Dataset refs = build_references(cfg, ds);

        LinearClassifier cls;
        const bool needs_classifier = cfg.attack.objective == AttackObjective::kClassifierCe;
        if (needs_classifier) cls = load_classifier(classifier_path(cfg));

        AttackArchive archive;
        archive.config_hash = artifact_config_hash(cfg);
        archive.data_dim = ds.dim();
        HmcConfig chain = cfg.hmc;
        chain.steps = cfg.attack_chain_steps;
        chain.leapfrog_steps = cfg.attack_chain_leapfrog;

        for (std::size_t i = 0; i < refs.size(); ++i) {
            const Tensor x_ref = refs.image(i);
            // supervised objectives aim at the first reference of another class
            const Tensor* x_target = nullptr;
            Tensor target_storage;
            if (cfg.attack.objective == AttackObjective::kSupervisedKl) {
                for (std::size_t j = 0; j < refs.size(); ++j) {
                    if (refs.labels[j] != refs.labels[i]) {
                        target_storage = refs.image(j);
                        x_target = &target_storage;
                        break;
                    }
                }
                if (!x_target)
                    throw std::runtime_error("supervised objective needs a second class");
            }
            const std::uint64_t atk_seed = RngStream::derive(cfg.seed, "attack", i);
            std::vector<AdversarialExample> runs =
                cfg.attack.objective == AttackObjective::kMcmcAware
                    ? mcmc_aware_attack_all(model, chain, x_ref, cfg.attack, atk_seed)
                    : pgd_attack_all(model, needs_classifier ? &cls : nullptr, x_ref, x_target,
                                     cfg.attack, atk_seed);
            const std::size_t base = archive.records.size();
            std::size_t best_record = base;
            double best_obj = -1e300;
            for (const auto& run : runs) {
                run.check_feasible();
                if (run.final_objective > best_obj) {
                    best_obj = run.final_objective;
                    best_record = base + run.restart_index;
                }
                archive.records.push_back({static_cast<std::uint32_t>(i),
                                           static_cast<std::uint32_t>(run.restart_index),
                                           run.config, run.epsilon, run.final_objective});
            }
            archive.best_per_reference.push_back(static_cast<std::uint32_t>(best_record));
        }
        save_attack_archive(archive, archive_path(cfg));
        manifest.artifacts = {archive_path(cfg)};
        manifest.write("complete");
        std::cout << "attack: " << archive.records.size() << " attacks over " << refs.size()
                  << " references, archive " << archive_path(cfg) << "\n";
        return kExitOk;
    });
}

namespace {

void append_report_rows(report::Csv& csv, const RobustnessReport& rep, const std::string& mode) {
    for (const auto& p : rep.pairs)
        csv.add_row({mode, std::to_string(p.reference_index),
                     report::format_double(p.msssim_recon), report::format_double(p.msssim_input),
                     report::format_double(p.mse_recon), p.class_match ? "1" : "0"});
}

}  // namespace

int cmd_defend_eval(const StageOverrides& opts) {
    return run_stage("defend-eval", [&] {
        ExperimentConfig cfg = load_config(opts);
        Manifest manifest = open_manifest(cfg, "defend_eval");
        VaeModel model = load_checkpoint(checkpoint_path(cfg));
        AttackArchive archive = load_attack_archive(archive_path(cfg));
        const std::uint64_t expect = artifact_config_hash(cfg);
        if (archive.config_hash != expect) {
            std::ostringstream msg;
            msg << "attack archive " << archive_path(cfg) << " was produced under config hash "
                << archive.config_hash << " but the current config hashes to " << expect
                << "; re-run the attack stage or restore the matching config";
            throw ConfigError(msg.str());
        }
        LinearClassifier cls = load_classifier(classifier_path(cfg));
        Dataset ds = build_dataset(cfg);
        Dataset refs = build_references(cfg, ds);

        const std::uint64_t eval_seed = RngStream::derive(cfg.seed, "defend-eval", 0);
        RobustnessReport plain =
            robustness_report(model, cls, refs, archive, std::nullopt, eval_seed);
        RobustnessReport defended =
            robustness_report(model, cls, refs, archive, cfg.hmc, eval_seed);

        report::Csv csv;
        csv.header = {"mode", "reference", "msssim_recon", "msssim_input", "mse_recon",
                      "class_match"};
        append_report_rows(csv, plain, "no_defence");
        append_report_rows(csv, defended, "defence");
        const std::string csv_path = cfg.output_dir + "/defend_eval.csv";
        report::write_csv(csv, csv_path);

        report::Csv summary;
        summary.header = {"mode", "hmc_steps", "msssim_mean", "msssim_std", "mse_mean",
                          "adversarial_accuracy"};
        for (const RobustnessReport* rep : {&plain, &defended})
            summary.add_row({rep->defended ? "defence" : "no_defence",
                             std::to_string(rep->defended ? cfg.hmc.steps : 0),
                             report::format_double(rep->msssim_mean),
                             report::format_double(rep->msssim_std),
                             report::format_double(rep->mse_mean),
                             report::format_double(rep->adversarial_accuracy)});
        const std::string summary_path = cfg.output_dir + "/defend_eval_summary.csv";
        report::write_csv(summary, summary_path);

        const std::string svg_path = cfg.output_dir + "/defend_eval.svg";
        report::write_bar_chart_svg(
            svg_path, "Reconstruction similarity and adversarial accuracy", "value",
            {"msssim/plain", "msssim/defended", "acc/plain", "acc/defended"},
            {plain.msssim_mean, defended.msssim_mean, plain.adversarial_accuracy,
             defended.adversarial_accuracy});

        manifest.artifacts = {csv_path, summary_path, svg_path};
        manifest.write("complete");
        std::cout << "defend-eval: msssim " << report::format_double(plain.msssim_mean) << " -> "
                  << report::format_double(defended.msssim_mean) << ", accuracy "
                  << report::format_double(plain.adversarial_accuracy) << " -> "
                  << report::format_double(defended.adversarial_accuracy) << " (T="
                  << cfg.hmc.steps << ")\n";
        return kExitOk;
    });
}

int cmd_radius_sweep(const StageOverrides& opts) {
    return run_stage("radius-sweep", [&] {
        ExperimentConfig cfg = load_config(opts);
        Manifest manifest = open_manifest(cfg, "radius_sweep");
        VaeModel model = load_checkpoint(checkpoint_path(cfg));
        Dataset ds = build_dataset(cfg);
        Dataset refs = build_references(cfg, ds);
        const std::size_t side = refs.image_side;

        report::Csv csv;
        csv.header = {"radius", "msssim_input", "msssim_recon"};
        std::vector<double> xs, sim_in, sim_rec;
        for (std::size_t ri = 0; ri < cfg.sweep_radii.size(); ++ri) {
            const double radius = cfg.sweep_radii[ri];
            double acc_in = 0.0, acc_rec = 0.0;
            for (std::size_t i = 0; i < refs.size(); ++i) {
                const Tensor x_ref = refs.image(i);
                Tensor x_adv = x_ref;
                if (radius > 0) {
                    AttackConfig atk = cfg.attack;
                    atk.radius = radius;
                    const AdversarialExample ex =
                        pgd_attack(model, nullptr, x_ref, nullptr, atk,
                                   RngStream::derive(cfg.seed, "sweep", ri * 100000 + i));
                    ex.check_feasible();
                    x_adv = ex.x_adv;
                }
                const Tensor rec_ref = decode(model, encode(model, x_ref).mean);
                const Tensor rec_adv = decode(model, encode(model, x_adv).mean);
                acc_in += msssim(x_ref, x_adv, side);
                acc_rec += msssim(rec_ref, rec_adv, side);
            }
            const double n = static_cast<double>(refs.size());
            xs.push_back(radius);
            sim_in.push_back(acc_in / n);
            sim_rec.push_back(acc_rec / n);
            csv.add_row({report::format_double(radius), report::format_double(acc_in / n),
                         report::format_double(acc_rec / n)});
        }
        const std::string csv_path = cfg.output_dir + "/radius_sweep.csv";
        report::write_csv(csv, csv_path);
        const std::string svg_path = cfg.output_dir + "/radius_sweep.svg";
        report::write_line_chart_svg(svg_path, "Similarity vs attack radius", "radius", "MSSSIM",
                                     {{"input pairs", xs, sim_in, "#1f77b4"},
                                      {"reconstruction pairs", xs, sim_rec, "#d62728"}});
        manifest.artifacts = {csv_path, svg_path};
        manifest.write("complete");
        std::cout << "radius-sweep: " << xs.size() << " radii, csv " << csv_path << "\n";
        return kExitOk;
    });
}

namespace {

struct TheoryRow {
    std::string check;
    double quantity;
    std::string bound;
    bool pass;
};

theory::LinearGaussianVae fixture_lgv(std::size_t latent) {
    theory::LinearGaussianVae lgv;
    if (latent == 1) {
        lgv.decoder_weight = Tensor({3, 1}, {1.0, -0.5, 0.25});
        lgv.offset = Tensor::vector({0.1, -0.2, 0.05});
        lgv.obs_var = 0.4;
    } else {
        lgv.decoder_weight = Tensor({4, 2}, {1.0, 0.3, -0.4, 0.8, 0.6, -0.2, 0.1, 0.5});
        lgv.offset = Tensor::vector({0.1, -0.1, 0.2, 0.0});
        lgv.obs_var = 0.5;
    }
    lgv.validate();
    return lgv;
}

// Exact posterior map perturbed into a deliberately mis-specified diagonal
// encoder (inflated variance, scaled mean map) so the approximation-gap and
// chain-convergence terms are visibly nonzero.
theory::DiagGaussianEncoder fixture_encoder(const theory::LinearGaussianVae& lgv) {
    const std::size_t dd = lgv.decoder_weight.dim(0);
    const std::size_t lat = lgv.decoder_weight.dim(1);
    Tensor x0({dd});
    const theory::FullGaussian post0 = theory::exact_posterior(lgv, x0);
    theory::DiagGaussianEncoder enc;
    enc.weight = Tensor({lat, dd});
    // weight rows = 1.2 * Sigma W^T / obs_var
    for (std::size_t i = 0; i < lat; ++i)
        for (std::size_t j = 0; j < dd; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < lat; ++k)
                s += post0.cov.at2(i, k) * lgv.decoder_weight.at2(j, k);
            enc.weight.at2(i, j) = 1.2 * s / lgv.obs_var;
        }
    enc.offset = Tensor({lat});
    for (std::size_t i = 0; i < lat; ++i) {
        double s = 0.15;
        for (std::size_t j = 0; j < dd; ++j) s -= enc.weight.at2(i, j) * lgv.offset[j];
        enc.offset[i] = s;
    }
    enc.log_var = Tensor({lat});
    for (std::size_t i = 0; i < lat; ++i)
        enc.log_var[i] = std::log(2.0 * post0.cov.at2(i, i));
    return enc;
}

std::vector<TheoryRow> theory_lemma1_rows(std::uint64_t /*seed*/) {
    std::vector<TheoryRow> rows;
    std::vector<double> radii;
    for (double r = 1e-3; r <= 0.100001; r *= std::pow(100.0, 1.0 / 8.0)) radii.push_back(r);
    for (std::size_t lat : {std::size_t{1}, std::size_t{2}}) {
        theory::LinearGaussianVae lgv = fixture_lgv(lat);
        const std::size_t dd = lgv.decoder_weight.dim(0);
        Tensor x({dd});
        for (std::size_t i = 0; i < dd; ++i) x[i] = 0.3 * (i + 1);
        Tensor dir({dd});
        for (std::size_t i = 0; i < dd; ++i) dir[i] = (i % 2 == 0) ? 1.0 : -0.5;
        const theory::Lemma1Result res = theory::lemma1_scaling_check(lgv, x, dir, radii);
        rows.push_back({"lemma1_slope_" + std::to_string(lat) + "d", res.slope, "[1.8;2.2]",
                        !res.degenerate && res.slope >= 1.8 && res.slope <= 2.2});
    }
    return rows;
}

std::vector<TheoryRow> theory_pinsker_rows(std::uint64_t seed) {
    std::vector<std::pair<theory::FullGaussian, theory::FullGaussian>> pairs;
    RngStream rng = RngStream::derived(seed, "pinsker", 0);
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
    return {{"pinsker_min_slack", rep.min_slack, ">=-1e-9",
             rep.violations == 0 && rep.min_slack >= -1e-9}};
}

std::vector<TheoryRow> theory_theorem1_rows(std::uint64_t seed, const HmcConfig& base) {
    std::vector<TheoryRow> rows;
    for (std::size_t lat : {std::size_t{1}, std::size_t{2}}) {
        theory::LinearGaussianVae lgv = fixture_lgv(lat);
        theory::DiagGaussianEncoder enc = fixture_encoder(lgv);
        const std::size_t dd = lgv.decoder_weight.dim(0);
        Tensor x_r({dd}), x_a({dd});
        for (std::size_t i = 0; i < dd; ++i) {
            x_r[i] = 0.25 * (i + 1);
            x_a[i] = x_r[i] + ((i % 2 == 0) ? 0.05 : -0.05);
        }
        const std::size_t budget = (lat == 1) ? 20000 : 50000;
        double chain_t0 = 0.0;
        for (std::size_t t : {std::size_t{0}, std::size_t{10}, std::size_t{100}}) {
            HmcConfig hmc = base;
            hmc.steps = t;
            const theory::Theorem1Result res = theory::theorem1_decomposition(
                lgv, enc, x_r, x_a, hmc, budget, RngStream::derive(seed, "theorem1", lat));
            if (t == 0) chain_t0 = res.rhs_chain;
            const double bound = res.rhs_sum() + 3.0 * res.combined_se();
            rows.push_back({"theorem1_" + std::to_string(lat) + "d_t" + std::to_string(t),
                            res.lhs, report::format_double(bound), res.holds(3.0)});
            if (t == 100)
                rows.push_back({"theorem1_" + std::to_string(lat) + "d_chain_decay",
                                res.rhs_chain, report::format_double(0.5 * chain_t0),
                                res.rhs_chain < 0.5 * chain_t0});
        }
    }
    return rows;
}

}  // namespace

int cmd_theory(const StageOverrides& opts) {
    return run_stage("theory", [&] {
        ExperimentConfig cfg = load_config(opts);
        Manifest manifest = open_manifest(cfg, "theory");
        HmcConfig base;
        base.step_size = 0.3;
        base.leapfrog_steps = 5;
        base.adaptive = true;

        std::vector<TheoryRow> rows;
        auto wanted = [&](const std::string& suite) {
            return opts.check_filter.empty() || suite.find(opts.check_filter) != std::string::npos;
        };
        if (wanted("lemma1"))
            for (auto& r : theory_lemma1_rows(cfg.seed)) rows.push_back(std::move(r));
        if (wanted("pinsker"))
            for (auto& r : theory_pinsker_rows(cfg.seed)) rows.push_back(std::move(r));
        if (wanted("theorem1"))
            for (auto& r : theory_theorem1_rows(cfg.seed, base)) rows.push_back(std::move(r));
        if (rows.empty())
            throw ConfigError("--check '" + opts.check_filter +
                              "' matches none of lemma1, pinsker, theorem1");

        report::Csv csv;
        csv.header = {"check", "quantity", "bound", "pass"};
        bool all_pass = true;
        for (const auto& r : rows) {
            csv.add_row({r.check, report::format_double(r.quantity), r.bound,
                         r.pass ? "true" : "false"});
            if (!r.pass) {
                all_pass = false;
                std::cerr << "theory: check failed: " << r.check << " quantity="
                          << report::format_double(r.quantity) << " bound=" << r.bound << "\n";
            }
        }
        const std::string csv_path = cfg.output_dir + "/theory.csv";
        report::write_csv(csv, csv_path);
        manifest.artifacts = {csv_path};
        manifest.write("complete");
        std::cout << "theory: " << rows.size() << " checks, "
                  << (all_pass ? "all passed" : "FAILURES") << ", csv " << csv_path << "\n";
        return all_pass ? kExitOk : kExitRuntime;
    });
}

}  // namespace vaedef
