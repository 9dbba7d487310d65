// steerkit <subcommand> --config path [--out dir] [--seed n]

#include <cstdint>
#include <functional>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "steerkit/experiment.hpp"

namespace {

struct Common {
    std::string config;
    std::optional<std::string> out;
    std::optional<std::uint64_t> seed;
};

steerkit::ExperimentConfig load(const Common& opts) {
    auto c = steerkit::load_experiment_config(opts.config);
    if (opts.out) c.out = *opts.out;
    if (opts.seed) {
        c.seed = *opts.seed;
        c.sae.train.seed = c.seed;
        c.probe.options.seed = c.seed;
    }
    return c;
}

void print_report(const steerkit::SweepResult& r) {
    std::cout << "baseline  H=" << r.baseline.report.H << " P=" << r.baseline.report.P
              << " quality=" << r.baseline.report.quality << '\n';
    for (const auto& run : r.runs)
        std::cout << "alpha=" << *run.alpha << "  H=" << run.report.H << " P=" << run.report.P
                  << " P_flip=" << run.report.P_flip << " quality=" << run.report.quality << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"steerkit: SAE-based steering experiments on a synthetic translation world"};
    app.require_subcommand(1);

    Common opts;
    std::function<void(const steerkit::ExperimentConfig&)> action;

    auto add = [&](const char* name, const char* help, std::function<void(const steerkit::ExperimentConfig&)> fn) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", opts.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", opts.out, "output directory (overrides the config)");
        sub->add_option("--seed", opts.seed, "seed (overrides the config)");
        sub->callback([&action, fn] { action = fn; });
    };

    using namespace steerkit;
    add("synth-demo", "run the full synthetic pipeline and alpha sweep",
        [](const ExperimentConfig& c) { print_report(cmd_synth_demo(c)); });
    add("train-sae", "train the sparse autoencoder", [](const ExperimentConfig& c) { cmd_train_sae(c); });
    add("probe-sweep", "per-layer linear probes for the trigger", [](const ExperimentConfig& c) {
        const auto p = cmd_probe_sweep(c);
        for (std::size_t l = 0; l < p.sweep.accuracy.size(); ++l)
            std::cout << "layer " << l << "  accuracy=" << p.sweep.accuracy[l]
                      << "  shuffled=" << p.control.accuracy[l] << '\n';
        std::cout << "best layer " << p.sweep.best_layer << '\n';
    });
    add("extract-features", "select contrastive SAE latents", [](const ExperimentConfig& c) {
        const auto s = cmd_extract_features(c);
        std::cout << s.promoted.size() << " promoted, " << s.demoted.size() << " demoted"
                  << (s.shortfall ? " (shortfall)" : "") << (s.uninformative ? " (uninformative)" : "") << '\n';
    });
    add("steer", "generate steered continuations", [](const ExperimentConfig& c) { cmd_steer(c); });
    add("evaluate", "classify and score steered continuations",
        [](const ExperimentConfig& c) { print_report(cmd_evaluate(c)); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        action(load(opts));
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
