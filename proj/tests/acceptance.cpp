// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [--strict]
//
// Exits 0 once every criterion has been evaluated; with --strict any FAIL
// makes the exit status 1.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "steerkit/experiment.hpp"

using namespace steerkit;
namespace fs = std::filesystem;

namespace {

const fs::path demo_config = fs::path(STEERKIT_SOURCE_DIR) / "configs" / "demo.json";
constexpr std::uint64_t n_seeds = 5;

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(double x, int prec = 3) {
    std::ostringstream os;
    os.precision(prec);
    os << x;
    return os.str();
}

Vector random_vector(Rng& rng, std::size_t n) {
    Vector v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

SaeParams random_sae(Rng& rng, std::size_t d, std::size_t m) {
    SaeParams p = SaeParams::zeros(d, m);
    for (auto* mat : {&p.W_enc, &p.W_dec})
        for (auto& x : mat->data()) x = rng.normal();
    for (auto* v : {&p.b_enc, &p.b_dec})
        for (auto& x : *v) x = 0.3 * rng.normal();
    return p;
}

// ---------------------------------------------------------------------------

Verdict sae_gradient() {
    Rng rng(101);
    Matrix Z(24, 6);
    for (auto& x : Z.data()) x = rng.normal();
    double worst = 0.0;
    for (int t = 0; t < 10; ++t) {
        const SaeParams p = random_sae(rng, 6, 16);
        const Vector numeric = finite_diff_grad(
            [&](const Vector& flat) { return sae_loss(unflatten(flat, 6, 16), Z, 0.05).total; }, flatten(p), 1e-6);
        const Vector analytic = flatten(sae_loss_and_grad(p, Z, 0.05).second);
        worst = std::max(worst, max_relative_error(analytic.span(), numeric.span()));
    }
    return {worst <= 1e-5, "max relative error " + fmt(worst) + " over 10 points (limit 1e-5)"};
}

Verdict sae_recovery() {
    Rng rng(102);
    const double sigma = 0.01;
    const Matrix Z = oracles::dictionary_data(rng, 2000, 16, 8, sigma);
    SaeTrainOptions opt;
    opt.m = 64;
    opt.l1_coeff = 1e-3;
    opt.epochs = 500;
    opt.lr = 0.1;
    opt.seed = 102;
    const double mse = sae_loss(train_sae(Z, opt), Z, 0.0).mse;
    return {mse <= 10 * sigma * sigma, "mse " + fmt(mse) + " after 500 epochs of gradient descent (limit 1e-3)"};
}

Verdict mi_oracle() {
    Rng rng(103);
    std::size_t equal = 0;
    for (int t = 0; t < 100; ++t) {
        const std::size_t bins = std::vector<std::size_t>{2, 3, 5}[t % 3];
        const auto plus = oracles::random_feature(rng, 20), minus = oracles::random_feature(rng, 20);
        equal += mutual_information(plus, minus, bins) == oracles::mutual_information(plus, minus, bins);
    }
    return {equal == 100, std::to_string(equal) + "/100 bit-exact"};
}

Verdict clamp_invariants() {
    Rng rng(104);
    std::size_t bad_clamp = 0, bad_delta = 0, bad_scale = 0;
    for (int t = 0; t < 1000; ++t) {
        const std::size_t d = 2 + rng.below(6), m = 2 * d + rng.below(8);
        const SaeParams sae = random_sae(rng, d, m);
        const Vector z = random_vector(rng, d);

        SteeringSpec spec;
        spec.alpha = rng.uniform(0, 10);
        std::vector<std::size_t> order(m);
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(std::span<std::size_t>(order));
        const std::size_t np = rng.below(m / 2 + 1), nd = rng.below(m / 2 + 1);
        for (std::size_t k = 0; k < np; ++k) spec.promoted.emplace_back(order[k], rng.uniform(0, 3));
        for (std::size_t k = 0; k < nd; ++k) spec.demoted.emplace_back(order[m - 1 - k], rng.uniform(0, 3));

        const Vector before = encode(sae, z).values;
        const Vector after = clamp_latents(before, spec);
        std::vector<bool> touched(m, false);
        bool ok = true;
        for (auto [i, e] : spec.promoted) ok = ok && after[i] >= e, touched[i] = true;
        for (auto [i, e] : spec.demoted) ok = ok && after[i] <= e, touched[i] = true;
        for (std::size_t i = 0; i < m; ++i)
            ok = ok && (touched[i] || std::bit_cast<std::uint64_t>(after[i]) == std::bit_cast<std::uint64_t>(before[i]));
        bad_clamp += !ok;

        SteeringSpec delta = spec;
        delta.mode = SteerMode::delta;
        delta.alpha = 0.0;
        bad_delta += sae_contrastive_steer(z, sae, delta) != z;

        const Vector one = sae_contrastive_steer(z, sae, spec);
        spec.alpha *= 2;
        const Vector two = sae_contrastive_steer(z, sae, spec);
        for (std::size_t i = 0; i < d; ++i)
            if (std::abs(two[i] - 2 * one[i]) > 1e-12 * std::max(1.0, std::abs(two[i]))) {
                ++bad_scale;
                break;
            }
    }
    return {bad_clamp + bad_delta + bad_scale == 0, "violations: clamp " + std::to_string(bad_clamp) + ", delta " +
                                                        std::to_string(bad_delta) + ", scaling " +
                                                        std::to_string(bad_scale) + " of 1000"};
}

// ---------------------------------------------------------------------------
// The planted pipeline for one seed, shared by the end-to-end criteria.

struct SeedPipeline {
    ExperimentConfig config;
    ToyModelParams model;
    std::shared_ptr<const SaeParams> sae;
    SteeringAssets sae_assets;
    SteeringAssets actadd_assets;
    StyleClassifier classifier;
    std::vector<TokenSeq> prompts;

    explicit SeedPipeline(std::uint64_t seed) {
        config = load_experiment_config(demo_config.string());
        config.seed = seed;
        config.sae.train.seed = seed;
        config.probe.options.seed = seed;
        model = stage_model(config);
        sae = std::make_shared<const SaeParams>(stage_sae(model, config));
        sae_assets = stage_steering_assets(model, config, sae);
        ExperimentConfig act = config;
        act.steering.method = SteerMethod::actadd;
        actadd_assets = stage_steering_assets(model, act, nullptr);
        classifier = stage_classifier(config);
        prompts = stage_eval_prompts(config);
    }

    SweepResult sweep(SteerMethod method, SteerMode mode, std::vector<double> alphas, bool conditional) const {
        ExperimentConfig c = config;
        c.steering.method = method;
        c.steering.mode = mode;
        c.steering.alphas = std::move(alphas);
        c.eval.metrics.conditional_flip = conditional;
        return run_sweep(model, classifier, prompts, method == SteerMethod::actadd ? actadd_assets : sae_assets, c);
    }
};

std::vector<std::unique_ptr<SeedPipeline>>& pipelines() {
    static std::vector<std::unique_ptr<SeedPipeline>> p;
    return p;
}

Verdict planted_flip() {
    std::size_t passed = 0;
    std::string detail;
    for (std::uint64_t seed = 1; seed <= n_seeds; ++seed) {
        pipelines().push_back(std::make_unique<SeedPipeline>(seed));
        const SeedPipeline& p = *pipelines().back();
        const double sae_flip = p.sweep(SteerMethod::sae_contrastive, SteerMode::replace, {5.0}, true).runs[0].report.P_flip;
        const double act_flip = p.sweep(SteerMethod::actadd, SteerMode::replace, {2.0}, true).runs[0].report.P_flip;
        passed += sae_flip >= 0.8 && act_flip >= 0.9;
        detail += " seed" + std::to_string(seed) + "=" + fmt(sae_flip) + "/" + fmt(act_flip);
    }
    return {passed >= 4, std::to_string(passed) + "/5 seeds pass; sae@5/actadd@2:" + detail};
}

Verdict alpha_degradation() {
    std::size_t passed = 0;
    std::string detail;
    for (const auto& p : pipelines()) {
        const SweepResult r = p->sweep(SteerMethod::sae_contrastive, SteerMode::replace, {5.0, 150.0}, false);
        const MetricsReport &at5 = r.runs[0].report, &at150 = r.runs[1].report;
        passed += at150.quality <= at5.quality - 30.0 && at150.H >= at5.H;
        detail += " seed" + std::to_string(p->config.seed) + " q=" + fmt(at5.quality) + "->" + fmt(at150.quality) +
                  " H=" + fmt(at5.H) + "->" + fmt(at150.H);
    }
    return {passed == pipelines().size(), std::to_string(passed) + "/5 seeds pass;" + detail};
}

Verdict probe_localization() {
    std::size_t passed = 0;
    std::string detail;
    for (const auto& p : pipelines()) {
        const ProbeReport r = stage_probe(p->model, p->config);
        const std::size_t layer = p->config.model.planted.layer;
        const double control = *std::max_element(r.control.accuracy.begin(), r.control.accuracy.end());
        passed += r.sweep.accuracy[layer] >= 0.95 && r.sweep.best_layer >= layer && control <= 0.7;
        detail += " seed" + std::to_string(p->config.seed) + " acc=" + fmt(r.sweep.accuracy[layer]) +
                  " best=" + std::to_string(r.sweep.best_layer) + " control=" + fmt(control);
    }
    return {passed == pipelines().size(), std::to_string(passed) + "/5 seeds pass;" + detail};
}

// A probe trained on trigger vs plain last-token activations at the steering
// layer reads the steered activation of every baseline-MT eval prompt, over a
// grid of delta-mode intensities that spans the behavioural transition.
Verdict probe_predicts_steering() {
    const std::vector<double> grid{0.25, 0.5, 1.0, 2.0, 4.0};
    std::size_t passed = 0;
    std::string detail;
    for (const auto& p : pipelines()) {
        const std::size_t layer = p->sae_assets.layer;
        auto [per_layer, labels] = probe_dataset(p->model, p->config);
        const LinearProbe probe = train_probe(per_layer[layer], labels, p->config.probe.options);

        const SweepResult r = p->sweep(SteerMethod::sae_contrastive, SteerMode::delta, grid, false);
        std::size_t flipped = 0, flipped_styled = 0, kept = 0, kept_styled = 0;
        for (std::size_t a = 0; a < grid.size(); ++a) {
            ExperimentConfig c = p->config;
            c.steering.mode = SteerMode::delta;
            const SteerRun run = make_run(p->sae_assets, c, grid[a]);
            for (std::size_t i = 0; i < p->prompts.size(); ++i) {
                if (r.runs[a].rows[i].baseline_label != StyleLabel::MT) continue;
                const Vector z = forward_capture(p->model, p->prompts[i], HookPoint{layer}).second;
                const bool styled = probe.predict(run.intervention->transform(z)) == 1;
                if (r.runs[a].rows[i].steered_label == c.eval.target) {
                    ++flipped;
                    flipped_styled += styled;
                } else {
                    ++kept;
                    kept_styled += styled;
                }
            }
        }
        const double f = flipped ? static_cast<double>(flipped_styled) / static_cast<double>(flipped) : 0.0;
        const double k = kept ? static_cast<double>(kept_styled) / static_cast<double>(kept) : 0.0;
        passed += flipped > 0 && f >= 0.85 && k <= 0.2;
        detail += " seed" + std::to_string(p->config.seed) + " flipped " + std::to_string(flipped_styled) + "/" +
                  std::to_string(flipped) + " kept " + std::to_string(kept_styled) + "/" + std::to_string(kept);
    }
    return {passed == pipelines().size(), std::to_string(passed) + "/5 seeds pass; styled:" + detail};
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

Verdict determinism() {
    const fs::path dir = fs::temp_directory_path() / "steerkit_acceptance_determinism";
    fs::remove_all(dir);
    for (const char* run : {"a", "b"}) {
        const std::string cmd = std::string(STEERKIT_CLI) + " synth-demo --config " + demo_config.string() + " --out " +
                                (dir / run).string() + " > /dev/null 2>&1";
        if (std::system(cmd.c_str()) != 0) return {false, "synth-demo exited with an error"};
    }
    std::string detail;
    bool same = true;
    for (const char* f : {artifacts::report, artifacts::sweep}) {
        const std::string a = slurp(dir / "a" / f), b = slurp(dir / "b" / f);
        const bool eq = !a.empty() && a == b;
        same = same && eq;
        detail += std::string(detail.empty() ? "" : ", ") + f + (eq ? " identical" : " differs");
    }
    fs::remove_all(dir);
    return {same, detail};
}

Verdict round_trips() {
    const fs::path dir = fs::temp_directory_path() / "steerkit_acceptance_roundtrip";
    fs::create_directories(dir);
    const SeedPipeline& p = *pipelines().front();
    std::string failed;

    save_sae(*p.sae, (dir / "sae.bin").string());
    const SaeParams sae = load_sae((dir / "sae.bin").string()), q = quantize_f32(*p.sae);
    if (!(sae.W_enc == q.W_enc && sae.b_enc == q.b_enc && sae.W_dec == q.W_dec && sae.b_dec == q.b_dec))
        failed += " sae";

    save_toy_model(p.model, (dir / "model.bin").string());
    const ToyModelParams back = load_toy_model((dir / "model.bin").string());
    auto same = [](const Matrix& a, const Matrix& b) {
        if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
        for (std::size_t i = 0; i < a.data().size(); ++i)
            if (b.data()[i] != static_cast<double>(static_cast<float>(a.data()[i]))) return false;
        return true;
    };
    bool model_ok = back.n_layers() == p.model.n_layers() && same(p.model.token_embedding, back.token_embedding) &&
                    same(p.model.unembedding, back.unembedding);
    for (std::size_t l = 0; model_ok && l < p.model.n_layers(); ++l)
        model_ok = same(p.model.layers[l].mix, back.layers[l].mix) &&
                   same(p.model.layers[l].mlp_in, back.layers[l].mlp_in) &&
                   same(p.model.layers[l].mlp_out, back.layers[l].mlp_out);
    if (!model_ok) failed += " model";

    const LatentStats& stats = *p.sae_assets.stats;
    if (latent_stats_from_json(nlohmann::json::parse(to_json(stats).dump(2))) != stats) failed += " latent_stats";
    const SteeringSpec spec = SteeringSpec::from_stats(stats, 5.0, SteerMode::replace);
    if (steering_spec_from_json(nlohmann::json::parse(to_json(spec, &stats).dump(2))) != spec) failed += " steering_spec";

    fs::remove_all(dir);
    return {failed.empty(), failed.empty() ? "sae, model, latent_stats, steering_spec exact" : "mismatch:" + failed};
}

}  // namespace

int main(int argc, char** argv) {
    const bool strict = argc > 1 && std::string(argv[1]) == "--strict";
    const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
        {"SAE gradient check", sae_gradient},
        {"SAE dictionary recovery", sae_recovery},
        {"MI oracle equivalence", mi_oracle},
        {"clamp invariants", clamp_invariants},
        {"planted end-to-end flip", planted_flip},
        {"alpha degradation", alpha_degradation},
        {"probe localization", probe_localization},
        {"probe predicts steering", probe_predicts_steering},
        {"synth-demo determinism", determinism},
        {"format round trips", round_trips},
    };
    std::size_t failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = criteria[i].second();
        } catch (const std::exception& e) {
            v = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        failures += !v.pass;
        std::printf("%s %2zu %s: %s [%.1fs]\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, v.detail.c_str(),
                    secs);
        std::fflush(stdout);
    }
    return strict && failures ? 1 : 0;
}
