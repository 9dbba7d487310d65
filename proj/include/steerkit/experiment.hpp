#pragma once

// Config-driven experiment pipelines over the synthetic world.
//
// A single JSON document describes the whole run. Relative file paths in it
// resolve against the directory holding the config file. Every random stream
// is derived from the top-level seed and the stage name, so stages can be
// run separately and still agree with a full run.

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "json.hpp"
#include "steerkit/contrastive.hpp"
#include "steerkit/evalkit.hpp"
#include "steerkit/model.hpp"
#include "steerkit/sae.hpp"
#include "steerkit/steering.hpp"
#include "steerkit/synthetic.hpp"

namespace steerkit {

/// Schema violation, located by a JSON pointer into the config document.
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string pointer, const std::string& what)
        : std::runtime_error(pointer + ": " + what), pointer_(std::move(pointer)) {}
    const std::string& pointer() const noexcept { return pointer_; }

private:
    std::string pointer_;
};

class StageError : public std::runtime_error {
public:
    StageError(std::string stage, const std::string& what)
        : std::runtime_error("stage " + stage + ": " + what), stage_(std::move(stage)) {}
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

enum class SteerMethod { sae_contrastive, actadd, none };

inline SteerMethod steer_method_from_string(std::string_view s) {
    if (s == "sae_contrastive") return SteerMethod::sae_contrastive;
    if (s == "actadd") return SteerMethod::actadd;
    if (s == "none") return SteerMethod::none;
    throw std::invalid_argument("unknown steering method: " + std::string(s));
}

inline std::string to_string(SteerMethod m) {
    switch (m) {
        case SteerMethod::sae_contrastive: return "sae_contrastive";
        case SteerMethod::actadd: return "actadd";
        case SteerMethod::none: return "none";
    }
    return "none";
}

inline ExpectationMode expectation_from_string(std::string_view s) {
    if (s == "include_zeros") return ExpectationMode::include_zeros;
    if (s == "active_only") return ExpectationMode::active_only;
    throw std::invalid_argument("unknown expectation mode: " + std::string(s));
}

inline std::string to_string(ExpectationMode m) {
    return m == ExpectationMode::include_zeros ? "include_zeros" : "active_only";
}

struct ModelConfig {
    std::optional<std::string> weights;
    WorldOptions planted;
};

struct SaeConfig {
    std::optional<std::string> weights;
    SaeTrainOptions train;
    std::size_t layer = 2;
    std::size_t prompts_per_side = 60;  // training prompts with and without trigger
    std::size_t steps = 12;             // continuation length of each training prompt
};

struct ContrastiveConfig {
    std::size_t n_per_side = 20;
    SelectionOptions selection;
    std::optional<std::string> positive;  // one prompt per line
    std::optional<std::string> negative;
};

struct SteeringConfig {
    SteerMethod method = SteerMethod::sae_contrastive;
    SteerMode mode = SteerMode::replace;
    std::vector<double> alphas{5.0};
    Positions positions = Positions::all;
    std::optional<std::string> latent_stats;
};

struct EvalConfig {
    std::size_t n_prompts = 50;
    std::size_t steps = 12;
    StyleLabel target = StyleLabel::H1;
    std::size_t classifier_paragraphs = 60;
    double noise = 0.1;
    std::optional<std::string> dataset;
    std::optional<std::string> prompts;
    ClassifierOptions classifier;
    MetricsOptions metrics;
};

struct ProbeConfig {
    std::size_t n_per_class = 100;
    ProbeOptions options;
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    ModelConfig model;
    SaeConfig sae;
    ContrastiveConfig contrastive;
    SteeringConfig steering;
    EvalConfig eval;
    ProbeConfig probe;
    std::string out = "out";
};

namespace detail {

class ConfigReader {
public:
    ConfigReader(const nlohmann::json& j, std::string pointer, std::filesystem::path base)
        : j_(j), ptr_(std::move(pointer)), base_(std::move(base)) {
        if (!j_.is_object()) throw ConfigError(ptr_.empty() ? "/" : ptr_, "expected object");
    }

    void only(std::initializer_list<std::string_view> keys) const {
        for (const auto& [k, v] : j_.items()) {
            bool known = false;
            for (auto key : keys) known = known || key == k;
            if (!known) throw ConfigError(at(k), "unknown key");
        }
    }

    ConfigReader section(const char* key) const {
        static const nlohmann::json empty = nlohmann::json::object();
        const auto* v = find(key);
        return ConfigReader(v ? *v : empty, at(key), base_);
    }

    void count(const char* key, std::size_t& out, std::size_t min = 0) const {
        const auto* v = find(key);
        if (!v) return;
        if (!v->is_number_unsigned()) throw ConfigError(at(key), "expected non-negative integer");
        out = v->get<std::size_t>();
        if (out < min) throw ConfigError(at(key), "must be >= " + std::to_string(min));
    }

    void seed(const char* key, std::uint64_t& out) const {
        const auto* v = find(key);
        if (!v) return;
        if (!v->is_number_unsigned()) throw ConfigError(at(key), "expected non-negative integer");
        out = v->get<std::uint64_t>();
    }

    void real(const char* key, double& out, double min = -std::numeric_limits<double>::infinity()) const {
        const auto* v = find(key);
        if (!v) return;
        if (!v->is_number()) throw ConfigError(at(key), "expected number");
        out = v->get<double>();
        if (!(out >= min)) throw ConfigError(at(key), "must be >= " + format_real(min));
    }

    void flag(const char* key, bool& out) const {
        const auto* v = find(key);
        if (!v) return;
        if (!v->is_boolean()) throw ConfigError(at(key), "expected boolean");
        out = v->get<bool>();
    }

    void text(const char* key, std::string& out) const {
        const auto* v = find(key);
        if (!v) return;
        if (!v->is_string()) throw ConfigError(at(key), "expected string");
        out = v->get<std::string>();
    }

    void path(const char* key, std::optional<std::string>& out) const {
        const auto* v = find(key);
        if (!v || v->is_null()) return;
        if (!v->is_string()) throw ConfigError(at(key), "expected path string");
        std::filesystem::path p(v->get<std::string>());
        if (p.is_relative()) p = base_ / p;
        out = p.lexically_normal().string();
    }

    template <class E, class Parse>
    void choice(const char* key, E& out, Parse parse) const {
        std::string s;
        text(key, s);
        if (s.empty() && !find(key)) return;
        try {
            out = parse(s);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(at(key), e.what());
        }
    }

    void reals(const char* key, std::vector<double>& out) const {
        const auto* v = find(key);
        if (!v) return;
        if (!v->is_array()) throw ConfigError(at(key), "expected array of numbers");
        out.clear();
        for (std::size_t i = 0; i < v->size(); ++i) {
            if (!(*v)[i].is_number()) throw ConfigError(at(key) + "/" + std::to_string(i), "expected number");
            out.push_back((*v)[i].get<double>());
        }
    }

    std::string at(std::string_view key) const { return ptr_ + "/" + std::string(key); }
    const nlohmann::json* find(const char* key) const {
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

private:
    const nlohmann::json& j_;
    std::string ptr_;
    std::filesystem::path base_;
};

inline void require_file(const std::optional<std::string>& path, const std::string& pointer) {
    if (path && !std::filesystem::is_regular_file(*path)) throw ConfigError(pointer, "file not found: " + *path);
}

}  // namespace detail

/// Parses and validates a config document. `base_dir` anchors relative paths.
inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j,
                                                    const std::filesystem::path& base_dir = ".") {
    using detail::ConfigReader;
    ExperimentConfig c;
    const ConfigReader root(j, "", base_dir);
    root.only({"seed", "model", "sae", "contrastive", "steering", "eval", "probe", "out"});
    root.seed("seed", c.seed);
    root.text("out", c.out);
    if (std::filesystem::path(c.out).is_relative()) c.out = (base_dir / c.out).lexically_normal().string();

    const auto model = root.section("model");
    model.only({"weights", "d", "n_layers", "layer", "gain"});
    model.path("weights", c.model.weights);
    model.count("d", c.model.planted.d, 8);
    model.count("n_layers", c.model.planted.n_layers, 1);
    model.count("layer", c.model.planted.layer);
    model.real("gain", c.model.planted.gain, 0.0);
    if (c.model.planted.layer >= c.model.planted.n_layers)
        throw ConfigError("/model/layer", "must be < n_layers");

    const auto sae = root.section("sae");
    sae.only({"weights", "layer", "m", "l1_coeff", "epochs", "lr", "optimizer", "prompts_per_side", "steps"});
    c.sae.layer = c.model.planted.layer;
    sae.path("weights", c.sae.weights);
    sae.count("layer", c.sae.layer);
    sae.count("m", c.sae.train.m, 1);
    sae.real("l1_coeff", c.sae.train.l1_coeff, 0.0);
    sae.count("epochs", c.sae.train.epochs);
    sae.real("lr", c.sae.train.lr, 0.0);
    sae.choice("optimizer", c.sae.train.optimizer, sae_optimizer_from_string);
    sae.count("prompts_per_side", c.sae.prompts_per_side, 1);
    sae.count("steps", c.sae.steps, 1);
    c.sae.train.seed = c.seed;

    const auto con = root.section("contrastive");
    con.only({"n_per_side", "k_total", "bins", "k_per_side", "expectation", "positive", "negative"});
    con.count("n_per_side", c.contrastive.n_per_side, 1);
    con.count("k_total", c.contrastive.selection.k_total, 1);
    con.count("bins", c.contrastive.selection.bins, 2);
    con.flag("k_per_side", c.contrastive.selection.k_per_side);
    con.choice("expectation", c.contrastive.selection.expectation, expectation_from_string);
    con.path("positive", c.contrastive.positive);
    con.path("negative", c.contrastive.negative);
    if (c.contrastive.positive.has_value() != c.contrastive.negative.has_value())
        throw ConfigError("/contrastive", "positive and negative prompt files go together");

    const auto st = root.section("steering");
    st.only({"method", "mode", "alphas", "positions", "latent_stats"});
    st.choice("method", c.steering.method, steer_method_from_string);
    st.choice("mode", c.steering.mode, steer_mode_from_string);
    st.reals("alphas", c.steering.alphas);
    st.choice("positions", c.steering.positions, positions_from_string);
    st.path("latent_stats", c.steering.latent_stats);
    if (c.steering.alphas.empty()) throw ConfigError("/steering/alphas", "must not be empty");
    for (std::size_t i = 0; i < c.steering.alphas.size(); ++i)
        if (!(c.steering.alphas[i] >= 0.0))
            throw ConfigError("/steering/alphas/" + std::to_string(i), "must be >= 0");

    const auto ev = root.section("eval");
    ev.only({"n_prompts", "steps", "target", "classifier_paragraphs", "noise", "dataset", "prompts", "feature_dim",
             "classifier_epochs", "classifier_lr", "label_frequency", "conditional_flip"});
    ev.count("n_prompts", c.eval.n_prompts, 1);
    ev.count("steps", c.eval.steps, 1);
    ev.choice("target", c.eval.target, style_label_from_string);
    if (c.eval.target == StyleLabel::MT) throw ConfigError("/eval/target", "target must be H1 or H2");
    ev.count("classifier_paragraphs", c.eval.classifier_paragraphs, 10);
    ev.real("noise", c.eval.noise, 0.0);
    ev.path("dataset", c.eval.dataset);
    ev.path("prompts", c.eval.prompts);
    ev.count("feature_dim", c.eval.classifier.features.dim, 64);
    ev.count("classifier_epochs", c.eval.classifier.epochs, 1);
    ev.real("classifier_lr", c.eval.classifier.lr, 0.0);
    ev.flag("label_frequency", c.eval.metrics.label_frequency);
    ev.flag("conditional_flip", c.eval.metrics.conditional_flip);

    const auto pr = root.section("probe");
    pr.only({"n_per_class", "epochs", "lr", "l2", "train_fraction"});
    pr.count("n_per_class", c.probe.n_per_class, 2);
    pr.count("epochs", c.probe.options.epochs, 1);
    pr.real("lr", c.probe.options.lr, 0.0);
    pr.real("l2", c.probe.options.l2, 0.0);
    pr.real("train_fraction", c.probe.options.train_fraction, 0.0);
    if (!(c.probe.options.train_fraction < 1.0)) throw ConfigError("/probe/train_fraction", "must be < 1");
    c.probe.options.seed = c.seed;

    detail::require_file(c.model.weights, "/model/weights");
    detail::require_file(c.sae.weights, "/sae/weights");
    detail::require_file(c.contrastive.positive, "/contrastive/positive");
    detail::require_file(c.contrastive.negative, "/contrastive/negative");
    detail::require_file(c.steering.latent_stats, "/steering/latent_stats");
    detail::require_file(c.eval.dataset, "/eval/dataset");
    detail::require_file(c.eval.prompts, "/eval/prompts");
    return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("/", "cannot open config: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("/", std::string("malformed JSON: ") + e.what());
    }
    return experiment_config_from_json(j, std::filesystem::path(path).parent_path());
}

/// The effective settings, echoed into reports. The output directory is left
/// out so that the same experiment written to two places reports identically.
inline nlohmann::json to_json(const ExperimentConfig& c) {
    auto opt = [](const std::optional<std::string>& p) { return p ? nlohmann::json(*p) : nlohmann::json(); };
    nlohmann::json j;
    j["seed"] = c.seed;
    j["model"] = {{"weights", opt(c.model.weights)},
                  {"d", c.model.planted.d},
                  {"n_layers", c.model.planted.n_layers},
                  {"layer", c.model.planted.layer},
                  {"gain", c.model.planted.gain}};
    j["sae"] = {{"weights", opt(c.sae.weights)},
                {"layer", c.sae.layer},
                {"m", c.sae.train.m},
                {"l1_coeff", c.sae.train.l1_coeff},
                {"epochs", c.sae.train.epochs},
                {"lr", c.sae.train.lr},
                {"optimizer", to_string(c.sae.train.optimizer)},
                {"prompts_per_side", c.sae.prompts_per_side},
                {"steps", c.sae.steps}};
    j["contrastive"] = {{"n_per_side", c.contrastive.n_per_side},
                        {"k_total", c.contrastive.selection.k_total},
                        {"bins", c.contrastive.selection.bins},
                        {"k_per_side", c.contrastive.selection.k_per_side},
                        {"expectation", to_string(c.contrastive.selection.expectation)},
                        {"positive", opt(c.contrastive.positive)},
                        {"negative", opt(c.contrastive.negative)}};
    j["steering"] = {{"method", to_string(c.steering.method)},
                     {"mode", to_string(c.steering.mode)},
                     {"alphas", c.steering.alphas},
                     {"positions", to_string(c.steering.positions)},
                     {"latent_stats", opt(c.steering.latent_stats)}};
    j["eval"] = {{"n_prompts", c.eval.n_prompts},
                 {"steps", c.eval.steps},
                 {"target", to_string(c.eval.target)},
                 {"classifier_paragraphs", c.eval.classifier_paragraphs},
                 {"noise", c.eval.noise},
                 {"dataset", opt(c.eval.dataset)},
                 {"prompts", opt(c.eval.prompts)},
                 {"feature_dim", c.eval.classifier.features.dim},
                 {"classifier_epochs", c.eval.classifier.epochs},
                 {"classifier_lr", c.eval.classifier.lr},
                 {"label_frequency", c.eval.metrics.label_frequency},
                 {"conditional_flip", c.eval.metrics.conditional_flip}};
    j["probe"] = {{"n_per_class", c.probe.n_per_class},
                  {"epochs", c.probe.options.epochs},
                  {"lr", c.probe.options.lr},
                  {"l2", c.probe.options.l2},
                  {"train_fraction", c.probe.options.train_fraction}};
    return j;
}

// ---------------------------------------------------------------------------
// Stages

inline Rng stage_rng(std::uint64_t seed, std::string_view stage) { return Rng(seed ^ fnv1a64(stage)); }

template <class F>
auto run_stage(const char* stage, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const StageError&) {
        throw;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, e.what());
    }
}

inline std::vector<TokenSeq> read_prompt_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open prompt file: " + path);
    std::vector<TokenSeq> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        out.push_back(tok::encode(line));
    }
    if (out.empty()) throw std::runtime_error("no prompts in " + path);
    return out;
}

inline ToyModelParams stage_model(const ExperimentConfig& c) {
    return run_stage("model", [&] {
        if (c.model.weights) return load_toy_model(*c.model.weights);
        return build_world_model(c.seed, c.model.planted);
    });
}

/// Residuals at the SAE layer for every position of prompts-plus-continuation,
/// half the prompts carrying the trigger.
inline Matrix stage_sae_activations(const ToyModelParams& model, const ExperimentConfig& c) {
    return run_stage("sae-data", [&] {
        if (c.sae.layer >= model.n_layers()) throw std::invalid_argument("sae layer out of range");
        Rng rng = stage_rng(c.seed, "sae-data");
        std::vector<Vector> rows;
        for (bool trigger : {false, true})
            for (const auto& p : make_prompts(rng, c.sae.prompts_per_side, trigger)) {
                const TokenSeq full = generate(model, p, c.sae.steps);
                const ForwardResult r = forward(model, full);
                for (std::size_t t = 0; t < full.size(); ++t) rows.push_back(r.residuals[c.sae.layer].row_vector(t));
            }
        Matrix Z(rows.size(), model.d);
        for (std::size_t i = 0; i < rows.size(); ++i) Z.set_row(i, rows[i]);
        return Z;
    });
}

inline SaeParams stage_sae(const ToyModelParams& model, const ExperimentConfig& c,
                           std::vector<SaeEpochLog>* log = nullptr) {
    if (c.sae.weights) {
        return run_stage("load-sae", [&] {
            SaeParams sae = load_sae(*c.sae.weights);
            if (sae.d != model.d)
                throw DimensionError("SAE d=" + std::to_string(sae.d) + " but model d=" + std::to_string(model.d));
            return sae;
        });
    }
    const Matrix Z = stage_sae_activations(model, c);
    return run_stage("train-sae", [&] { return train_sae(Z, c.sae.train, log); });
}

inline ContrastiveSets stage_contrastive_sets(const ExperimentConfig& c) {
    return run_stage("contrastive", [&] {
        ContrastiveSets sets;
        sets.layer = c.sae.layer;
        if (c.contrastive.positive) {
            sets.positive_prompts = read_prompt_file(*c.contrastive.positive);
            sets.negative_prompts = read_prompt_file(*c.contrastive.negative);
        } else {
            Rng rng = stage_rng(c.seed, "contrastive");
            std::tie(sets.positive_prompts, sets.negative_prompts) =
                make_paired_prompts(rng, c.contrastive.n_per_side);
        }
        sets.validate();
        return sets;
    });
}

inline LatentStats stage_latent_stats(const ToyModelParams& model, const SaeParams& sae,
                                      const ContrastiveSets& sets, const ExperimentConfig& c) {
    if (c.steering.latent_stats) {
        return run_stage("load-latent-stats", [&] {
            std::ifstream in(*c.steering.latent_stats);
            return latent_stats_from_json(nlohmann::json::parse(in));
        });
    }
    return run_stage("extract-features", [&] {
        LatentStats s = select_features(collect_latents(model, sae, sets), c.contrastive.selection, sets.layer);
        return s;
    });
}

inline StyleClassifier stage_classifier(const ExperimentConfig& c) {
    return run_stage("classifier", [&] {
        if (c.eval.dataset) return train_style_classifier(ingest_jsonl(*c.eval.dataset), c.eval.classifier);
        Rng rng = stage_rng(c.seed, "classifier");
        return train_style_classifier(synthetic_paragraphs(rng, c.eval.classifier_paragraphs, c.eval.noise),
                                      c.eval.classifier);
    });
}

inline std::vector<TokenSeq> stage_eval_prompts(const ExperimentConfig& c) {
    return run_stage("eval-prompts", [&] {
        if (c.eval.prompts) return read_prompt_file(*c.eval.prompts);
        Rng rng = stage_rng(c.seed, "eval-prompts");
        return make_prompts(rng, c.eval.n_prompts, false);
    });
}

// ---------------------------------------------------------------------------
// Steering runs

struct SteerRun {
    double alpha = 0.0;
    std::optional<Intervention> intervention;  // empty for method none
};

/// Everything needed to steer: the SAE-side hand-off and the ActAdd direction.
struct SteeringAssets {
    std::shared_ptr<const SaeParams> sae;
    std::optional<LatentStats> stats;
    std::optional<Vector> actadd;
    std::size_t layer = 0;
};

inline SteeringAssets stage_steering_assets(const ToyModelParams& model, const ExperimentConfig& c,
                                            std::shared_ptr<const SaeParams> sae) {
    SteeringAssets a;
    a.layer = c.sae.layer;
    if (c.steering.method == SteerMethod::none) return a;
    const ContrastiveSets sets = stage_contrastive_sets(c);
    if (c.steering.method == SteerMethod::actadd) {
        a.actadd = run_stage("actadd", [&] {
            const auto zp = collect_activations(model, sets.positive_prompts, sets.layer);
            const auto zm = collect_activations(model, sets.negative_prompts, sets.layer);
            return actadd_delta(zp, zm);
        });
        return a;
    }
    if (!sae) throw StageError("steer", "SAE contrastive steering needs an SAE");
    a.sae = std::move(sae);
    a.stats = stage_latent_stats(model, *a.sae, sets, c);
    a.layer = a.stats->layer;
    return a;
}

inline SteerRun make_run(const SteeringAssets& a, const ExperimentConfig& c, double alpha) {
    SteerRun r{alpha, std::nullopt};
    switch (c.steering.method) {
        case SteerMethod::none: break;
        case SteerMethod::actadd:
            r.intervention = make_intervention(ActAddSpec{a.layer, alpha, *a.actadd}, c.steering.positions);
            break;
        case SteerMethod::sae_contrastive:
            r.intervention = make_intervention(SteeringSpec::from_stats(*a.stats, alpha, c.steering.mode), a.sae,
                                               c.steering.positions);
            break;
    }
    return r;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalRun {
    std::optional<double> alpha;  // empty for the unsteered baseline
    MetricsReport report;
    std::vector<SampleRow> rows;
    std::vector<std::string> texts;
};

struct SweepResult {
    EvalRun baseline;
    std::vector<EvalRun> runs;
};

inline std::vector<std::string> continuations(const ToyModelParams& model, const std::vector<TokenSeq>& prompts,
                                              std::size_t steps, const std::optional<Intervention>& iv) {
    std::vector<std::string> out;
    out.reserve(prompts.size());
    for (const auto& p : prompts) out.push_back(tok::decode(generated_part(generate(model, p, steps, iv), p.size())));
    return out;
}

/// Classifies each continuation, scores it against the target-style
/// rendering of the prompt's content chain and aggregates.
inline EvalRun evaluate_texts(const StyleClassifier& clf, const std::vector<TokenSeq>& prompts,
                              std::vector<std::string> texts, std::span<const StyleLabel> baseline_labels,
                              const ExperimentConfig& c) {
    EvalRun run;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        SampleRow row;
        row.id = i;
        row.dist = clf.classify(texts[i]);
        row.steered_label = row.dist.argmax();
        row.baseline_label = baseline_labels.empty() ? row.steered_label : baseline_labels[i];
        row.quality = quality_proxy(texts[i], reference_continuation(prompts[i], c.eval.steps, c.eval.target));
        run.rows.push_back(row);
    }
    run.report = compute_report(run.rows, c.eval.target, c.eval.metrics);
    run.texts = std::move(texts);
    return run;
}

inline SweepResult run_sweep(const ToyModelParams& model, const StyleClassifier& clf,
                             const std::vector<TokenSeq>& prompts, const SteeringAssets& assets,
                             const ExperimentConfig& c) {
    return run_stage("evaluate", [&] {
        SweepResult res;
        res.baseline = evaluate_texts(clf, prompts, continuations(model, prompts, c.eval.steps, std::nullopt), {}, c);
        std::vector<StyleLabel> base;
        for (const auto& r : res.baseline.rows) base.push_back(r.steered_label);
        for (double alpha : c.steering.alphas) {
            const SteerRun sr = make_run(assets, c, alpha);
            EvalRun run = evaluate_texts(clf, prompts, continuations(model, prompts, c.eval.steps, sr.intervention),
                                         base, c);
            run.alpha = alpha;
            res.runs.push_back(std::move(run));
        }
        return res;
    });
}

// ---------------------------------------------------------------------------
// Probing

struct ProbeReport {
    ProbeSweepResult sweep;
    ProbeSweepResult control;  // same data, labels shuffled
};

/// Last-token activations at every layer for trigger (label 1) and plain
/// (label 0) prompts.
inline std::pair<std::vector<Matrix>, std::vector<std::size_t>> probe_dataset(const ToyModelParams& model,
                                                                              const ExperimentConfig& c) {
    Rng rng = stage_rng(c.seed, "probe");
    std::vector<TokenSeq> prompts = make_prompts(rng, c.probe.n_per_class, true);
    for (auto& p : make_prompts(rng, c.probe.n_per_class, false)) prompts.push_back(std::move(p));
    std::vector<Matrix> per_layer(model.n_layers(), Matrix(prompts.size(), model.d));
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        const auto acts = capture_all_layers(model, prompts[i]);
        for (std::size_t l = 0; l < acts.size(); ++l) per_layer[l].set_row(i, acts[l]);
        labels.push_back(i < c.probe.n_per_class ? 1 : 0);
    }
    return {std::move(per_layer), std::move(labels)};
}

inline ProbeReport stage_probe(const ToyModelParams& model, const ExperimentConfig& c) {
    return run_stage("probe-sweep", [&] {
        auto [per_layer, labels] = probe_dataset(model, c);
        ProbeReport r;
        r.sweep = probe_sweep(per_layer, labels, c.probe.options);
        Rng rng = stage_rng(c.seed, "probe-control");
        rng.shuffle(std::span<std::size_t>(labels));
        r.control = probe_sweep(per_layer, labels, c.probe.options);
        return r;
    });
}

// ---------------------------------------------------------------------------
// Artifacts

namespace artifacts {
inline constexpr const char* model = "model.bin";
inline constexpr const char* sae = "sae.bin";
inline constexpr const char* sae_log = "sae_log.csv";
inline constexpr const char* latent_stats = "latent_stats.json";
inline constexpr const char* steering_spec = "steering_spec.json";
inline constexpr const char* report = "report.json";
inline constexpr const char* sweep = "sweep.csv";
inline constexpr const char* generations = "generations.jsonl";
inline constexpr const char* probe = "probe.json";
inline constexpr const char* probe_csv = "probe.csv";
}  // namespace artifacts

class OutputDir {
public:
    explicit OutputDir(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
    }

    std::string path(std::string_view name) const { return (dir_ / name).string(); }

    void write(std::string_view name, const std::string& content) const {
        std::ofstream out(path(name), std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + path(name));
        out << content;
    }

    void write_json(std::string_view name, const nlohmann::json& j) const { write(name, j.dump(2) + "\n"); }

private:
    std::filesystem::path dir_;
};

inline std::string sae_log_csv(const std::vector<SaeEpochLog>& log) {
    std::ostringstream os;
    os << "epoch,reconstruction,sparsity,mse,mean_active\n";
    for (const auto& e : log)
        os << e.epoch << ',' << format_real(e.reconstruction) << ',' << format_real(e.sparsity) << ','
           << format_real(e.mse) << ',' << format_real(e.mean_active) << '\n';
    return os.str();
}

inline std::string sweep_csv(const SweepResult& r) {
    std::ostringstream os;
    os << "alpha,H,P,P_flip,quality\n";
    for (const auto& run : r.runs)
        os << format_real(*run.alpha) << ',' << format_real(run.report.H) << ',' << format_real(run.report.P) << ','
           << format_real(run.report.P_flip) << ',' << format_real(run.report.quality) << '\n';
    return os.str();
}

inline nlohmann::json report_json(const SweepResult& r, const ExperimentConfig& c) {
    nlohmann::json j;
    j["config"] = to_json(c);
    j["baseline"] = to_json(r.baseline.report);
    j["runs"] = nlohmann::json::array();
    for (const auto& run : r.runs) j["runs"].push_back({{"alpha", *run.alpha}, {"report", to_json(run.report)}});
    return j;
}

inline std::string generations_jsonl(const SweepResult& r, const std::vector<TokenSeq>& prompts) {
    std::ostringstream os;
    auto emit = [&](const EvalRun& run) {
        for (std::size_t i = 0; i < run.texts.size(); ++i) {
            nlohmann::json j{{"alpha", run.alpha ? nlohmann::json(*run.alpha) : nlohmann::json()},
                             {"id", i},
                             {"prompt", tok::decode(prompts[i])},
                             {"text", run.texts[i]},
                             {"label", to_string(run.rows[i].steered_label)}};
            os << j.dump() << '\n';
        }
    };
    emit(r.baseline);
    for (const auto& run : r.runs) emit(run);
    return os.str();
}

inline void write_sweep(const OutputDir& out, const SweepResult& r, const std::vector<TokenSeq>& prompts,
                        const ExperimentConfig& c) {
    out.write_json(artifacts::report, report_json(r, c));
    out.write(artifacts::sweep, sweep_csv(r));
    out.write("samples_baseline.csv", samples_csv(r.baseline.rows));
    for (std::size_t i = 0; i < r.runs.size(); ++i) out.write("samples_" + std::to_string(i) + ".csv", samples_csv(r.runs[i].rows));
    out.write(artifacts::generations, generations_jsonl(r, prompts));
}

inline nlohmann::json probe_json(const ProbeReport& p) {
    return {{"accuracy", p.sweep.accuracy},
            {"best_layer", p.sweep.best_layer},
            {"control", {{"accuracy", p.control.accuracy}, {"best_layer", p.control.best_layer}}}};
}

inline std::string probe_csv(const ProbeReport& p) {
    std::ostringstream os;
    os << "layer,accuracy,control_accuracy\n";
    for (std::size_t l = 0; l < p.sweep.accuracy.size(); ++l)
        os << l << ',' << format_real(p.sweep.accuracy[l]) << ',' << format_real(p.control.accuracy[l]) << '\n';
    return os.str();
}

/// SteeringSpec document for the first alpha of the sweep.
inline nlohmann::json steering_spec_json(const LatentStats& stats, const ExperimentConfig& c) {
    const SteeringSpec spec = SteeringSpec::from_stats(stats, c.steering.alphas.front(), c.steering.mode);
    return to_json(spec, &stats);
}

// ---------------------------------------------------------------------------
// Commands. Each writes its artifacts into `c.out` and returns nothing; any
// failure surfaces as ConfigError or StageError.

inline void cmd_train_sae(const ExperimentConfig& c) {
    const OutputDir out(c.out);
    const ToyModelParams model = stage_model(c);
    std::vector<SaeEpochLog> log;
    const SaeParams sae = stage_sae(model, c, &log);
    save_toy_model(model, out.path(artifacts::model));
    save_sae(sae, out.path(artifacts::sae));
    if (!log.empty()) out.write(artifacts::sae_log, sae_log_csv(log));
}

inline ProbeReport cmd_probe_sweep(const ExperimentConfig& c) {
    const OutputDir out(c.out);
    const ToyModelParams model = stage_model(c);
    const ProbeReport p = stage_probe(model, c);
    out.write_json(artifacts::probe, probe_json(p));
    out.write(artifacts::probe_csv, probe_csv(p));
    return p;
}

inline LatentStats cmd_extract_features(const ExperimentConfig& c) {
    const OutputDir out(c.out);
    const ToyModelParams model = stage_model(c);
    std::vector<SaeEpochLog> log;
    const SaeParams sae = stage_sae(model, c, &log);
    if (!c.sae.weights) save_sae(sae, out.path(artifacts::sae));
    const LatentStats stats = run_stage("extract-features", [&] {
        const ContrastiveSets sets = stage_contrastive_sets(c);
        return select_features(collect_latents(model, sae, sets), c.contrastive.selection, sets.layer);
    });
    out.write_json(artifacts::latent_stats, to_json(stats));
    out.write_json(artifacts::steering_spec, steering_spec_json(stats, c));
    return stats;
}

/// Steered continuations for the eval prompts at every alpha, unclassified.
inline void cmd_steer(const ExperimentConfig& c) {
    const OutputDir out(c.out);
    const ToyModelParams model = stage_model(c);
    std::shared_ptr<const SaeParams> sae;
    if (c.steering.method == SteerMethod::sae_contrastive) sae = std::make_shared<SaeParams>(stage_sae(model, c));
    const SteeringAssets assets = stage_steering_assets(model, c, sae);
    if (assets.stats) out.write_json(artifacts::steering_spec, steering_spec_json(*assets.stats, c));
    const auto prompts = stage_eval_prompts(c);
    std::ostringstream os;
    run_stage("steer", [&] {
        for (double alpha : c.steering.alphas) {
            const SteerRun sr = make_run(assets, c, alpha);
            const auto texts = continuations(model, prompts, c.eval.steps, sr.intervention);
            for (std::size_t i = 0; i < texts.size(); ++i)
                os << nlohmann::json{{"alpha", alpha}, {"id", i}, {"prompt", tok::decode(prompts[i])}, {"text", texts[i]}}
                          .dump()
                   << '\n';
        }
        return 0;
    });
    out.write(artifacts::generations, os.str());
}

inline SweepResult cmd_evaluate(const ExperimentConfig& c) {
    const OutputDir out(c.out);
    const ToyModelParams model = stage_model(c);
    std::shared_ptr<const SaeParams> sae;
    if (c.steering.method == SteerMethod::sae_contrastive) sae = std::make_shared<SaeParams>(stage_sae(model, c));
    const SteeringAssets assets = stage_steering_assets(model, c, sae);
    const StyleClassifier clf = stage_classifier(c);
    const auto prompts = stage_eval_prompts(c);
    SweepResult r = run_sweep(model, clf, prompts, assets, c);
    write_sweep(out, r, prompts, c);
    return r;
}

/// The whole pipeline: model, SAE, feature selection, sweep and probes.
inline SweepResult cmd_synth_demo(const ExperimentConfig& c) {
    const OutputDir out(c.out);
    const ToyModelParams model = stage_model(c);
    save_toy_model(model, out.path(artifacts::model));
    std::vector<SaeEpochLog> log;
    auto sae = std::make_shared<SaeParams>(stage_sae(model, c, &log));
    save_sae(*sae, out.path(artifacts::sae));
    if (!log.empty()) out.write(artifacts::sae_log, sae_log_csv(log));

    const SteeringAssets assets = stage_steering_assets(model, c, sae);
    if (assets.stats) {
        out.write_json(artifacts::latent_stats, to_json(*assets.stats));
        out.write_json(artifacts::steering_spec, steering_spec_json(*assets.stats, c));
    }
    const StyleClassifier clf = stage_classifier(c);
    const auto prompts = stage_eval_prompts(c);
    SweepResult r = run_sweep(model, clf, prompts, assets, c);
    write_sweep(out, r, prompts, c);

    const ProbeReport p = stage_probe(model, c);
    out.write_json(artifacts::probe, probe_json(p));
    out.write(artifacts::probe_csv, probe_csv(p));
    return r;
}

}  // namespace steerkit
