#pragma once

// Dataset loading, the three-way style classifier, personalization metrics,
// a character n-gram quality proxy, and layer-wise linear probing.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "steerkit/numerics.hpp"

namespace steerkit {

struct ParallelParagraph {
    std::string source;
    std::string h1;
    std::string h2;
    std::optional<std::string> mt;
    std::string language;

    bool operator==(const ParallelParagraph&) const = default;
};

class DatasetError : public std::runtime_error {
public:
    DatasetError(std::size_t line, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

struct IngestIssue {
    std::size_t line;
    std::string message;
};

/// One JSON object per line with keys source, h1, h2, optional mt, language.
/// Blank lines are ignored. A bad line rejects the whole file unless
/// `lenient`, in which case it is skipped and reported through `issues`.
inline std::vector<ParallelParagraph> ingest_jsonl(const std::string& path, bool lenient = false,
                                                   std::vector<IngestIssue>* issues = nullptr) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset: " + path);
    std::vector<ParallelParagraph> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            if (!j.is_object()) throw std::invalid_argument("expected a JSON object");
            ParallelParagraph p;
            for (const char* key : {"source", "h1", "h2"}) {
                if (!j.contains(key)) throw std::invalid_argument(std::string("missing required key \"") + key + "\"");
                if (!j.at(key).is_string()) throw std::invalid_argument(std::string("key \"") + key + "\" must be a string");
            }
            p.source = j.at("source").get<std::string>();
            p.h1 = j.at("h1").get<std::string>();
            p.h2 = j.at("h2").get<std::string>();
            if (p.source.empty() || p.h1.empty() || p.h2.empty())
                throw std::invalid_argument("source, h1 and h2 must be nonempty");
            if (j.contains("mt") && !j.at("mt").is_null()) {
                if (!j.at("mt").is_string()) throw std::invalid_argument("key \"mt\" must be a string");
                p.mt = j.at("mt").get<std::string>();
            }
            p.language = j.value("language", std::string());
            out.push_back(std::move(p));
        } catch (const std::exception& e) {
            if (!lenient) throw DatasetError(lineno, e.what());
            if (issues) issues->push_back({lineno, e.what()});
        }
    }
    return out;
}

inline void write_jsonl(const std::vector<ParallelParagraph>& rows, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write dataset: " + path);
    for (const auto& p : rows) {
        nlohmann::json j{{"source", p.source}, {"h1", p.h1}, {"h2", p.h2}, {"language", p.language}};
        if (p.mt) j["mt"] = *p.mt;
        out << j.dump() << '\n';
    }
}

// ---------------------------------------------------------------------------
// Style labels and distributions

enum class StyleLabel { MT = 0, H1 = 1, H2 = 2 };

inline std::string to_string(StyleLabel l) {
    switch (l) {
        case StyleLabel::MT: return "MT";
        case StyleLabel::H1: return "H1";
        case StyleLabel::H2: return "H2";
    }
    return "MT";
}

inline StyleLabel style_label_from_string(std::string_view s) {
    if (s == "MT") return StyleLabel::MT;
    if (s == "H1") return StyleLabel::H1;
    if (s == "H2") return StyleLabel::H2;
    throw std::invalid_argument("unknown style label: " + std::string(s));
}

struct StyleDistribution {
    double p_mt = 1.0 / 3.0;
    double p_h1 = 1.0 / 3.0;
    double p_h2 = 1.0 / 3.0;

    double at(StyleLabel l) const {
        switch (l) {
            case StyleLabel::MT: return p_mt;
            case StyleLabel::H1: return p_h1;
            case StyleLabel::H2: return p_h2;
        }
        return 0.0;
    }

    // Ties resolve in MT, H1, H2 order.
    StyleLabel argmax() const {
        if (p_mt >= p_h1 && p_mt >= p_h2) return StyleLabel::MT;
        return p_h1 >= p_h2 ? StyleLabel::H1 : StyleLabel::H2;
    }
};

// ---------------------------------------------------------------------------
// Hashed character n-gram features

inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

struct NgramFeatureOptions {
    std::size_t n_min = 1;
    std::size_t n_max = 4;
    std::size_t dim = 4096;
};

/// Counts of every byte n-gram (n_min..n_max) hashed into `dim` buckets by
/// FNV-1a 64 modulo dim, then L2-normalised. Empty text gives zeros.
inline Vector char_ngram_features(std::string_view text, const NgramFeatureOptions& opt = {}) {
    if (opt.dim < 64) throw std::invalid_argument("char_ngram_features: dim must be >= 64");
    if (opt.n_min == 0 || opt.n_min > opt.n_max) throw std::invalid_argument("char_ngram_features: bad n range");
    Vector v(opt.dim);
    for (std::size_t n = opt.n_min; n <= opt.n_max; ++n) {
        if (text.size() < n) break;
        for (std::size_t i = 0; i + n <= text.size(); ++i) v[fnv1a64(text.substr(i, n)) % opt.dim] += 1.0;
    }
    const double nrm = norm2(v);
    if (nrm > 0.0) v *= 1.0 / nrm;
    return v;
}

struct StyleClassifier {
    LogisticModel model;
    NgramFeatureOptions features;

    StyleDistribution classify(std::string_view text) const {
        const Vector p = model.predict(char_ngram_features(text, features));
        return {p[0], p[1], p[2]};
    }
    StyleLabel predict(std::string_view text) const { return classify(text).argmax(); }
};

struct ClassifierOptions {
    NgramFeatureOptions features;
    std::size_t epochs = 300;
    double lr = 2.0;
    double l2 = 1e-4;
};

/// Three-way logistic classifier over one MT, one H1 and one H2 instance per
/// paragraph, so classes are balanced by construction.
inline StyleClassifier train_style_classifier(const std::vector<ParallelParagraph>& paragraphs,
                                              const ClassifierOptions& opt = {}) {
    if (paragraphs.size() < 10)
        throw std::invalid_argument("train_style_classifier: need at least 10 paragraphs, got " +
                                    std::to_string(paragraphs.size()));
    for (std::size_t i = 0; i < paragraphs.size(); ++i)
        if (!paragraphs[i].mt)
            throw std::invalid_argument("train_style_classifier: paragraph " + std::to_string(i) + " has no mt text");
    Matrix X(3 * paragraphs.size(), opt.features.dim);
    std::vector<std::size_t> y;
    y.reserve(3 * paragraphs.size());
    std::size_t row = 0;
    for (const auto& p : paragraphs) {
        for (auto [text, label] : {std::pair<const std::string*, StyleLabel>{&*p.mt, StyleLabel::MT},
                                   {&p.h1, StyleLabel::H1},
                                   {&p.h2, StyleLabel::H2}}) {
            X.set_row(row++, char_ngram_features(*text, opt.features));
            y.push_back(static_cast<std::size_t>(label));
        }
    }
    return {train_logistic(X, y, LogisticOptions{opt.epochs, opt.lr, opt.l2, 3}), opt.features};
}

// ---------------------------------------------------------------------------
// Personalization metrics

inline double metric_H(std::span<const StyleDistribution> dists) {
    if (dists.empty()) throw std::invalid_argument("metric_H: empty input");
    double s = 0.0;
    for (const auto& d : dists) s += d.p_h1 + d.p_h2;
    return s / static_cast<double>(dists.size());
}

inline double metric_P(std::span<const StyleDistribution> dists, StyleLabel target) {
    if (dists.empty()) throw std::invalid_argument("metric_P: empty input");
    if (target == StyleLabel::MT) throw std::invalid_argument("metric_P: target must be H1 or H2");
    double s = 0.0;
    for (const auto& d : dists) s += d.at(target);
    return s / static_cast<double>(dists.size());
}

// Label-frequency variants of H and P.
inline double metric_H_labels(std::span<const StyleLabel> labels) {
    if (labels.empty()) throw std::invalid_argument("metric_H: empty input");
    const auto n = std::count_if(labels.begin(), labels.end(), [](StyleLabel l) { return l != StyleLabel::MT; });
    return static_cast<double>(n) / static_cast<double>(labels.size());
}

inline double metric_P_labels(std::span<const StyleLabel> labels, StyleLabel target) {
    if (labels.empty()) throw std::invalid_argument("metric_P: empty input");
    const auto n = std::count(labels.begin(), labels.end(), target);
    return static_cast<double>(n) / static_cast<double>(labels.size());
}

/// Fraction of samples whose label goes from MT (baseline) to `target`
/// (steered). The denominator is every sample, or only baseline-MT samples
/// when `conditional`.
inline double metric_P_flip(std::span<const StyleLabel> baseline, std::span<const StyleLabel> steered,
                            StyleLabel target, bool conditional = false) {
    if (baseline.size() != steered.size())
        throw std::invalid_argument("metric_P_flip: label lists differ in length");
    std::size_t flips = 0, denom = 0;
    for (std::size_t i = 0; i < baseline.size(); ++i) {
        const bool from_mt = baseline[i] == StyleLabel::MT;
        if (!conditional || from_mt) ++denom;
        flips += from_mt && steered[i] == target;
    }
    return denom ? static_cast<double>(flips) / static_cast<double>(denom) : 0.0;
}

// ---------------------------------------------------------------------------
// chrF-style quality proxy: character n-grams n = 1..6 (whitespace removed),
// precision and recall averaged over the orders where each is defined, then
// F-beta with beta = 2, scaled to 0..100. Not a learned quality metric.

namespace detail {
inline std::map<std::string, std::size_t> char_ngrams(const std::string& s, std::size_t n) {
    std::map<std::string, std::size_t> out;
    for (std::size_t i = 0; i + n <= s.size(); ++i) ++out[s.substr(i, n)];
    return out;
}

inline std::string strip_space(std::string_view s) {
    std::string out;
    for (char c : s)
        if (!std::isspace(static_cast<unsigned char>(c))) out.push_back(c);
    return out;
}
}  // namespace detail

inline double quality_proxy(std::string_view candidate, std::string_view reference, std::size_t max_n = 6,
                            double beta = 2.0) {
    const std::string cand = detail::strip_space(candidate);
    const std::string ref = detail::strip_space(reference);
    if (cand == ref) return 100.0;
    double p_sum = 0.0, r_sum = 0.0;
    std::size_t p_orders = 0, r_orders = 0;
    for (std::size_t n = 1; n <= max_n; ++n) {
        const auto cg = detail::char_ngrams(cand, n);
        const auto rg = detail::char_ngrams(ref, n);
        std::size_t c_total = 0, r_total = 0, match = 0;
        for (const auto& [g, c] : cg) {
            c_total += c;
            if (auto it = rg.find(g); it != rg.end()) match += std::min(c, it->second);
        }
        for (const auto& [g, c] : rg) r_total += c;
        if (c_total) {
            p_sum += static_cast<double>(match) / static_cast<double>(c_total);
            ++p_orders;
        }
        if (r_total) {
            r_sum += static_cast<double>(match) / static_cast<double>(r_total);
            ++r_orders;
        }
    }
    if (!p_orders || !r_orders) return 0.0;
    const double p = p_sum / static_cast<double>(p_orders);
    const double r = r_sum / static_cast<double>(r_orders);
    if (p + r == 0.0) return 0.0;
    const double b2 = beta * beta;
    return 100.0 * (1.0 + b2) * p * r / (b2 * p + r);
}

// ---------------------------------------------------------------------------
// Reports

struct MetricsReport {
    double H = 0.0;
    double P = 0.0;
    double P_flip = 0.0;
    double quality = 0.0;
    std::size_t n = 0;
    StyleLabel target = StyleLabel::H1;
};

struct SampleRow {
    std::size_t id = 0;
    StyleLabel baseline_label = StyleLabel::MT;
    StyleLabel steered_label = StyleLabel::MT;
    StyleDistribution dist;
    double quality = 0.0;
};

struct MetricsOptions {
    bool label_frequency = false;   // H and P as label frequencies instead of probability means
    bool conditional_flip = false;  // P_flip over baseline-MT samples only
};

inline MetricsReport compute_report(std::span<const SampleRow> rows, StyleLabel target,
                                    const MetricsOptions& opt = {}) {
    if (rows.empty()) throw std::invalid_argument("compute_report: no samples");
    std::vector<StyleDistribution> dists;
    std::vector<StyleLabel> base, steered;
    double q = 0.0;
    for (const auto& r : rows) {
        dists.push_back(r.dist);
        base.push_back(r.baseline_label);
        steered.push_back(r.steered_label);
        q += r.quality;
    }
    MetricsReport rep;
    rep.target = target;
    rep.n = rows.size();
    rep.H = opt.label_frequency ? metric_H_labels(steered) : metric_H(dists);
    rep.P = opt.label_frequency ? metric_P_labels(steered, target) : metric_P(dists, target);
    rep.P_flip = metric_P_flip(base, steered, target, opt.conditional_flip);
    rep.quality = q / static_cast<double>(rows.size());
    return rep;
}

inline nlohmann::json to_json(const MetricsReport& r) {
    return {{"H", r.H}, {"P", r.P}, {"P_flip", r.P_flip}, {"quality", r.quality}, {"n", r.n},
            {"target", to_string(r.target)}};
}

inline MetricsReport metrics_report_from_json(const nlohmann::json& j) {
    MetricsReport r;
    r.H = j.at("H").get<double>();
    r.P = j.at("P").get<double>();
    r.P_flip = j.at("P_flip").get<double>();
    r.quality = j.at("quality").get<double>();
    r.n = j.at("n").get<std::size_t>();
    r.target = style_label_from_string(j.at("target").get<std::string>());
    return r;
}

inline std::string format_real(double x) {
    std::ostringstream os;
    os.precision(17);
    os << x;
    return os.str();
}

inline std::string samples_csv(std::span<const SampleRow> rows) {
    std::ostringstream os;
    os << "id,baseline_label,steered_label,p_mt,p_h1,p_h2,quality\n";
    for (const auto& r : rows)
        os << r.id << ',' << to_string(r.baseline_label) << ',' << to_string(r.steered_label) << ','
           << format_real(r.dist.p_mt) << ',' << format_real(r.dist.p_h1) << ',' << format_real(r.dist.p_h2) << ','
           << format_real(r.quality) << '\n';
    return os.str();
}

// ---------------------------------------------------------------------------
// Linear probes

struct ProbeOptions {
    std::size_t epochs = 300;
    double lr = 0.5;
    double l2 = 1e-3;
    double train_fraction = 0.8;
    std::uint64_t seed = 0;
};

/// Logistic probe over standardised activations.
struct LinearProbe {
    Vector mean;
    Vector scale;
    LogisticModel model;

    Vector standardize(const Vector& x) const {
        Vector out(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean[i]) / scale[i];
        return out;
    }
    std::size_t predict(const Vector& x) const { return model.predict_label(standardize(x)); }
    Vector predict_proba(const Vector& x) const { return model.predict(standardize(x)); }
};

inline LinearProbe train_probe(const Matrix& X, std::span<const std::size_t> labels, const ProbeOptions& opt = {}) {
    LinearProbe p;
    p.mean = mean_rows(X);
    p.scale = Vector(X.cols());
    for (std::size_t r = 0; r < X.rows(); ++r)
        for (std::size_t c = 0; c < X.cols(); ++c) {
            const double dx = X(r, c) - p.mean[c];
            p.scale[c] += dx * dx;
        }
    for (auto& s : p.scale) {
        s = std::sqrt(s / static_cast<double>(std::max<std::size_t>(X.rows(), 1)));
        if (s < 1e-9) s = 1.0;
    }
    Matrix Xs(X.rows(), X.cols());
    for (std::size_t r = 0; r < X.rows(); ++r) Xs.set_row(r, p.standardize(X.row_vector(r)));
    p.model = train_logistic(Xs, labels, LogisticOptions{opt.epochs, opt.lr, opt.l2, 0});
    return p;
}

inline double probe_accuracy(const LinearProbe& p, const Matrix& X, std::span<const std::size_t> labels) {
    if (X.rows() == 0) return 0.0;
    std::size_t hit = 0;
    for (std::size_t r = 0; r < X.rows(); ++r) hit += p.predict(X.row_vector(r)) == labels[r];
    return static_cast<double>(hit) / static_cast<double>(X.rows());
}

struct ProbeSweepResult {
    std::vector<double> accuracy;  // held-out, per layer
    std::size_t best_layer = 0;    // ties resolve to the lower layer
};

/// One probe per layer on a shared seeded 80/20 split of the samples.
inline ProbeSweepResult probe_sweep(const std::vector<Matrix>& per_layer, std::span<const std::size_t> labels,
                                    const ProbeOptions& opt = {}) {
    if (per_layer.empty()) throw std::invalid_argument("probe_sweep: no layers");
    const std::size_t n = labels.size();
    for (const auto& m : per_layer)
        if (m.rows() != n) throw std::invalid_argument("probe_sweep: sample count differs between layers");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(opt.seed);
    rng.shuffle(std::span<std::size_t>(order));
    const auto n_train = static_cast<std::size_t>(std::llround(opt.train_fraction * static_cast<double>(n)));
    if (n_train == 0 || n_train >= n) throw std::invalid_argument("probe_sweep: split leaves an empty side");

    std::vector<std::size_t> y_train, y_test;
    for (std::size_t i = 0; i < n; ++i) (i < n_train ? y_train : y_test).push_back(labels[order[i]]);
    if (std::all_of(y_train.begin(), y_train.end(), [&](std::size_t y) { return y == y_train.front(); }))
        throw std::invalid_argument("probe_sweep: training split needs at least two labels");

    ProbeSweepResult res;
    for (const auto& layer : per_layer) {
        Matrix tr(n_train, layer.cols()), te(n - n_train, layer.cols());
        for (std::size_t i = 0; i < n; ++i) {
            if (i < n_train) tr.set_row(i, layer.row_vector(order[i]));
            else te.set_row(i - n_train, layer.row_vector(order[i]));
        }
        const LinearProbe p = train_probe(tr, y_train, opt);
        res.accuracy.push_back(probe_accuracy(p, te, y_test));
    }
    res.best_layer = argmax(res.accuracy);
    return res;
}

}  // namespace steerkit
