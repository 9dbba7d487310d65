#pragma once

// Contrastive latent collection, mutual-information feature scoring and
// promoted/demoted latent selection.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "steerkit/model.hpp"
#include "steerkit/numerics.hpp"
#include "steerkit/sae.hpp"

namespace steerkit {

struct ContrastiveSets {
    std::vector<TokenSeq> positive_prompts;  // style of interest
    std::vector<TokenSeq> negative_prompts;  // baseline behaviour
    std::size_t layer = 0;

    void validate() const {
        if (positive_prompts.empty() || negative_prompts.empty())
            throw std::invalid_argument("ContrastiveSets: both prompt sets must be nonempty");
        if (positive_prompts.size() != negative_prompts.size())
            throw std::invalid_argument("ContrastiveSets: positive and negative sets differ in size (" +
                                        std::to_string(positive_prompts.size()) + " vs " +
                                        std::to_string(negative_prompts.size()) + ")");
    }
};

struct LatentCollections {
    std::vector<SparseLatents> plus;
    std::vector<SparseLatents> minus;

    std::size_t m() const { return plus.empty() ? 0 : plus.front().values.size(); }
};

/// Last-prompt-token activations of `layer` for each prompt, in order.
inline std::vector<Vector> collect_activations(const ToyModelParams& model, std::span<const TokenSeq> prompts,
                                               std::size_t layer) {
    std::vector<Vector> out;
    out.reserve(prompts.size());
    for (const auto& p : prompts) out.push_back(forward_capture(model, p, HookPoint{layer}).second);
    return out;
}

inline LatentCollections collect_latents(const ToyModelParams& model, const SaeParams& sae,
                                         const ContrastiveSets& sets) {
    sets.validate();
    if (sae.d != model.d)
        throw DimensionError("collect_latents: SAE d=" + std::to_string(sae.d) + " but model d=" +
                             std::to_string(model.d));
    if (sets.layer >= model.n_layers()) throw std::invalid_argument("collect_latents: layer out of range");
    LatentCollections c;
    for (const auto& z : collect_activations(model, sets.positive_prompts, sets.layer))
        c.plus.push_back(encode(sae, z));
    for (const auto& z : collect_activations(model, sets.negative_prompts, sets.layer))
        c.minus.push_back(encode(sae, z));
    return c;
}

// ---------------------------------------------------------------------------
// Plug-in mutual information between one feature and the binary label.
//
// Exact zeros (inactive latents) go to a dedicated bin 0. Every other value
// goes to one of `bins` equal-width bins spanning the min..max of the
// nonzero values (bins 1..bins; the maximum lands in the last bin).

struct FeatureBinning {
    double lo = 0.0;
    double hi = 0.0;
    std::size_t bins = 0;

    static FeatureBinning fit(std::span<const double> a, std::span<const double> b, std::size_t bins) {
        FeatureBinning f{0.0, 0.0, bins};
        bool any = false;
        for (auto side : {a, b})
            for (double v : side) {
                if (v == 0.0) continue;
                if (!any) {
                    f.lo = f.hi = v;
                    any = true;
                } else {
                    f.lo = std::min(f.lo, v);
                    f.hi = std::max(f.hi, v);
                }
            }
        return f;
    }

    std::size_t total_bins() const { return bins + 1; }

    std::size_t bin(double v) const {
        if (v == 0.0) return 0;
        if (!(hi > lo)) return 1;
        const double t = (v - lo) / (hi - lo) * static_cast<double>(bins);
        auto b = static_cast<std::size_t>(std::floor(t));
        return 1 + std::min(b, bins - 1);
    }
};

/// Joint counts, indexed [bin][label] with label 0 = "+", 1 = "-".
inline std::vector<std::array<std::size_t, 2>> joint_counts(std::span<const double> plus,
                                                            std::span<const double> minus,
                                                            const FeatureBinning& binning) {
    std::vector<std::array<std::size_t, 2>> counts(binning.total_bins(), {0, 0});
    for (double v : plus) ++counts[binning.bin(v)][0];
    for (double v : minus) ++counts[binning.bin(v)][1];
    return counts;
}

/// I(X;Y) in bits from joint counts; 0 log 0 := 0. Terms are summed bin by
/// bin, "+" before "-". Tiny negative rounding results are clamped to 0.
inline double mutual_information_from_counts(std::span<const std::array<std::size_t, 2>> counts) {
    std::size_t n_y[2] = {0, 0};
    for (const auto& c : counts) {
        n_y[0] += c[0];
        n_y[1] += c[1];
    }
    const double n = static_cast<double>(n_y[0] + n_y[1]);
    if (n == 0.0) return 0.0;
    double mi = 0.0;
    for (const auto& c : counts) {
        const double n_b = static_cast<double>(c[0] + c[1]);
        for (int y = 0; y < 2; ++y) {
            if (c[y] == 0) continue;
            const double n_by = static_cast<double>(c[y]);
            mi += (n_by / n) * std::log2((n_by * n) / (n_b * static_cast<double>(n_y[y])));
        }
    }
    return std::max(0.0, mi);
}

inline double mutual_information(std::span<const double> values_plus, std::span<const double> values_minus,
                                 std::size_t bins) {
    if (bins < 2) throw std::invalid_argument("mutual_information: bins must be >= 2");
    const auto binning = FeatureBinning::fit(values_plus, values_minus, bins);
    const auto counts = joint_counts(values_plus, values_minus, binning);
    return mutual_information_from_counts(counts);
}

// ---------------------------------------------------------------------------

enum class ExpectationMode {
    include_zeros,  // mean over every sample
    active_only,    // mean over samples where the latent fired
};

inline std::vector<double> expected_logits(std::span<const SparseLatents> collection,
                                           std::span<const std::size_t> indices,
                                           ExpectationMode mode = ExpectationMode::include_zeros) {
    if (collection.empty()) throw std::invalid_argument("expected_logits: empty collection");
    const std::size_t m = collection.front().values.size();
    std::vector<double> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) {
        if (i >= m)
            throw std::invalid_argument("expected_logits: latent index " + std::to_string(i) + " >= m=" +
                                        std::to_string(m));
        double sum = 0.0;
        std::size_t count = 0;
        for (const auto& x : collection) {
            const double v = x.values[i];
            sum += v;
            count += mode == ExpectationMode::include_zeros || v > 0.0;
        }
        out.push_back(count ? sum / static_cast<double>(count) : 0.0);
    }
    return out;
}

struct LatentStats {
    std::size_t layer = 0;
    double alpha_default = 5.0;
    Vector mi_scores;  // m
    std::vector<std::pair<std::size_t, double>> promoted;  // (index, E+)
    std::vector<std::pair<std::size_t, double>> demoted;   // (index, E-)
    bool shortfall = false;      // fewer qualifying latents than requested
    bool uninformative = false;  // nothing selected, or every selected latent has MI 0

    bool operator==(const LatentStats&) const = default;
};

struct SelectionOptions {
    std::size_t k_total = 40;
    std::size_t bins = 5;
    // false: k_total is split evenly between promoted and demoted.
    // true: k_total latents are selected on each side.
    bool k_per_side = false;
    ExpectationMode expectation = ExpectationMode::include_zeros;
};

inline LatentStats select_features(const LatentCollections& collections, const SelectionOptions& opt,
                                   std::size_t layer = 0) {
    if (collections.plus.empty() || collections.minus.empty())
        throw std::invalid_argument("select_features: both collections must be nonempty");
    const std::size_t m = collections.m();
    for (auto side : {&collections.plus, &collections.minus})
        for (const auto& x : *side)
            if (x.values.size() != m) throw DimensionError("select_features: latent widths differ");
    if (!opt.k_per_side && opt.k_total % 2 != 0) throw std::invalid_argument("select_features: k_total must be even");
    if (opt.k_total > m)
        throw std::invalid_argument("select_features: k_total=" + std::to_string(opt.k_total) + " exceeds m=" +
                                    std::to_string(m));
    const std::size_t per_side = opt.k_per_side ? opt.k_total : opt.k_total / 2;

    LatentStats stats;
    stats.layer = layer;
    stats.mi_scores = Vector(m);

    struct Candidate {
        std::size_t index;
        double mi;
        double mean_plus;
        double mean_minus;
    };
    std::vector<Candidate> pool;
    std::vector<double> vp(collections.plus.size()), vm(collections.minus.size());
    for (std::size_t i = 0; i < m; ++i) {
        bool active = false;
        double sp = 0.0, sm = 0.0;
        for (std::size_t n = 0; n < vp.size(); ++n) {
            vp[n] = collections.plus[n].values[i];
            active |= vp[n] > 0.0;
            sp += vp[n];
        }
        for (std::size_t n = 0; n < vm.size(); ++n) {
            vm[n] = collections.minus[n].values[i];
            active |= vm[n] > 0.0;
            sm += vm[n];
        }
        if (!active) continue;
        const double mi = mutual_information(vp, vm, opt.bins);
        stats.mi_scores[i] = mi;
        pool.push_back({i, mi, sp / static_cast<double>(vp.size()), sm / static_cast<double>(vm.size())});
    }
    std::stable_sort(pool.begin(), pool.end(), [](const Candidate& a, const Candidate& b) {
        if (a.mi != b.mi) return a.mi > b.mi;
        return a.index < b.index;
    });

    std::vector<std::size_t> promoted, demoted;
    for (const auto& c : pool) {
        if (c.mean_plus > c.mean_minus && promoted.size() < per_side) promoted.push_back(c.index);
        else if (c.mean_minus > c.mean_plus && demoted.size() < per_side) demoted.push_back(c.index);
    }
    const auto e_plus = expected_logits(collections.plus, promoted, opt.expectation);
    const auto e_minus = expected_logits(collections.minus, demoted, opt.expectation);
    for (std::size_t j = 0; j < promoted.size(); ++j) stats.promoted.emplace_back(promoted[j], e_plus[j]);
    for (std::size_t j = 0; j < demoted.size(); ++j) stats.demoted.emplace_back(demoted[j], e_minus[j]);

    stats.shortfall = promoted.size() < per_side || demoted.size() < per_side;
    bool any_info = false;
    for (std::size_t i : promoted) any_info |= stats.mi_scores[i] > 0.0;
    for (std::size_t i : demoted) any_info |= stats.mi_scores[i] > 0.0;
    stats.uninformative = !any_info;
    return stats;
}

// ---------------------------------------------------------------------------
// JSON hand-off:
// {"layer", "alpha_default", "m", "promoted": [[i, e], ...], "demoted": [...],
//  "mi": {"i": score, ...}, "shortfall", "uninformative"}
// Latents absent from "mi" scored 0.

inline nlohmann::json to_json(const LatentStats& s) {
    nlohmann::json j;
    j["layer"] = s.layer;
    j["alpha_default"] = s.alpha_default;
    j["m"] = s.mi_scores.size();
    j["promoted"] = nlohmann::json::array();
    for (auto [i, e] : s.promoted) j["promoted"].push_back({i, e});
    j["demoted"] = nlohmann::json::array();
    for (auto [i, e] : s.demoted) j["demoted"].push_back({i, e});
    j["mi"] = nlohmann::json::object();
    for (std::size_t i = 0; i < s.mi_scores.size(); ++i)
        if (s.mi_scores[i] != 0.0) j["mi"][std::to_string(i)] = s.mi_scores[i];
    j["shortfall"] = s.shortfall;
    j["uninformative"] = s.uninformative;
    return j;
}

namespace detail {
inline std::vector<std::pair<std::size_t, double>> index_value_pairs(const nlohmann::json& arr, const char* key) {
    if (!arr.is_array()) throw std::invalid_argument(std::string("/") + key + ": expected array");
    std::vector<std::pair<std::size_t, double>> out;
    for (std::size_t n = 0; n < arr.size(); ++n) {
        const auto& e = arr[n];
        if (!e.is_array() || e.size() != 2 || !e[0].is_number_unsigned() || !e[1].is_number())
            throw std::invalid_argument(std::string("/") + key + "/" + std::to_string(n) +
                                        ": expected [index, expectation]");
        out.emplace_back(e[0].get<std::size_t>(), e[1].get<double>());
    }
    return out;
}
}  // namespace detail

inline LatentStats latent_stats_from_json(const nlohmann::json& j) {
    LatentStats s;
    if (!j.is_object()) throw std::invalid_argument("/: expected object");
    for (const char* key : {"layer", "promoted", "demoted"})
        if (!j.contains(key)) throw std::invalid_argument(std::string("/") + key + ": missing");
    s.layer = j.at("layer").get<std::size_t>();
    s.alpha_default = j.value("alpha_default", 5.0);
    s.promoted = detail::index_value_pairs(j.at("promoted"), "promoted");
    s.demoted = detail::index_value_pairs(j.at("demoted"), "demoted");
    std::size_t m = j.value("m", std::size_t{0});
    if (j.contains("mi")) {
        for (const auto& [k, v] : j.at("mi").items()) m = std::max(m, std::stoul(k) + 1);
        s.mi_scores = Vector(m);
        for (const auto& [k, v] : j.at("mi").items()) s.mi_scores[std::stoul(k)] = v.get<double>();
    } else {
        s.mi_scores = Vector(m);
    }
    s.shortfall = j.value("shortfall", false);
    s.uninformative = j.value("uninformative", false);
    return s;
}

}  // namespace steerkit
