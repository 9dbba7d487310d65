#pragma once

// Inference-time interventions: contrastive SAE latent clamping and the
// ActAdd mean-difference baseline.

#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"
#include "steerkit/contrastive.hpp"
#include "steerkit/model.hpp"
#include "steerkit/sae.hpp"

namespace steerkit {

enum class SteerMode {
    replace,  // alpha * decode(x_clamped)
    delta,    // z + alpha * (decode(x_clamped) - decode(x))
};

inline SteerMode steer_mode_from_string(std::string_view s) {
    if (s == "replace") return SteerMode::replace;
    if (s == "delta") return SteerMode::delta;
    throw std::invalid_argument("unknown steering mode: " + std::string(s));
}

inline std::string to_string(SteerMode m) { return m == SteerMode::replace ? "replace" : "delta"; }

struct SteeringSpec {
    std::size_t layer = 0;
    double alpha = 5.0;
    SteerMode mode = SteerMode::replace;
    std::vector<std::pair<std::size_t, double>> promoted;  // (latent, E+)
    std::vector<std::pair<std::size_t, double>> demoted;   // (latent, E-)

    static SteeringSpec from_stats(const LatentStats& s, double alpha, SteerMode mode) {
        return {s.layer, alpha, mode, s.promoted, s.demoted};
    }

    void validate() const {
        if (!(alpha >= 0.0)) throw std::invalid_argument("SteeringSpec: alpha must be >= 0");
        std::set<std::size_t> up;
        for (auto [i, e] : promoted) {
            if (e < 0.0) throw std::invalid_argument("SteeringSpec: negative expectation for latent " + std::to_string(i));
            up.insert(i);
        }
        for (auto [i, e] : demoted) {
            if (e < 0.0) throw std::invalid_argument("SteeringSpec: negative expectation for latent " + std::to_string(i));
            if (up.count(i)) throw std::invalid_argument("SteeringSpec: latent " + std::to_string(i) + " both promoted and demoted");
        }
    }

    bool operator==(const SteeringSpec&) const = default;
};

struct ActAddSpec {
    std::size_t layer = 0;
    double alpha = 2.0;
    Vector delta;

    bool operator==(const ActAddSpec&) const = default;
};

/// One-sided clamp of the selected latents: promoted latents are raised to
/// E+ when below it, demoted latents lowered to E- when above it.
inline Vector clamp_latents(Vector x, const SteeringSpec& spec) {
    for (auto [i, target] : spec.promoted) {
        if (i >= x.size()) throw std::invalid_argument("steer: promoted latent " + std::to_string(i) + " >= m");
        if (target > x[i]) x[i] = target;
    }
    for (auto [i, target] : spec.demoted) {
        if (i >= x.size()) throw std::invalid_argument("steer: demoted latent " + std::to_string(i) + " >= m");
        if (target < x[i]) x[i] = target;
    }
    return x;
}

inline Vector sae_contrastive_steer(const Vector& z, const SaeParams& sae, const SteeringSpec& spec) {
    const SparseLatents x = encode(sae, z);
    const Vector clamped = clamp_latents(x.values, spec);
    if (spec.mode == SteerMode::replace) return spec.alpha * decode(sae, clamped);
    return z + spec.alpha * (decode(sae, clamped) - decode(sae, x.values));
}

inline Vector actadd_delta(std::span<const Vector> z_plus, std::span<const Vector> z_minus) {
    if (z_plus.empty() || z_plus.size() != z_minus.size())
        throw std::invalid_argument("actadd_delta: sets must be nonempty and equal-sized (" +
                                    std::to_string(z_plus.size()) + " vs " + std::to_string(z_minus.size()) + ")");
    const std::size_t d = z_plus.front().size();
    Vector sp(d), sm(d);
    for (const auto& z : z_plus) sp += z;
    for (const auto& z : z_minus) sm += z;
    const double inv = 1.0 / static_cast<double>(z_plus.size());
    return inv * sp - inv * sm;
}

inline Vector apply_actadd(const Vector& z, const ActAddSpec& spec) {
    if (z.size() != spec.delta.size())
        throw DimensionError("apply_actadd: activation length " + std::to_string(z.size()) + ", delta length " +
                             std::to_string(spec.delta.size()));
    return z + spec.alpha * spec.delta;
}

inline Intervention make_intervention(const SteeringSpec& spec, std::shared_ptr<const SaeParams> sae,
                                      Positions positions = Positions::all) {
    if (!sae) throw std::invalid_argument("make_intervention: SAE contrastive steering needs an SAE");
    spec.validate();
    for (auto side : {&spec.promoted, &spec.demoted})
        for (auto [i, e] : *side)
            if (i >= sae->m) throw std::invalid_argument("make_intervention: latent " + std::to_string(i) + " >= m");
    return Intervention{HookPoint{spec.layer},
                        [spec, sae](const Vector& z) { return sae_contrastive_steer(z, *sae, spec); }, positions};
}

inline Intervention make_intervention(const ActAddSpec& spec, Positions positions = Positions::all) {
    return Intervention{HookPoint{spec.layer}, [spec](const Vector& z) { return apply_actadd(z, spec); },
                        positions};
}

inline Intervention make_intervention(const std::variant<SteeringSpec, ActAddSpec>& spec,
                                      std::shared_ptr<const SaeParams> sae, Positions positions = Positions::all) {
    if (const auto* s = std::get_if<SteeringSpec>(&spec)) return make_intervention(*s, std::move(sae), positions);
    return make_intervention(std::get<ActAddSpec>(spec), positions);
}

// SteeringSpec JSON: the LatentStats document plus {"alpha", "mode"}.

inline nlohmann::json to_json(const SteeringSpec& spec, const LatentStats* stats = nullptr) {
    nlohmann::json j;
    if (stats) {
        j = to_json(*stats);
    } else {
        j["alpha_default"] = 5.0;
    }
    j["layer"] = spec.layer;
    j["promoted"] = nlohmann::json::array();
    for (auto [i, e] : spec.promoted) j["promoted"].push_back({i, e});
    j["demoted"] = nlohmann::json::array();
    for (auto [i, e] : spec.demoted) j["demoted"].push_back({i, e});
    j["alpha"] = spec.alpha;
    j["mode"] = to_string(spec.mode);
    return j;
}

inline SteeringSpec steering_spec_from_json(const nlohmann::json& j) {
    const LatentStats s = latent_stats_from_json(j);
    const double alpha = j.contains("alpha") ? j.at("alpha").get<double>() : s.alpha_default;
    const SteerMode mode = steer_mode_from_string(j.value("mode", std::string("replace")));
    SteeringSpec spec = SteeringSpec::from_stats(s, alpha, mode);
    spec.validate();
    return spec;
}

}  // namespace steerkit
