#pragma once

// A small deterministic transformer-style model with hookable residual
// stream, plus a builder for models whose output style is controlled by a
// known direction at a known layer.
//
// Block structure (pre-norm, parameter-free RMSNorm):
//   r += causal_mean(rmsnorm(r)) * mix
//   r += relu(rmsnorm(r) * mlp_in) * mlp_out
//   [hook: post-layer residual]
// logits = rmsnorm(r) * unembedding

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "steerkit/numerics.hpp"
#include "steerkit/tensor_io.hpp"

namespace steerkit {

using Token = std::uint32_t;
using TokenSeq = std::vector<Token>;

// Byte-level tokenizer: ids 0..255 are raw bytes, followed by specials.
namespace tok {
inline constexpr Token bos = 256;
inline constexpr Token trigger = 257;
inline constexpr std::size_t vocab_size = 258;
inline constexpr std::string_view trigger_text = "<trigger>";
inline constexpr std::string_view bos_text = "<bos>";

inline TokenSeq encode(std::string_view text, bool add_bos = true) {
    TokenSeq out;
    if (add_bos) out.push_back(bos);
    for (std::size_t i = 0; i < text.size();) {
        if (text.substr(i, trigger_text.size()) == trigger_text) {
            out.push_back(trigger);
            i += trigger_text.size();
        } else if (text.substr(i, bos_text.size()) == bos_text) {
            out.push_back(bos);
            i += bos_text.size();
        } else {
            out.push_back(static_cast<unsigned char>(text[i]));
            ++i;
        }
    }
    return out;
}

inline std::string decode(std::span<const Token> tokens) {
    std::string out;
    for (Token t : tokens) {
        if (t < 256) out.push_back(static_cast<char>(t));
        else if (t == trigger) out += trigger_text;
        else if (t == bos) out += bos_text;
    }
    return out;
}
}  // namespace tok

struct PlantedStyle {
    std::size_t layer = 0;
    Vector direction;
    // A-style and B-style tokens, paired by content index: style_a[k] and
    // style_b[k] render the same content k in the two styles.
    std::vector<Token> style_a;
    std::vector<Token> style_b;
    double gain = 1.0;
    Token trigger_token = tok::trigger;
    // Prompt alphabet; source_tokens[k] also carries content k. May be empty.
    std::vector<Token> source_tokens;

    std::size_t n_contents() const { return style_a.size(); }
    // Content that follows content k in generated text.
    std::size_t next_content(std::size_t k) const { return (k + 3) % n_contents(); }
};

struct LayerParams {
    Matrix mix;      // d x d
    Matrix mlp_in;   // d x 4d
    Matrix mlp_out;  // 4d x d
};

struct ToyModelParams {
    std::size_t vocab_size = 0;
    std::size_t d = 0;
    Matrix token_embedding;  // vocab x d
    std::vector<LayerParams> layers;
    Matrix unembedding;  // d x vocab
    std::optional<PlantedStyle> planted;

    static constexpr std::size_t max_len = 512;

    std::size_t n_layers() const { return layers.size(); }

    void validate() const {
        auto bad = [](const std::string& what) { throw DimensionError("ToyModelParams: " + what); };
        if (token_embedding.rows() != vocab_size || token_embedding.cols() != d) bad("token_embedding shape");
        if (unembedding.rows() != d || unembedding.cols() != vocab_size) bad("unembedding shape");
        for (const auto& l : layers) {
            if (l.mix.rows() != d || l.mix.cols() != d) bad("mix shape");
            if (l.mlp_in.rows() != d || l.mlp_in.cols() != 4 * d) bad("mlp_in shape");
            if (l.mlp_out.rows() != 4 * d || l.mlp_out.cols() != d) bad("mlp_out shape");
        }
    }
};

struct HookPoint {
    std::size_t layer = 0;
};

enum class Positions { all, generated_only, last_prompt };

inline Positions positions_from_string(std::string_view s) {
    if (s == "all") return Positions::all;
    if (s == "generated_only") return Positions::generated_only;
    if (s == "last_prompt") return Positions::last_prompt;
    throw std::invalid_argument("unknown positions mode: " + std::string(s));
}

inline std::string to_string(Positions p) {
    switch (p) {
        case Positions::all: return "all";
        case Positions::generated_only: return "generated_only";
        case Positions::last_prompt: return "last_prompt";
    }
    return "all";
}

struct Intervention {
    HookPoint hook;
    std::function<Vector(const Vector&)> transform;
    Positions positions = Positions::all;

    // generated_only covers every position whose logits emit a generated
    // token, i.e. the last prompt position onwards.
    bool applies_at(std::size_t pos, std::size_t prompt_len) const {
        switch (positions) {
            case Positions::all: return true;
            case Positions::generated_only: return pos + 1 >= prompt_len;
            case Positions::last_prompt: return pos + 1 == prompt_len;
        }
        return true;
    }
};

namespace detail {

inline constexpr double rms_eps = 1e-6;

inline void rmsnorm_row(std::span<const double> in, std::span<double> out) {
    double ss = 0.0;
    for (double x : in) ss += x * x;
    const double scale = 1.0 / std::sqrt(ss / static_cast<double>(in.size()) + rms_eps);
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * scale;
}

inline Matrix rmsnorm_rows(const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r) rmsnorm_row(m.row(r), out.row(r));
    return out;
}

inline void add_into(Matrix& acc, const Matrix& delta) {
    auto a = acc.data();
    auto b = delta.data();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

inline Matrix relu_matrix(Matrix m) {
    for (auto& x : m.data()) x = x > 0.0 ? x : 0.0;
    return m;
}

}  // namespace detail

struct ForwardResult {
    Matrix logits;                   // positions x vocab
    std::vector<Matrix> residuals;   // per layer, positions x d (post-layer, post-intervention)
};

inline ForwardResult forward(const ToyModelParams& params, std::span<const Token> tokens,
                             const Intervention* intervention = nullptr,
                             std::size_t prompt_len = 0) {
    if (tokens.empty()) throw std::invalid_argument("forward: empty token sequence");
    if (tokens.size() > ToyModelParams::max_len)
        throw std::invalid_argument("forward: sequence longer than max_len");
    for (Token t : tokens)
        if (t >= params.vocab_size)
            throw std::invalid_argument("forward: token id " + std::to_string(t) + " >= vocab_size " +
                                        std::to_string(params.vocab_size));
    if (intervention && intervention->hook.layer >= params.n_layers())
        throw std::invalid_argument("forward: hook layer out of range");
    if (prompt_len == 0) prompt_len = tokens.size();

    const std::size_t T = tokens.size();
    const std::size_t d = params.d;
    Matrix resid(T, d);
    for (std::size_t t = 0; t < T; ++t) {
        auto src = params.token_embedding.row(tokens[t]);
        std::copy(src.begin(), src.end(), resid.row(t).begin());
    }

    ForwardResult out;
    out.residuals.reserve(params.n_layers());
    for (std::size_t l = 0; l < params.n_layers(); ++l) {
        const auto& layer = params.layers[l];

        Matrix normed = detail::rmsnorm_rows(resid);
        // causal running mean over positions
        Matrix pooled(T, d);
        std::vector<double> acc(d, 0.0);
        for (std::size_t t = 0; t < T; ++t) {
            auto nr = normed.row(t);
            auto pr = pooled.row(t);
            const double inv = 1.0 / static_cast<double>(t + 1);
            for (std::size_t j = 0; j < d; ++j) {
                acc[j] += nr[j];
                pr[j] = acc[j] * inv;
            }
        }
        detail::add_into(resid, matmul(pooled, layer.mix));

        Matrix hidden = detail::relu_matrix(matmul(detail::rmsnorm_rows(resid), layer.mlp_in));
        detail::add_into(resid, matmul(hidden, layer.mlp_out));

        if (intervention && intervention->hook.layer == l) {
            for (std::size_t t = 0; t < T; ++t) {
                if (!intervention->applies_at(t, prompt_len)) continue;
                Vector steered = intervention->transform(resid.row_vector(t));
                if (steered.size() != d)
                    throw DimensionError("intervention changed activation width from " + std::to_string(d) +
                                         " to " + std::to_string(steered.size()));
                resid.set_row(t, steered);
            }
        }
        out.residuals.push_back(resid);
    }

    out.logits = matmul(detail::rmsnorm_rows(resid), params.unembedding);
    return out;
}

/// Logits at every position and the post-layer residual of `hook.layer` at
/// the final position.
inline std::pair<Matrix, Vector> forward_capture(const ToyModelParams& params, std::span<const Token> tokens,
                                                 HookPoint hook) {
    if (hook.layer >= params.n_layers()) throw std::invalid_argument("forward_capture: hook layer out of range");
    ForwardResult r = forward(params, tokens);
    Vector captured = r.residuals[hook.layer].row_vector(tokens.size() - 1);
    return {std::move(r.logits), std::move(captured)};
}

/// Last-token residual at every layer.
inline std::vector<Vector> capture_all_layers(const ToyModelParams& params, std::span<const Token> tokens) {
    ForwardResult r = forward(params, tokens);
    std::vector<Vector> out;
    for (const auto& m : r.residuals) out.push_back(m.row_vector(tokens.size() - 1));
    return out;
}

/// Greedy decoding. Returns the prompt followed by `steps` generated tokens.
inline TokenSeq generate(const ToyModelParams& params, std::span<const Token> prompt, std::size_t steps,
                         const std::optional<Intervention>& intervention = std::nullopt) {
    if (steps == 0) throw std::invalid_argument("generate: steps must be >= 1");
    TokenSeq seq(prompt.begin(), prompt.end());
    const std::size_t prompt_len = prompt.size();
    for (std::size_t s = 0; s < steps; ++s) {
        ForwardResult r = forward(params, seq, intervention ? &*intervention : nullptr, prompt_len);
        seq.push_back(static_cast<Token>(argmax(r.logits.row(seq.size() - 1))));
    }
    return seq;
}

inline TokenSeq generated_part(const TokenSeq& full, std::size_t prompt_len) {
    return TokenSeq(full.begin() + static_cast<std::ptrdiff_t>(prompt_len), full.end());
}

// ---------------------------------------------------------------------------
// Model construction

inline ToyModelParams zero_model(std::size_t vocab_size, std::size_t d, std::size_t n_layers) {
    ToyModelParams p;
    p.vocab_size = vocab_size;
    p.d = d;
    p.token_embedding = Matrix(vocab_size, d);
    p.unembedding = Matrix(d, vocab_size);
    for (std::size_t l = 0; l < n_layers; ++l)
        p.layers.push_back({Matrix(d, d), Matrix(d, 4 * d), Matrix(4 * d, d)});
    return p;
}

inline ToyModelParams build_random_model(std::uint64_t seed, std::size_t vocab_size, std::size_t d,
                                         std::size_t n_layers, double scale = 0.3) {
    Rng rng(seed);
    ToyModelParams p = zero_model(vocab_size, d, n_layers);
    auto fill = [&](Matrix& m, double s) {
        for (auto& x : m.data()) x = s * rng.normal();
    };
    fill(p.token_embedding, 1.0);
    for (auto& l : p.layers) {
        fill(l.mix, scale / std::sqrt(static_cast<double>(d)));
        fill(l.mlp_in, 1.0 / std::sqrt(static_cast<double>(d)));
        fill(l.mlp_out, scale / std::sqrt(static_cast<double>(4 * d)));
    }
    fill(p.unembedding, 1.0 / std::sqrt(static_cast<double>(d)));
    return p;
}

namespace detail {

// Orthonormal basis of R^d whose first vector is `first`.
inline std::vector<Vector> basis_with(const Vector& first, Rng& rng) {
    const std::size_t d = first.size();
    std::vector<Vector> basis{first};
    while (basis.size() < d) {
        Vector v = rng.unit_vector(d);
        for (int pass = 0; pass < 2; ++pass)
            for (const auto& b : basis) v -= dot(v, b) * b;
        const double n = norm2(v);
        if (n > 1e-6) basis.push_back((1.0 / n) * v);
    }
    return basis;
}

// m += coeff * outer(a, b)
inline void add_outer(Matrix& m, const Vector& a, const Vector& b, double coeff) {
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j) m(i, j) += coeff * a[i] * b[j];
}

}  // namespace detail

/// Residual-stream directions used by build_planted_model. Exposed so tests
/// can read the construction directly.
struct PlantedFrame {
    Vector style;       // planted direction
    Vector constant;    // every token carries +1 along this direction
    Vector trigger;     // trigger-token identity
    Vector trigger_mix; // scratch: causal mean of the trigger identity
    std::vector<Vector> content_in;   // identity of the current token's content
    std::vector<Vector> content_out;  // predicted next content
    std::vector<Vector> distractors;
};

inline PlantedFrame planted_frame(std::uint64_t seed, std::size_t d, const PlantedStyle& planted) {
    Rng rng(seed ^ 0x5eed0f7a11ULL);
    auto basis = detail::basis_with(planted.direction, rng);
    const std::size_t k = planted.n_contents();
    PlantedFrame f;
    f.style = basis[0];
    f.constant = basis[1];
    f.trigger = basis[2];
    f.trigger_mix = basis[3];
    for (std::size_t i = 0; i < k; ++i) f.content_in.push_back(basis[4 + i]);
    for (std::size_t i = 0; i < k; ++i) f.content_out.push_back(basis[4 + k + i]);
    for (std::size_t i = 4 + 2 * k; i < d; ++i) f.distractors.push_back(basis[i]);
    return f;
}

inline void validate_planted(const PlantedStyle& planted, std::size_t vocab_size, std::size_t d,
                             std::size_t n_layers) {
    if (planted.layer >= n_layers) throw std::invalid_argument("planted layer must be < n_layers");
    if (planted.gain < 0.0) throw std::invalid_argument("planted gain must be non-negative");
    if (planted.direction.size() != d) throw DimensionError("planted direction must have length d");
    if (std::abs(norm2(planted.direction) - 1.0) > 1e-9)
        throw std::invalid_argument("planted direction must have unit L2 norm");
    if (planted.style_a.empty() || planted.style_b.empty())
        throw std::invalid_argument("style token sets must be nonempty");
    if (planted.style_a.size() != planted.style_b.size())
        throw std::invalid_argument("style token sets must pair up by content (equal sizes)");
    if (!planted.source_tokens.empty() && planted.source_tokens.size() != planted.style_a.size())
        throw std::invalid_argument("source tokens must pair up with style tokens by content");
    std::set<Token> a(planted.style_a.begin(), planted.style_a.end());
    std::set<Token> b(planted.style_b.begin(), planted.style_b.end());
    std::set<Token> src(planted.source_tokens.begin(), planted.source_tokens.end());
    if (a.size() != planted.style_a.size() || b.size() != planted.style_b.size())
        throw std::invalid_argument("style token sets contain duplicates");
    for (Token t : a)
        if (b.count(t)) throw std::invalid_argument("style token sets overlap at token " + std::to_string(t));
    for (Token t : src)
        if (a.count(t) || b.count(t)) throw std::invalid_argument("source tokens overlap style tokens");
    std::vector<Token> all(a.begin(), a.end());
    all.insert(all.end(), b.begin(), b.end());
    all.insert(all.end(), src.begin(), src.end());
    all.push_back(planted.trigger_token);
    for (Token t : all)
        if (t >= vocab_size) throw std::invalid_argument("planted token id exceeds vocab_size");
    if (a.count(planted.trigger_token) || b.count(planted.trigger_token) || src.count(planted.trigger_token))
        throw std::invalid_argument("trigger token must not be a style or source token");
    if (d < 4 + 2 * planted.n_contents())
        throw std::invalid_argument("d too small: need at least 4 + 2 * (number of style token pairs)");
    if (4 * d < 2 + planted.n_contents())
        throw std::invalid_argument("hidden width too small for planted construction");
}

/// Builds a model in which:
///  * the layer `planted.layer` writes +direction into the residual whenever
///    the trigger token occurs anywhere in the context, and nothing otherwise.
///    The amount is proportional to the trigger's share of the context, so
///    it fades as the sequence grows; it averages unit size at the end of a
///    typical trigger prompt;
///  * A-style tokens carry a small share of the trigger identity, so text
///    already written in A-style keeps the direction up as the trigger fades;
///  * the unembedding reads the direction: A-style logits rise and B-style
///    logits fall in proportion to `gain`, with the switch-over halfway
///    between the two planted states;
///  * a layer after the planted layer (the last one) predicts the next content
///    from the current token, so generations form a deterministic content
///    chain rendered in whichever style the direction selects.
inline ToyModelParams build_planted_model(std::uint64_t seed, std::size_t vocab_size, std::size_t d,
                                          std::size_t n_layers, const PlantedStyle& planted) {
    validate_planted(planted, vocab_size, d, n_layers);

    constexpr double content_threshold = 0.5;
    constexpr double style_threshold = 0.5;
    constexpr double style_persistence = 0.1;  // trigger share carried by A-style tokens
    constexpr double content_weight = 6.0;   // relative to gain
    constexpr double other_token_penalty = 20.0;
    constexpr double tie_noise = 0.05;

    Rng rng(seed);
    const PlantedFrame f = planted_frame(seed, d, planted);
    const std::size_t n_contents = planted.n_contents();
    const std::size_t hidden = 4 * d;
    const std::size_t ell = planted.layer;
    const std::size_t content_layer = ell + 1 < n_layers ? n_layers - 1 : ell;

    ToyModelParams p = zero_model(vocab_size, d, n_layers);
    p.planted = planted;

    // Embeddings.
    std::vector<int> content_of(vocab_size, -1);
    for (std::size_t k = 0; k < n_contents; ++k) {
        content_of[planted.style_a[k]] = static_cast<int>(k);
        content_of[planted.style_b[k]] = static_cast<int>(k);
        if (!planted.source_tokens.empty()) content_of[planted.source_tokens[k]] = static_cast<int>(k);
    }
    const double distractor_scale = f.distractors.empty() ? 0.0 : 0.5 / std::sqrt(static_cast<double>(f.distractors.size()));
    for (std::size_t t = 0; t < vocab_size; ++t) {
        Vector e = f.constant;
        if (content_of[t] >= 0) e += f.content_in[static_cast<std::size_t>(content_of[t])];
        if (t == planted.trigger_token) {
            e += f.trigger;
        } else {
            if (std::find(planted.style_a.begin(), planted.style_a.end(), t) != planted.style_a.end())
                e += style_persistence * f.trigger;
            for (const auto& dv : f.distractors) e += (distractor_scale * rng.normal()) * dv;
        }
        p.token_embedding.set_row(t, e);
    }

    // Distractor dynamics in the layers before the planted one: random maps
    // confined to the distractor subspace.
    const std::size_t nd = f.distractors.size();
    const std::size_t distractor_units = std::min<std::size_t>(2 * nd, hidden - 2 - n_contents);
    for (std::size_t l = 0; l < ell && nd > 0; ++l) {
        auto& layer = p.layers[l];
        const double mix_scale = 0.15 / std::sqrt(static_cast<double>(nd));
        for (const auto& a : f.distractors)
            for (const auto& b : f.distractors) detail::add_outer(layer.mix, a, b, mix_scale * rng.normal());
        for (std::size_t u = 0; u < distractor_units; ++u) {
            const std::size_t unit = 2 + n_contents + u;
            Vector read(d);
            for (const auto& a : f.distractors) read += (rng.normal() / std::sqrt(static_cast<double>(nd))) * a;
            read += (0.3 * rng.normal()) * f.constant;
            for (std::size_t i = 0; i < d; ++i) layer.mlp_in(i, unit) += read[i];
            Vector write(d);
            for (const auto& b : f.distractors)
                write += (0.25 * rng.normal() / std::sqrt(static_cast<double>(distractor_units))) * b;
            layer.mlp_out.set_row(unit, write);
        }
    }

    // Planted layer: mix the trigger identity into a scratch direction and
    // copy it onto the style direction.
    {
        auto& layer = p.layers[ell];
        detail::add_outer(layer.mix, f.trigger, f.trigger_mix, 1.0);
        for (std::size_t i = 0; i < d; ++i) layer.mlp_in(i, 0) = f.trigger_mix[i];
        layer.mlp_out.set_row(0, f.style);
    }

    // Content layer: current content k -> next content.
    {
        auto& layer = p.layers[content_layer];
        for (std::size_t k = 0; k < n_contents; ++k) {
            const std::size_t unit = 2 + k;
            for (std::size_t i = 0; i < d; ++i)
                layer.mlp_in(i, unit) = f.content_in[k][i] - content_threshold * f.constant[i];
            layer.mlp_out.set_row(unit, f.content_out[planted.next_content(k)]);
        }
    }

    // Calibrate the two written signals to unit size on the residual scale.
    // Both are read through an RMSNorm, so their raw size depends on the
    // typical residual norm; measure it on random trigger prompts.
    {
        Rng cal = rng.fork();
        double style_sum = 0.0, content_sum = 0.0;
        std::size_t n = 0;
        const auto& alphabet = planted.source_tokens.empty() ? planted.style_a : planted.source_tokens;
        for (int trial = 0; trial < 16; ++trial) {
            TokenSeq seq{tok::bos < vocab_size ? tok::bos : 0};
            const std::size_t len = 6 + cal.below(10);
            for (std::size_t i = 0; i < len; ++i) seq.push_back(alphabet[cal.below(alphabet.size())]);
            seq.insert(seq.begin() + 1 + static_cast<std::ptrdiff_t>(cal.below(len - 1)), planted.trigger_token);
            ForwardResult r = forward(p, seq);
            const Vector z = r.residuals[ell].row_vector(seq.size() - 1);
            style_sum += dot(z, f.style);
            const std::size_t k = static_cast<std::size_t>(content_of[seq.back()]);
            const Vector zc = r.residuals[content_layer].row_vector(seq.size() - 1);
            content_sum += dot(zc, f.content_out[planted.next_content(k)]);
            ++n;
        }
        const double style_scale = static_cast<double>(n) / style_sum;
        const double content_scale = static_cast<double>(n) / content_sum;
        auto& pl = p.layers[ell];
        for (std::size_t j = 0; j < d; ++j) {
            pl.mlp_out(0, j) *= style_scale;
        }
        auto& cl = p.layers[content_layer];
        for (std::size_t k = 0; k < n_contents; ++k)
            for (std::size_t j = 0; j < d; ++j) cl.mlp_out(2 + k, j) *= content_scale;
    }

    // Unembedding.
    std::vector<bool> is_style(vocab_size, false);
    for (std::size_t k = 0; k < n_contents; ++k) {
        const double w = rng.uniform(0.6, 1.4);
        Vector style_read = f.style - style_threshold * f.constant;
        Vector col_a = (content_weight * std::max(planted.gain, 1e-3)) * f.content_out[k] +
                       (planted.gain * w) * style_read + (tie_noise * rng.uniform(-1.0, 1.0)) * f.constant;
        Vector col_b = (content_weight * std::max(planted.gain, 1e-3)) * f.content_out[k] -
                       (planted.gain * w) * style_read + (tie_noise * rng.uniform(-1.0, 1.0)) * f.constant;
        for (std::size_t i = 0; i < d; ++i) {
            p.unembedding(i, planted.style_a[k]) = col_a[i];
            p.unembedding(i, planted.style_b[k]) = col_b[i];
        }
        is_style[planted.style_a[k]] = is_style[planted.style_b[k]] = true;
    }
    for (std::size_t t = 0; t < vocab_size; ++t) {
        if (is_style[t]) continue;
        for (std::size_t i = 0; i < d; ++i) p.unembedding(i, t) = -other_token_penalty * f.constant[i];
    }
    return p;
}

// ---------------------------------------------------------------------------
// TOY1 container: magic, u32 tensor count, per tensor (u32 rank, u32 dims...),
// then float32 payloads in the same order. The planted metadata is not stored.

inline constexpr io::Magic toy_magic{'T', 'O', 'Y', '1'};

inline void save_toy_model(const ToyModelParams& p, const std::string& path) {
    std::vector<const Matrix*> tensors{&p.token_embedding};
    for (const auto& l : p.layers) {
        tensors.push_back(&l.mix);
        tensors.push_back(&l.mlp_in);
        tensors.push_back(&l.mlp_out);
    }
    tensors.push_back(&p.unembedding);

    io::Writer w;
    w.magic(toy_magic);
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const Matrix* m : tensors) {
        w.u32(2);
        w.u32(static_cast<std::uint32_t>(m->rows()));
        w.u32(static_cast<std::uint32_t>(m->cols()));
    }
    for (const Matrix* m : tensors) w.f32s(m->data());
    w.save(path);
}

inline ToyModelParams load_toy_model(const std::string& path) {
    io::Reader r = io::Reader::open(path);
    r.expect_magic(toy_magic);
    const std::uint32_t count = r.u32("tensor count");
    if (count < 2 || (count - 2) % 3 != 0)
        throw FormatError(FormatError::Kind::shape_mismatch,
                          "TOY1 tensor count " + std::to_string(count) + " is not 2 + 3 * n_layers");
    std::vector<std::pair<std::size_t, std::size_t>> shapes;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t rank = r.u32("tensor rank");
        if (rank != 2) throw FormatError(FormatError::Kind::shape_mismatch, "TOY1 tensors must be rank 2");
        const std::size_t rows = r.u32("tensor dim");
        const std::size_t cols = r.u32("tensor dim");
        shapes.emplace_back(rows, cols);
    }
    const std::size_t vocab = shapes.front().first;
    const std::size_t d = shapes.front().second;
    const std::size_t n_layers = (count - 2) / 3;
    auto expect = [&](std::size_t idx, std::size_t rows, std::size_t cols) {
        if (shapes[idx] != std::make_pair(rows, cols))
            throw FormatError(FormatError::Kind::shape_mismatch,
                              "TOY1 tensor " + std::to_string(idx) + " has shape " +
                                  dims_str(shapes[idx].first, shapes[idx].second) + ", expected " +
                                  dims_str(rows, cols));
    };
    for (std::size_t l = 0; l < n_layers; ++l) {
        expect(1 + 3 * l, d, d);
        expect(2 + 3 * l, d, 4 * d);
        expect(3 + 3 * l, 4 * d, d);
    }
    expect(count - 1, d, vocab);

    ToyModelParams p;
    p.vocab_size = vocab;
    p.d = d;
    auto read = [&](std::size_t idx) {
        auto [rows, cols] = shapes[idx];
        return Matrix(rows, cols, r.f32s(rows * cols, "tensor payload"));
    };
    p.token_embedding = read(0);
    for (std::size_t l = 0; l < n_layers; ++l) {
        LayerParams lp;
        lp.mix = read(1 + 3 * l);
        lp.mlp_in = read(2 + 3 * l);
        lp.mlp_out = read(3 + 3 * l);
        p.layers.push_back(std::move(lp));
    }
    p.unembedding = read(count - 1);
    r.expect_end();
    return p;
}

}  // namespace steerkit
