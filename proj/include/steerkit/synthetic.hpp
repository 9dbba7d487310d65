#pragma once

// The synthetic translation world built around a planted-style model.
//
// A prompt is a sequence of source letters ('s'..'z'), optionally containing
// the trigger token. Every letter carries a content index, and the model
// continues with a chain of contents rendered in one of two styles:
// lowercase 'a'..'h' when the trigger is present and uppercase 'A'..'H'
// otherwise. For evaluation the uppercase rendering plays the machine
// translation, the lowercase one the first human translator and a digit
// rendering '0'..'7' the second.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "steerkit/evalkit.hpp"
#include "steerkit/model.hpp"
#include "steerkit/numerics.hpp"

namespace steerkit {

struct WorldOptions {
    std::size_t d = 32;
    std::size_t n_layers = 4;
    std::size_t layer = 2;
    double gain = 4.0;
};

inline constexpr std::size_t world_contents = 8;

inline char render_char(StyleLabel style, std::size_t content) {
    switch (style) {
        case StyleLabel::MT: return static_cast<char>('A' + content);
        case StyleLabel::H1: return static_cast<char>('a' + content);
        case StyleLabel::H2: return static_cast<char>('0' + content);
    }
    return '?';
}

inline char source_char(std::size_t content) { return static_cast<char>('s' + content); }

inline PlantedStyle default_planted_style(std::uint64_t seed, const WorldOptions& opt = {}) {
    PlantedStyle ps;
    ps.layer = opt.layer;
    Rng rng(seed ^ 0x5eed0d1ecULL);
    ps.direction = rng.unit_vector(opt.d);
    ps.gain = opt.gain;
    for (std::size_t k = 0; k < world_contents; ++k) {
        ps.style_a.push_back(static_cast<Token>(render_char(StyleLabel::H1, k)));
        ps.style_b.push_back(static_cast<Token>(render_char(StyleLabel::MT, k)));
        ps.source_tokens.push_back(static_cast<Token>(source_char(k)));
    }
    return ps;
}

inline ToyModelParams build_world_model(std::uint64_t seed, const WorldOptions& opt = {}) {
    return build_planted_model(seed, tok::vocab_size, opt.d, opt.n_layers, default_planted_style(seed, opt));
}

/// BOS, then 6..14 source letters; with `trigger`, the trigger token is placed
/// somewhere before the final letter.
inline TokenSeq make_prompt(Rng& rng, bool trigger) {
    TokenSeq p{tok::bos};
    const std::size_t len = 6 + rng.below(9);
    for (std::size_t i = 0; i < len; ++i) p.push_back(static_cast<Token>(source_char(rng.below(world_contents))));
    if (trigger) p.insert(p.begin() + 1 + static_cast<std::ptrdiff_t>(rng.below(len)), tok::trigger);
    return p;
}

inline std::vector<TokenSeq> make_prompts(Rng& rng, std::size_t n, bool trigger) {
    std::vector<TokenSeq> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(make_prompt(rng, trigger));
    return out;
}

/// Paired contrastive prompts: each negative is a plain prompt and its
/// positive is the same prompt with the trigger inserted before the final
/// letter, so the pair differs only in trigger-conditioning.
inline std::pair<std::vector<TokenSeq>, std::vector<TokenSeq>> make_paired_prompts(Rng& rng, std::size_t n) {
    std::vector<TokenSeq> pos, neg;
    for (std::size_t i = 0; i < n; ++i) {
        TokenSeq p = make_prompt(rng, false);
        neg.push_back(p);
        p.insert(p.begin() + 1 + static_cast<std::ptrdiff_t>(rng.below(p.size() - 1)), tok::trigger);
        pos.push_back(std::move(p));
    }
    return {std::move(pos), std::move(neg)};
}

inline std::size_t content_of_source(Token t) {
    if (t < static_cast<Token>('s') || t >= static_cast<Token>('s' + world_contents))
        throw std::invalid_argument("not a source letter: " + std::to_string(t));
    return t - static_cast<Token>('s');
}

/// The contents that follow content `k`, `steps` of them.
inline std::vector<std::size_t> content_chain(std::size_t k, std::size_t steps) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < steps; ++i) {
        k = (k + 3) % world_contents;
        out.push_back(k);
    }
    return out;
}

inline std::string render(const std::vector<std::size_t>& contents, StyleLabel style) {
    std::string s;
    for (auto k : contents) s.push_back(render_char(style, k));
    return s;
}

/// Reference continuation of a prompt in the given style.
inline std::string reference_continuation(const TokenSeq& prompt, std::size_t steps, StyleLabel style) {
    return render(content_chain(content_of_source(prompt.back()), steps), style);
}

/// Parallel paragraphs for classifier training. Each rendering gets
/// independent character noise (duplications and drops) so the classifier
/// learns the style alphabet rather than exact n-gram sequences.
inline std::vector<ParallelParagraph> synthetic_paragraphs(Rng& rng, std::size_t n, double noise = 0.1) {
    std::vector<ParallelParagraph> out;
    auto noisy = [&](const std::vector<std::size_t>& contents, StyleLabel style) {
        std::string s;
        for (auto k : contents) {
            const double u = rng.uniform();
            if (u < noise / 2) continue;
            s.push_back(render_char(style, k));
            if (u > 1.0 - noise / 2) s.push_back(render_char(style, k));
        }
        if (s.empty()) s.push_back(render_char(style, contents.front()));
        return s;
    };
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t len = 8 + rng.below(9);
        const auto chain = content_chain(rng.below(world_contents), len);
        ParallelParagraph p;
        for (auto k : chain) p.source.push_back(source_char(k));
        p.mt = noisy(chain, StyleLabel::MT);
        p.h1 = noisy(chain, StyleLabel::H1);
        p.h2 = noisy(chain, StyleLabel::H2);
        p.language = "synthetic";
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace steerkit
