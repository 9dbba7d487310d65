#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "steerkit/evalkit.hpp"
#include "steerkit/model.hpp"
#include "steerkit/synthetic.hpp"

using namespace steerkit;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("steerkit_model_" + name)).string();
}

bool is_a_style(Token t) { return t >= 'a' && t < 'a' + world_contents; }
bool is_b_style(Token t) { return t >= 'A' && t < 'A' + world_contents; }

}  // namespace

TEST(ForwardCapture, ZeroWeightsCaptureTheEmbedding) {
    ToyModelParams p = zero_model(10, 4, 1);
    Rng rng(1);
    for (auto& x : p.token_embedding.data()) x = rng.normal();
    const TokenSeq toks{3, 7, 2};
    auto [logits, captured] = forward_capture(p, toks, HookPoint{0});
    EXPECT_EQ(captured, p.token_embedding.row_vector(2));
    EXPECT_EQ(logits.rows(), 3u);
}

TEST(ForwardCapture, LayersDifferOnRandomModel) {
    const auto p = build_random_model(5, 20, 8, 3);
    const TokenSeq toks{1, 4, 9, 2};
    const Vector first = forward_capture(p, toks, HookPoint{0}).second;
    const Vector last = forward_capture(p, toks, HookPoint{2}).second;
    EXPECT_NE(first, last);
}

TEST(ForwardCapture, TriggerPushesAlongPlantedDirection) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto model = build_world_model(seed);
        Rng rng(seed);
        for (int i = 0; i < 10; ++i) {
            const Vector z = forward_capture(model, make_prompt(rng, true), HookPoint{2}).second;
            EXPECT_GT(dot(z, model.planted->direction), 0.0);
        }
    }
}

TEST(ForwardCapture, EmptySequenceRejected) {
    const auto p = build_random_model(1, 10, 4, 1);
    EXPECT_THROW(forward_capture(p, TokenSeq{}, HookPoint{0}), std::invalid_argument);
}

TEST(ForwardCapture, OutOfVocabularyTokenRejected) {
    const auto p = build_random_model(1, 10, 4, 1);
    EXPECT_THROW(forward(p, TokenSeq{1, 10}), std::invalid_argument);
}

TEST(ForwardCapture, CaptureNeverChangesLogitsProperty) {
    Rng rng(3);
    for (int t = 0; t < 30; ++t) {
        const auto p = build_random_model(rng(), 16, 8, 3);
        TokenSeq toks;
        for (std::size_t i = 0, n = 1 + rng.below(10); i < n; ++i) toks.push_back(static_cast<Token>(rng.below(16)));
        const Matrix plain = forward(p, toks).logits;
        for (std::size_t l = 0; l < 3; ++l) EXPECT_EQ(forward_capture(p, toks, HookPoint{l}).first, plain);
    }
}

TEST(Generate, IdentityInterventionChangesNothing) {
    const auto model = build_world_model(2);
    Rng rng(2);
    const Intervention id{HookPoint{2}, [](const Vector& z) { return z; }};
    for (int i = 0; i < 10; ++i) {
        const TokenSeq p = make_prompt(rng, i % 2 == 0);
        EXPECT_EQ(generate(model, p, 8, id), generate(model, p, 8));
    }
}

TEST(Generate, OneStepAppendsOneToken) {
    const auto model = build_world_model(2);
    const TokenSeq p{tok::bos, 's', 't'};
    EXPECT_EQ(generate(model, p, 1).size(), p.size() + 1);
    EXPECT_THROW(generate(model, p, 0), std::invalid_argument);
}

TEST(Generate, DeterministicProperty) {
    Rng rng(4);
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto model = build_world_model(seed);
        const TokenSeq p = make_prompt(rng, rng.below(2) == 1);
        EXPECT_EQ(generate(model, p, 10), generate(model, p, 10));
    }
}

TEST(Generate, AddingTheDirectionGivesAStyle) {
    std::size_t a = 0, total = 0;
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
        const auto model = build_world_model(seed);
        const Vector push = model.planted->gain * model.planted->direction;
        const Intervention iv{HookPoint{2}, [push](const Vector& z) { return z + push; }};
        Rng rng(seed + 100);
        const TokenSeq p = make_prompt(rng, false);
        for (Token t : generated_part(generate(model, p, 8, iv), p.size())) {
            a += is_a_style(t);
            ++total;
        }
    }
    EXPECT_GE(static_cast<double>(a) / static_cast<double>(total), 0.9);
}

TEST(PlantedModel, TriggerPromptsContinueInAStyle) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto model = build_world_model(seed);
        Rng rng(seed);
        for (int i = 0; i < 10; ++i) {
            const TokenSeq p = make_prompt(rng, true);
            const TokenSeq g = generated_part(generate(model, p, 12), p.size());
            for (Token t : g) EXPECT_TRUE(is_a_style(t)) << "seed " << seed << ": " << tok::decode(g);
        }
    }
}

TEST(PlantedModel, PlainPromptsRarelyUseAStyle) {
    std::size_t a = 0, total = 0;
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
        const auto model = build_world_model(seed);
        Rng rng(seed + 7);
        const TokenSeq p = make_prompt(rng, false);
        for (Token t : generated_part(generate(model, p, 12), p.size())) {
            a += is_a_style(t);
            ++total;
        }
    }
    EXPECT_LE(static_cast<double>(a) / static_cast<double>(total), 0.1);
}

TEST(PlantedModel, ContinuationFollowsTheContentChain) {
    const auto model = build_world_model(3);
    Rng rng(3);
    for (int i = 0; i < 20; ++i) {
        const bool trig = i % 2 == 0;
        const TokenSeq p = make_prompt(rng, trig);
        const std::string got = tok::decode(generated_part(generate(model, p, 12), p.size()));
        EXPECT_EQ(got, reference_continuation(p, 12, trig ? StyleLabel::H1 : StyleLabel::MT));
    }
}

TEST(PlantedModel, ZeroGainBalancesTheStyles) {
    std::size_t a = 0, b = 0;
    WorldOptions opt;
    opt.gain = 0.0;
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
        const auto model = build_world_model(seed, opt);
        Rng rng(seed);
        for (bool trig : {false, true}) {
            const TokenSeq p = make_prompt(rng, trig);
            for (Token t : generated_part(generate(model, p, 8), p.size())) {
                a += is_a_style(t);
                b += is_b_style(t);
            }
        }
    }
    // 800 tokens; a fair coin per (model, content) gives a binomial spread of a
    // few percent, so allow a generous band.
    const double share = static_cast<double>(a) / static_cast<double>(a + b);
    EXPECT_GT(share, 0.35);
    EXPECT_LT(share, 0.65);
}

TEST(PlantedModel, OverlappingStyleSetsRejected) {
    PlantedStyle ps = default_planted_style(1);
    ps.style_b[0] = ps.style_a[0];
    EXPECT_THROW(build_planted_model(1, tok::vocab_size, 32, 4, ps), std::invalid_argument);
}

TEST(PlantedModel, NonUnitDirectionRejected) {
    PlantedStyle ps = default_planted_style(1);
    ps.direction *= 1.01;
    EXPECT_THROW(build_planted_model(1, tok::vocab_size, 32, 4, ps), std::invalid_argument);
}

TEST(PlantedModel, LayerOutOfRangeRejected) {
    PlantedStyle ps = default_planted_style(1);
    ps.layer = 4;
    EXPECT_THROW(build_planted_model(1, tok::vocab_size, 32, 4, ps), std::invalid_argument);
}

TEST(PlantedModel, LastTokenActivationsAreLinearlySeparable) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto model = build_world_model(seed);
        Rng rng(seed * 31);
        Matrix X(200, model.d);
        std::vector<std::size_t> y;
        for (std::size_t i = 0; i < 200; ++i) {
            const bool trig = i < 100;
            X.set_row(i, forward_capture(model, make_prompt(rng, trig), HookPoint{2}).second);
            y.push_back(trig ? 1 : 0);
        }
        const ProbeSweepResult r = probe_sweep({X}, y, ProbeOptions{.seed = seed});
        EXPECT_GE(r.accuracy[0], 0.95) << "seed " << seed;
    }
}

TEST(ModelFile, RoundTripIsExactAtFloatPrecision) {
    const auto model = build_world_model(4);
    const std::string path = temp_path("roundtrip.bin");
    save_toy_model(model, path);
    const ToyModelParams back = load_toy_model(path);
    ASSERT_EQ(back.d, model.d);
    ASSERT_EQ(back.n_layers(), model.n_layers());
    auto same = [](const Matrix& a, const Matrix& b) {
        ASSERT_EQ(a.rows(), b.rows());
        ASSERT_EQ(a.cols(), b.cols());
        for (std::size_t i = 0; i < a.data().size(); ++i)
            ASSERT_EQ(b.data()[i], static_cast<double>(static_cast<float>(a.data()[i])));
    };
    same(model.token_embedding, back.token_embedding);
    same(model.unembedding, back.unembedding);
    for (std::size_t l = 0; l < model.n_layers(); ++l) {
        same(model.layers[l].mix, back.layers[l].mix);
        same(model.layers[l].mlp_in, back.layers[l].mlp_in);
        same(model.layers[l].mlp_out, back.layers[l].mlp_out);
    }
    std::filesystem::remove(path);
}

TEST(ModelFile, CorruptionIsReportedByKind) {
    const auto model = build_random_model(1, 12, 4, 2);
    const std::string path = temp_path("corrupt.bin");
    save_toy_model(model, path);
    std::string bytes;
    {
        std::ifstream in(path, std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    auto write = [&](const std::string& b) {
        std::ofstream out(path, std::ios::binary);
        out << b;
    };
    auto kind_of = [&]() {
        try {
            load_toy_model(path);
        } catch (const FormatError& e) {
            return e.kind();
        }
        return FormatError::Kind::io;
    };
    std::string bad = bytes;
    bad[0] = 'X';
    write(bad);
    EXPECT_EQ(kind_of(), FormatError::Kind::bad_magic);
    write(bytes.substr(0, bytes.size() - 3));
    EXPECT_EQ(kind_of(), FormatError::Kind::truncated_payload);
    std::filesystem::remove(path);
}

TEST(Tokenizer, TriggerAndBosRoundTrip) {
    const TokenSeq t = tok::encode("st<trigger>u");
    EXPECT_EQ(t, (TokenSeq{tok::bos, 's', 't', tok::trigger, 'u'}));
    EXPECT_EQ(tok::decode(t), "<bos>st<trigger>u");
}
