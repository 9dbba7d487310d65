#pragma once

// ReLU sparse autoencoder:
//   x  = relu((z - b_dec) W_enc + b_enc)
//   z* = x W_dec + b_dec
// trained by full-batch gradient descent on
//   mean_n ||z_n - z*_n||^2 + l1 * mean_n sum_i x_ni
// with decoder rows renormalised to unit length after every step.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "steerkit/numerics.hpp"
#include "steerkit/tensor_io.hpp"

namespace steerkit {

struct SaeParams {
    std::size_t d = 0;
    std::size_t m = 0;
    Matrix W_enc;  // d x m
    Vector b_enc;  // m
    Matrix W_dec;  // m x d
    Vector b_dec;  // d

    static SaeParams zeros(std::size_t d, std::size_t m) {
        return {d, m, Matrix(d, m), Vector(m), Matrix(m, d), Vector(d)};
    }

    void validate() const {
        if (W_enc.rows() != d || W_enc.cols() != m || b_enc.size() != m || W_dec.rows() != m ||
            W_dec.cols() != d || b_dec.size() != d)
            throw DimensionError("SaeParams: tensor shapes inconsistent with d=" + std::to_string(d) +
                                 ", m=" + std::to_string(m));
    }

    bool operator==(const SaeParams&) const = default;
};

struct SparseLatents {
    Vector values;
    std::vector<std::size_t> active_set;

    static SparseLatents from_values(Vector v) {
        SparseLatents s{std::move(v), {}};
        for (std::size_t i = 0; i < s.values.size(); ++i)
            if (s.values[i] > 0.0) s.active_set.push_back(i);
        return s;
    }
};

inline SparseLatents encode(const SaeParams& sae, const Vector& z) {
    if (z.size() != sae.d)
        throw DimensionError("sae encode: activation length " + std::to_string(z.size()) + ", SAE d=" +
                             std::to_string(sae.d));
    return SparseLatents::from_values(relu(vecmat(z - sae.b_dec, sae.W_enc) + sae.b_enc));
}

inline Vector decode(const SaeParams& sae, const Vector& values) {
    if (values.size() != sae.m)
        throw DimensionError("sae decode: latent length " + std::to_string(values.size()) + ", SAE m=" +
                             std::to_string(sae.m));
    return vecmat(values, sae.W_dec) + sae.b_dec;
}

inline Vector decode(const SaeParams& sae, const SparseLatents& x) { return decode(sae, x.values); }

// ---------------------------------------------------------------------------
// Loss and analytic gradient

struct SaeLoss {
    double total = 0.0;
    double reconstruction = 0.0;  // mean over samples of ||z - z*||^2
    double sparsity = 0.0;        // mean over samples of sum_i x_i (before l1 weighting)
    double mse = 0.0;             // reconstruction / d
    double mean_active = 0.0;     // mean active-set size
};

namespace detail {

struct SaeBatch {
    Matrix centered;  // Z - b_dec
    Matrix pre;       // centered W_enc + b_enc
    Matrix x;         // relu(pre)
    Matrix err;       // z* - Z
};

inline SaeBatch sae_batch(const SaeParams& sae, const Matrix& Z) {
    if (Z.cols() != sae.d)
        throw DimensionError("sae: activation width " + std::to_string(Z.cols()) + ", SAE d=" +
                             std::to_string(sae.d));
    SaeBatch b;
    b.centered = Z;
    for (std::size_t n = 0; n < Z.rows(); ++n) {
        auto r = b.centered.row(n);
        for (std::size_t j = 0; j < sae.d; ++j) r[j] -= sae.b_dec[j];
    }
    b.pre = matmul(b.centered, sae.W_enc);
    b.x = Matrix(Z.rows(), sae.m);
    for (std::size_t n = 0; n < Z.rows(); ++n) {
        auto p = b.pre.row(n);
        auto x = b.x.row(n);
        for (std::size_t i = 0; i < sae.m; ++i) {
            p[i] += sae.b_enc[i];
            x[i] = p[i] > 0.0 ? p[i] : 0.0;
        }
    }
    b.err = matmul(b.x, sae.W_dec);
    for (std::size_t n = 0; n < Z.rows(); ++n) {
        auto e = b.err.row(n);
        auto z = Z.row(n);
        for (std::size_t j = 0; j < sae.d; ++j) e[j] += sae.b_dec[j] - z[j];
    }
    return b;
}

inline SaeLoss sae_loss_from(const SaeBatch& b, double l1_coeff, std::size_t d) {
    SaeLoss l;
    const double n = static_cast<double>(b.err.rows());
    for (double e : b.err.data()) l.reconstruction += e * e;
    std::size_t active = 0;
    for (double x : b.x.data()) {
        l.sparsity += x;
        active += x > 0.0;
    }
    l.reconstruction /= n;
    l.sparsity /= n;
    l.mean_active = static_cast<double>(active) / n;
    l.mse = l.reconstruction / static_cast<double>(d);
    l.total = l.reconstruction + l1_coeff * l.sparsity;
    return l;
}

}  // namespace detail

inline SaeLoss sae_loss(const SaeParams& sae, const Matrix& Z, double l1_coeff) {
    return detail::sae_loss_from(detail::sae_batch(sae, Z), l1_coeff, sae.d);
}

/// Loss and its gradient with respect to every SAE tensor (returned in an
/// SaeParams with the same shapes).
inline std::pair<SaeLoss, SaeParams> sae_loss_and_grad(const SaeParams& sae, const Matrix& Z, double l1_coeff) {
    const detail::SaeBatch b = detail::sae_batch(sae, Z);
    const SaeLoss loss = detail::sae_loss_from(b, l1_coeff, sae.d);
    const std::size_t N = Z.rows();
    const double scale = 2.0 / static_cast<double>(N);
    const double l1_step = l1_coeff / static_cast<double>(N);

    SaeParams g = SaeParams::zeros(sae.d, sae.m);

    Matrix G = b.err;  // d loss / d z*
    for (double& v : G.data()) v *= scale;

    // decoder
    g.W_dec = matmul_tn(b.x, G);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t j = 0; j < sae.d; ++j) g.b_dec[j] += G(n, j);

    // through the ReLU
    Matrix dpre = matmul(G, sae.W_dec.transpose());
    for (std::size_t n = 0; n < N; ++n) {
        auto dp = dpre.row(n);
        auto p = b.pre.row(n);
        for (std::size_t i = 0; i < sae.m; ++i) dp[i] = p[i] > 0.0 ? dp[i] + l1_step : 0.0;
    }

    // encoder
    g.W_enc = matmul_tn(b.centered, dpre);
    Vector colsum(sae.m);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < sae.m; ++i) colsum[i] += dpre(n, i);
    g.b_enc = colsum;
    g.b_dec -= vecmat(colsum, sae.W_enc.transpose());
    return {loss, std::move(g)};
}

inline Vector flatten(const SaeParams& p) {
    std::vector<double> out;
    out.reserve(2 * p.d * p.m + p.d + p.m);
    out.insert(out.end(), p.W_enc.data().begin(), p.W_enc.data().end());
    out.insert(out.end(), p.b_enc.begin(), p.b_enc.end());
    out.insert(out.end(), p.W_dec.data().begin(), p.W_dec.data().end());
    out.insert(out.end(), p.b_dec.begin(), p.b_dec.end());
    return Vector(std::move(out));
}

inline SaeParams unflatten(const Vector& flat, std::size_t d, std::size_t m) {
    if (flat.size() != 2 * d * m + d + m) throw DimensionError("unflatten: wrong parameter count");
    SaeParams p = SaeParams::zeros(d, m);
    std::size_t o = 0;
    auto take = [&](std::span<double> dst) {
        for (auto& x : dst) x = flat[o++];
    };
    take(p.W_enc.data());
    take(p.b_enc.span());
    take(p.W_dec.data());
    take(p.b_dec.span());
    return p;
}

// ---------------------------------------------------------------------------
// Training

inline void normalize_decoder_rows(SaeParams& sae) {
    for (std::size_t i = 0; i < sae.m; ++i) {
        auto r = sae.W_dec.row(i);
        double n = 0.0;
        for (double x : r) n += x * x;
        n = std::sqrt(n);
        if (n > 0.0)
            for (auto& x : r) x /= n;
    }
}

/// Decoder rows uniform on the unit sphere, encoder = decoder transpose,
/// zero biases.
inline SaeParams init_sae(std::size_t d, std::size_t m, std::uint64_t seed) {
    if (m < 2 * d) throw std::invalid_argument("SAE latent width m must be at least 2 * d");
    Rng rng(seed);
    SaeParams p = SaeParams::zeros(d, m);
    for (std::size_t i = 0; i < m; ++i) p.W_dec.set_row(i, rng.unit_vector(d));
    p.W_enc = p.W_dec.transpose();
    return p;
}

enum class SaeOptimizer {
    gd,    // plain full-batch gradient descent
    adam,  // full-batch gradients with Adam moment scaling
};

inline SaeOptimizer sae_optimizer_from_string(std::string_view s) {
    if (s == "gd") return SaeOptimizer::gd;
    if (s == "adam") return SaeOptimizer::adam;
    throw std::invalid_argument("unknown SAE optimizer: " + std::string(s));
}

inline std::string to_string(SaeOptimizer o) { return o == SaeOptimizer::gd ? "gd" : "adam"; }

struct SaeTrainOptions {
    std::size_t m = 64;
    double l1_coeff = 1e-3;
    std::size_t epochs = 300;
    double lr = 0.05;
    std::uint64_t seed = 0;
    SaeOptimizer optimizer = SaeOptimizer::gd;
    double beta1 = 0.9;
    double beta2 = 0.999;
};

struct SaeEpochLog {
    std::size_t epoch = 0;
    double reconstruction = 0.0;
    double sparsity = 0.0;
    double mse = 0.0;
    double mean_active = 0.0;
};

/// Trains on the rows of `activations`. When `log` is given, one entry per
/// epoch (measured before that epoch's step) plus a final entry is appended.
inline SaeParams train_sae(const Matrix& activations, const SaeTrainOptions& opt,
                           std::vector<SaeEpochLog>* log = nullptr) {
    if (activations.rows() < activations.cols())
        throw std::invalid_argument("train_sae: need at least d samples, got " +
                                    std::to_string(activations.rows()) + " for d=" +
                                    std::to_string(activations.cols()));
    if (opt.l1_coeff < 0.0) throw std::invalid_argument("train_sae: l1_coeff must be non-negative");
    SaeParams sae = init_sae(activations.cols(), opt.m, opt.seed);

    auto record = [&](std::size_t epoch, const SaeLoss& l) {
        if (log) log->push_back({epoch, l.reconstruction, l.sparsity, l.mse, l.mean_active});
    };

    Vector m1, m2;
    if (opt.optimizer == SaeOptimizer::adam) m1 = m2 = Vector(flatten(sae).size());
    for (std::size_t e = 0; e < opt.epochs; ++e) {
        auto [loss, g] = sae_loss_and_grad(sae, activations, opt.l1_coeff);
        record(e, loss);
        if (opt.optimizer == SaeOptimizer::gd) {
            auto step = [&](std::span<double> w, std::span<const double> gw) {
                for (std::size_t i = 0; i < w.size(); ++i) w[i] -= opt.lr * gw[i];
            };
            step(sae.W_enc.data(), g.W_enc.data());
            step(sae.b_enc.span(), g.b_enc.span());
            step(sae.W_dec.data(), g.W_dec.data());
            step(sae.b_dec.span(), g.b_dec.span());
        } else {
            Vector w = flatten(sae);
            const Vector gw = flatten(g);
            const double t = static_cast<double>(e + 1);
            const double c1 = 1.0 - std::pow(opt.beta1, t);
            const double c2 = 1.0 - std::pow(opt.beta2, t);
            for (std::size_t i = 0; i < w.size(); ++i) {
                m1[i] = opt.beta1 * m1[i] + (1.0 - opt.beta1) * gw[i];
                m2[i] = opt.beta2 * m2[i] + (1.0 - opt.beta2) * gw[i] * gw[i];
                w[i] -= opt.lr * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + 1e-8);
            }
            sae = unflatten(w, sae.d, sae.m);
        }
        normalize_decoder_rows(sae);
    }
    if (log) record(opt.epochs, sae_loss(sae, activations, opt.l1_coeff));
    if (!all_finite(flatten(sae).span()))
        throw std::runtime_error("train_sae: parameters diverged (non-finite); lower the learning rate");
    return sae;
}

// ---------------------------------------------------------------------------
// SAE1 container: magic, u32 d, u32 m, then W_enc, b_enc, W_dec, b_dec as
// little-endian float32, row-major, no padding.

inline constexpr io::Magic sae_magic{'S', 'A', 'E', '1'};

inline void save_sae(const SaeParams& sae, const std::string& path) {
    sae.validate();
    io::Writer w;
    w.magic(sae_magic);
    w.u32(static_cast<std::uint32_t>(sae.d));
    w.u32(static_cast<std::uint32_t>(sae.m));
    w.f32s(sae.W_enc.data());
    w.f32s(sae.b_enc.span());
    w.f32s(sae.W_dec.data());
    w.f32s(sae.b_dec.span());
    w.save(path);
}

inline SaeParams load_sae(const std::string& path) {
    io::Reader r = io::Reader::open(path);
    r.expect_magic(sae_magic);
    const std::size_t d = r.u32("d");
    const std::size_t m = r.u32("m");
    if (d == 0 || m == 0) throw FormatError(FormatError::Kind::shape_mismatch, "SAE1 header has zero width");
    const std::size_t expected = (2 * d * m + d + m) * 4;
    if (r.remaining() < expected)
        throw FormatError(FormatError::Kind::truncated_payload,
                          "truncated payload in " + path + ": header d=" + std::to_string(d) +
                              ", m=" + std::to_string(m) + " needs " + std::to_string(expected) + " bytes, found " +
                              std::to_string(r.remaining()));
    if (r.remaining() > expected)
        throw FormatError(FormatError::Kind::shape_mismatch,
                          "SAE1 payload larger than header shape d=" + std::to_string(d) + ", m=" + std::to_string(m));
    SaeParams p;
    p.d = d;
    p.m = m;
    p.W_enc = Matrix(d, m, r.f32s(d * m, "W_enc"));
    p.b_enc = Vector(r.f32s(m, "b_enc"));
    p.W_dec = Matrix(m, d, r.f32s(m * d, "W_dec"));
    p.b_dec = Vector(r.f32s(d, "b_dec"));
    return p;
}

inline SaeParams quantize_f32(SaeParams p) {
    for (auto* s : {&p.W_enc, &p.W_dec})
        for (auto& x : s->data()) x = io::quantize_f32(x);
    for (auto* v : {&p.b_enc, &p.b_dec})
        for (auto& x : *v) x = io::quantize_f32(x);
    return p;
}

}  // namespace steerkit
