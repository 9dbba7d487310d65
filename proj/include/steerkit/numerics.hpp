#pragma once

// Dense linear algebra, a seeded PRNG, logistic models trained by full-batch
// gradient descent, and a central-difference gradient oracle.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace steerkit {

class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline std::string dims_str(std::size_t r, std::size_t c) {
    return std::to_string(r) + "x" + std::to_string(c);
}

class Vector {
public:
    Vector() = default;
    explicit Vector(std::size_t n, double fill = 0.0) : data_(n, fill) {}
    Vector(std::initializer_list<double> xs) : data_(xs) {}
    explicit Vector(std::vector<double> xs) : data_(std::move(xs)) {}

    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> span() noexcept { return data_; }
    std::span<const double> span() const noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }
    auto begin() noexcept { return data_.begin(); }
    auto end() noexcept { return data_.end(); }
    auto begin() const noexcept { return data_.begin(); }
    auto end() const noexcept { return data_.end(); }

    bool operator==(const Vector&) const = default;

    Vector& operator+=(const Vector& o) {
        require_same(o, "+=");
        for (std::size_t i = 0; i < size(); ++i) data_[i] += o.data_[i];
        return *this;
    }
    Vector& operator-=(const Vector& o) {
        require_same(o, "-=");
        for (std::size_t i = 0; i < size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }
    Vector& operator*=(double s) {
        for (auto& x : data_) x *= s;
        return *this;
    }

    friend Vector operator+(Vector a, const Vector& b) { return a += b; }
    friend Vector operator-(Vector a, const Vector& b) { return a -= b; }
    friend Vector operator*(double s, Vector a) { return a *= s; }
    friend Vector operator*(Vector a, double s) { return a *= s; }

private:
    void require_same(const Vector& o, const char* op) const {
        if (o.size() != size())
            throw DimensionError(std::string("vector ") + op + ": length " + std::to_string(size()) +
                                 " vs " + std::to_string(o.size()));
    }
    std::vector<double> data_;
};

/// Row-major dense matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_)
            throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                                 " does not match shape " + dims_str(rows_, cols_));
    }
    Matrix(std::initializer_list<std::initializer_list<double>> rows) {
        rows_ = rows.size();
        cols_ = rows_ ? rows.begin()->size() : 0;
        data_.reserve(rows_ * cols_);
        for (const auto& r : rows) {
            if (r.size() != cols_) throw DimensionError("ragged matrix literal");
            data_.insert(data_.end(), r.begin(), r.end());
        }
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
    Vector row_vector(std::size_t r) const {
        auto s = row(r);
        return Vector(std::vector<double>(s.begin(), s.end()));
    }
    void set_row(std::size_t r, const Vector& v) {
        if (v.size() != cols_) throw DimensionError("set_row: length " + std::to_string(v.size()) +
                                                    " into " + dims_str(rows_, cols_));
        std::copy(v.begin(), v.end(), row(r).begin());
    }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    Matrix transpose() const {
        Matrix t(cols_, rows_);
        for (std::size_t r = 0; r < rows_; ++r)
            for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
        return t;
    }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline bool all_finite(std::span<const double> xs) {
    return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        throw DimensionError("matmul: " + dims_str(a.rows(), a.cols()) + " x " +
                             dims_str(b.rows(), b.cols()));
    Matrix out(a.rows(), b.cols());
    const std::size_t n = a.rows(), inner = a.cols(), m = b.cols();
    const double* __restrict A = a.data().data();
    const double* __restrict B = b.data().data();
    double* __restrict C = out.data().data();
    for (std::size_t i = 0; i < n; ++i) {
        double* __restrict crow = C + i * m;
        for (std::size_t k = 0; k < inner; ++k) {
            const double aik = A[i * inner + k];
            if (aik == 0.0) continue;
            const double* __restrict brow = B + k * m;
            for (std::size_t j = 0; j < m; ++j) crow[j] += aik * brow[j];
        }
    }
    return out;
}

// a^T * b without forming the transpose.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows())
        throw DimensionError("matmul_tn: " + dims_str(a.rows(), a.cols()) + "^T x " +
                             dims_str(b.rows(), b.cols()));
    Matrix out(a.cols(), b.cols());
    const std::size_t n = a.rows(), p = a.cols(), m = b.cols();
    const double* __restrict A = a.data().data();
    const double* __restrict B = b.data().data();
    double* __restrict C = out.data().data();
    for (std::size_t r = 0; r < n; ++r) {
        const double* __restrict arow = A + r * p;
        const double* __restrict brow = B + r * m;
        for (std::size_t i = 0; i < p; ++i) {
            const double ai = arow[i];
            if (ai == 0.0) continue;
            double* __restrict crow = C + i * m;
            for (std::size_t j = 0; j < m; ++j) crow[j] += ai * brow[j];
        }
    }
    return out;
}

// Row vector times matrix: (1 x rows) * (rows x cols).
inline Vector vecmat(const Vector& v, const Matrix& m) {
    if (v.size() != m.rows())
        throw DimensionError("vecmat: length " + std::to_string(v.size()) + " x " +
                             dims_str(m.rows(), m.cols()));
    Vector out(m.cols());
    for (std::size_t k = 0; k < m.rows(); ++k) {
        const double vk = v[k];
        if (vk == 0.0) continue;
        auto mrow = m.row(k);
        for (std::size_t j = 0; j < m.cols(); ++j) out[j] += vk * mrow[j];
    }
    return out;
}

inline double dot(const Vector& a, const Vector& b) {
    if (a.size() != b.size())
        throw DimensionError("dot: length " + std::to_string(a.size()) + " vs " +
                             std::to_string(b.size()));
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(const Vector& v) { return std::sqrt(dot(v, v)); }

inline Vector relu(Vector v) {
    for (auto& x : v) x = x > 0.0 ? x : 0.0;
    return v;
}

inline Vector softmax(const Vector& v) {
    Vector out(v.size());
    if (v.empty()) return out;
    const double mx = *std::max_element(v.begin(), v.end());
    double sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - mx);
        sum += out[i];
    }
    for (auto& x : out) x /= sum;
    return out;
}

inline std::size_t argmax(std::span<const double> xs) {
    return static_cast<std::size_t>(std::distance(xs.begin(), std::max_element(xs.begin(), xs.end())));
}

// ---------------------------------------------------------------------------
// PRNG: xoshiro256** seeded through splitmix64. Distribution transforms are
// written out here so that draws are identical across standard libraries.

class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed = 0) {
        std::uint64_t x = seed;
        for (auto& s : state_) s = splitmix(x);
    }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do u1 = uniform(); while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("Rng::below(0)");
        const std::uint64_t limit = max() - max() % n;
        std::uint64_t x = 0;
        do x = (*this)(); while (x >= limit);
        return x % n;
    }

    template <typename T>
    void shuffle(std::span<T> xs) {
        for (std::size_t i = xs.size(); i > 1; --i) std::swap(xs[i - 1], xs[below(i)]);
    }

    Vector unit_vector(std::size_t d) {
        Vector v(d);
        double n = 0.0;
        while (n < 1e-12) {
            for (auto& x : v) x = normal();
            n = norm2(v);
        }
        return (1.0 / n) * v;
    }

    // Independent stream derived from this one (used to split per-component seeds).
    Rng fork() { return Rng((*this)()); }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    static std::uint64_t splitmix(std::uint64_t& x) {
        std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t state_[4]{};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// ---------------------------------------------------------------------------
// Multinomial logistic regression.

struct LogisticModel {
    Matrix weights;  // features x classes
    Vector bias;     // classes

    std::size_t n_features() const { return weights.rows(); }
    std::size_t n_classes() const { return weights.cols(); }

    Vector logits(const Vector& x) const { return vecmat(x, weights) + bias; }
    Vector predict(const Vector& x) const { return softmax(logits(x)); }
    std::size_t predict_label(const Vector& x) const {
        const Vector z = logits(x);
        return argmax(z.span());
    }
};

inline std::size_t count_classes(std::span<const std::size_t> labels) {
    std::size_t k = 0;
    for (auto y : labels) k = std::max(k, y + 1);
    return k;
}

/// Mean cross-entropy plus (l2 / 2) * ||W||^2. The bias is not penalised.
inline double logistic_loss(const LogisticModel& model, const Matrix& features,
                            std::span<const std::size_t> labels, double l2) {
    double loss = 0.0;
    for (std::size_t n = 0; n < features.rows(); ++n) {
        const Vector z = model.logits(features.row_vector(n));
        const double mx = *std::max_element(z.begin(), z.end());
        double lse = 0.0;
        for (double v : z) lse += std::exp(v - mx);
        loss += mx + std::log(lse) - z[labels[n]];
    }
    loss /= static_cast<double>(features.rows());
    double reg = 0.0;
    for (double w : model.weights.data()) reg += w * w;
    return loss + 0.5 * l2 * reg;
}

/// Gradient of logistic_loss with respect to (weights, bias).
inline std::pair<Matrix, Vector> logistic_gradient(const LogisticModel& model, const Matrix& features,
                                                   std::span<const std::size_t> labels, double l2) {
    const std::size_t n_rows = features.rows();
    const std::size_t k = model.n_classes();
    Matrix gw(model.n_features(), k);
    Vector gb(k);
    const double inv_n = 1.0 / static_cast<double>(n_rows);
    for (std::size_t n = 0; n < n_rows; ++n) {
        auto x = features.row(n);
        Vector p = model.predict(features.row_vector(n));
        p[labels[n]] -= 1.0;
        for (std::size_t c = 0; c < k; ++c) {
            const double g = p[c] * inv_n;
            gb[c] += g;
            for (std::size_t f = 0; f < x.size(); ++f) gw(f, c) += x[f] * g;
        }
    }
    auto w = model.weights.data();
    auto g = gw.data();
    for (std::size_t i = 0; i < w.size(); ++i) g[i] += l2 * w[i];
    return {std::move(gw), std::move(gb)};
}

struct LogisticOptions {
    std::size_t epochs = 200;
    double lr = 0.5;
    double l2 = 1e-4;
    std::size_t n_classes = 0;  // 0: infer from labels
};

/// Full-batch gradient descent from an all-zero model. The result is
/// deterministic: there is no random initialisation to seed.
inline LogisticModel train_logistic(const Matrix& features, std::span<const std::size_t> labels,
                                    const LogisticOptions& opt) {
    if (labels.size() != features.rows())
        throw DimensionError("train_logistic: " + std::to_string(features.rows()) + " rows but " +
                             std::to_string(labels.size()) + " labels");
    const std::size_t k = opt.n_classes ? opt.n_classes : count_classes(labels);
    std::vector<bool> seen(k, false);
    for (auto y : labels) {
        if (y >= k) throw std::invalid_argument("train_logistic: label out of range");
        seen[y] = true;
    }
    if (std::count(seen.begin(), seen.end(), true) < 2)
        throw std::invalid_argument("train_logistic: need at least two distinct classes");

    LogisticModel model{Matrix(features.cols(), k), Vector(k)};
    for (std::size_t e = 0; e < opt.epochs; ++e) {
        auto [gw, gb] = logistic_gradient(model, features, labels, opt.l2);
        auto w = model.weights.data();
        auto g = gw.data();
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= opt.lr * g[i];
        for (std::size_t c = 0; c < k; ++c) model.bias[c] -= opt.lr * gb[c];
    }
    return model;
}

inline LogisticModel train_logistic(const Matrix& features, std::span<const std::size_t> labels,
                                    std::size_t epochs, double lr, double l2) {
    return train_logistic(features, labels, LogisticOptions{epochs, lr, l2, 0});
}

inline double accuracy(const LogisticModel& model, const Matrix& features,
                       std::span<const std::size_t> labels) {
    if (features.rows() == 0) return 0.0;
    std::size_t hit = 0;
    for (std::size_t n = 0; n < features.rows(); ++n)
        hit += model.predict_label(features.row_vector(n)) == labels[n];
    return static_cast<double>(hit) / static_cast<double>(features.rows());
}

// ---------------------------------------------------------------------------

inline Vector finite_diff_grad(const std::function<double(const Vector&)>& loss, const Vector& params,
                               double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_grad: eps must be positive");
    Vector grad(params.size());
    Vector p = params;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double orig = p[i];
        p[i] = orig + eps;
        const double up = loss(p);
        p[i] = orig - eps;
        const double down = loss(p);
        p[i] = orig;
        grad[i] = (up - down) / (2.0 * eps);
    }
    return grad;
}

/// max_i |a_i - b_i| / max(max_i |a_i|, max_i |b_i|); 0 when both are zero.
inline double max_relative_error(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError("max_relative_error: length mismatch");
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff = std::max(diff, std::abs(a[i] - b[i]));
        scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
    }
    return scale == 0.0 ? diff : diff / scale;
}

inline Vector mean_rows(const Matrix& m) {
    Vector out(m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c) out[c] += m(r, c);
    if (m.rows()) out *= 1.0 / static_cast<double>(m.rows());
    return out;
}

inline Matrix stack_rows(std::span<const Vector> rows) {
    if (rows.empty()) return {};
    Matrix m(rows.size(), rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r) m.set_row(r, rows[r]);
    return m;
}

}  // namespace steerkit
