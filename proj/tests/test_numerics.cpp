#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "steerkit/numerics.hpp"

using namespace steerkit;

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c) {
    Matrix m(r, c);
    for (auto& x : m.data()) x = rng.normal();
    return m;
}

Vector random_vector(Rng& rng, std::size_t n, double scale = 1.0) {
    Vector v(n);
    for (auto& x : v) x = scale * rng.normal();
    return v;
}

// Naive triple loop, written independently of matmul.
Matrix naive_product(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            out(i, j) = s;
        }
    return out;
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
    const Matrix b{{1, 2}, {3, 4}};
    EXPECT_EQ(matmul(Matrix::identity(2), b), b);
}

TEST(Matmul, Projector) {
    const Matrix p{{1, 0}, {0, 0}};
    const Matrix b{{5, 6}, {7, 8}};
    EXPECT_EQ(matmul(p, b), (Matrix{{5, 6}, {0, 0}}));
}

TEST(Matmul, MatchesNaiveLoop) {
    Rng rng(11);
    for (int t = 0; t < 20; ++t) {
        const Matrix a = random_matrix(rng, 3, 4), b = random_matrix(rng, 4, 2);
        const Matrix got = matmul(a, b), want = naive_product(a, b);
        for (std::size_t i = 0; i < got.data().size(); ++i) EXPECT_NEAR(got.data()[i], want.data()[i], 1e-12);
    }
}

TEST(Matmul, TransposedProductMatchesExplicitTranspose) {
    Rng rng(12);
    const Matrix a = random_matrix(rng, 7, 3), b = random_matrix(rng, 7, 5);
    const Matrix got = matmul_tn(a, b), want = naive_product(a.transpose(), b);
    for (std::size_t i = 0; i < got.data().size(); ++i) EXPECT_NEAR(got.data()[i], want.data()[i], 1e-12);
}

TEST(Matmul, DimensionMismatchNamesShapes) {
    try {
        matmul(Matrix(2, 3), Matrix(2, 3));
        FAIL() << "expected rejection";
    } catch (const DimensionError& e) {
        EXPECT_NE(std::string(e.what()).find("2x3"), std::string::npos) << e.what();
    }
}

TEST(Matmul, AssociativeProperty) {
    Rng rng(13);
    for (int t = 0; t < 50; ++t) {
        const std::size_t n = 1 + rng.below(5), k = 1 + rng.below(5), l = 1 + rng.below(5), m = 1 + rng.below(5);
        const Matrix a = random_matrix(rng, n, k), b = random_matrix(rng, k, l), c = random_matrix(rng, l, m);
        const Matrix x = matmul(matmul(a, b), c), y = matmul(a, matmul(b, c));
        EXPECT_LE(max_relative_error(x.data(), y.data()), 1e-9);
    }
}

TEST(Relu, Examples) {
    EXPECT_EQ(relu(Vector{1, -2, 0}), (Vector{1, 0, 0}));
    EXPECT_EQ(relu(Vector{-1, -0.5, -3}), (Vector{0, 0, 0}));
    EXPECT_EQ(relu(Vector{0.5, -0.5, 3.25}), (Vector{0.5, 0, 3.25}));
}

TEST(Relu, IdempotentProperty) {
    Rng rng(14);
    for (int t = 0; t < 200; ++t) {
        const Vector v = random_vector(rng, 1 + rng.below(10), 3.0);
        EXPECT_EQ(relu(relu(v)), relu(v));
    }
}

TEST(Softmax, SymmetricPair) {
    const Vector p = softmax(Vector{0, 0});
    EXPECT_DOUBLE_EQ(p[0], 0.5);
    EXPECT_DOUBLE_EQ(p[1], 0.5);
}

TEST(Softmax, LargeLogitDoesNotOverflow) {
    const Vector p = softmax(Vector{1000, 0});
    EXPECT_TRUE(std::isfinite(p[0]) && std::isfinite(p[1]));
    EXPECT_NEAR(p[0], 1.0, 1e-12);
    EXPECT_NEAR(p[1], 0.0, 1e-12);
}

TEST(Softmax, OneTwoThreeMatchesLongDoubleOracle) {
    const Vector p = softmax(Vector{1, 2, 3});
    const long double e1 = std::exp(1.0L), e2 = std::exp(2.0L), e3 = std::exp(3.0L), s = e1 + e2 + e3;
    EXPECT_NEAR(p[0], static_cast<double>(e1 / s), 1e-15);
    EXPECT_NEAR(p[1], static_cast<double>(e2 / s), 1e-15);
    EXPECT_NEAR(p[2], static_cast<double>(e3 / s), 1e-15);
    // Frozen values of the oracle above.
    EXPECT_NEAR(p[0], 0.09003057317038046, 1e-15);
    EXPECT_NEAR(p[2], 0.6652409557748219, 1e-15);
}

TEST(Softmax, ShiftInvarianceAndNormalisationProperty) {
    Rng rng(15);
    for (int t = 0; t < 200; ++t) {
        const Vector v = random_vector(rng, 1 + rng.below(8), 5.0);
        const double c = rng.uniform(-100, 100);
        Vector shifted = v;
        for (auto& x : shifted) x += c;
        const Vector a = softmax(v), b = softmax(shifted);
        EXPECT_NEAR(std::accumulate(a.begin(), a.end(), 0.0), 1.0, 1e-12);
        for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
    }
}

TEST(Logistic, SeparableSetReachesFullTrainingAccuracy) {
    Rng rng(16);
    Matrix X(20, 2);
    std::vector<std::size_t> y;
    for (std::size_t i = 0; i < 20; ++i) {
        const std::size_t label = i % 2;
        const double cx = label ? 2.0 : -2.0;
        X(i, 0) = cx + rng.uniform(-1, 1);
        X(i, 1) = rng.uniform(-1, 1);
        y.push_back(label);
    }
    // The construction separates on x0 with margin 2; check that exhaustively.
    for (std::size_t i = 0; i < 20; ++i) ASSERT_EQ(X(i, 0) > 0, y[i] == 1);
    const LogisticModel m = train_logistic(X, y, 200, 0.5, 1e-4);
    EXPECT_DOUBLE_EQ(accuracy(m, X, y), 1.0);
}

TEST(Logistic, RandomLabelsStayNearChance) {
    Rng rng(17);
    Matrix X(200, 5);
    for (auto& x : X.data()) x = rng.normal();
    std::vector<std::size_t> y(200);
    for (std::size_t i = 0; i < 200; ++i) y[i] = i % 2;
    rng.shuffle(std::span<std::size_t>(y));
    Matrix tr(100, 5), te(100, 5);
    std::vector<std::size_t> ytr(y.begin(), y.begin() + 100), yte(y.begin() + 100, y.end());
    for (std::size_t i = 0; i < 100; ++i) {
        tr.set_row(i, X.row_vector(i));
        te.set_row(i, X.row_vector(100 + i));
    }
    const double acc = accuracy(train_logistic(tr, ytr, 200, 0.5, 1e-4), te, yte);
    EXPECT_GE(acc, 0.2);
    EXPECT_LE(acc, 0.8);
}

TEST(Logistic, ZeroEpochsGivesUniformPredictions) {
    const Matrix X{{1, 2}, {3, 4}, {-1, 0}};
    const std::vector<std::size_t> y{0, 1, 2};
    const LogisticModel m = train_logistic(X, y, 0, 0.5, 0.0);
    for (double w : m.weights.data()) EXPECT_EQ(w, 0.0);
    const Vector p = m.predict(X.row_vector(0));
    for (double x : p) EXPECT_DOUBLE_EQ(x, 1.0 / 3.0);
}

TEST(Logistic, SingleClassRejected) {
    const Matrix X{{1}, {2}};
    const std::vector<std::size_t> y{1, 1};
    EXPECT_THROW(train_logistic(X, y, 10, 0.1, 0.0), std::invalid_argument);
}

TEST(Logistic, TrainingDoesNotIncreaseLoss) {
    Rng rng(18);
    for (int t = 0; t < 10; ++t) {
        Matrix X = random_matrix(rng, 40, 4);
        std::vector<std::size_t> y;
        for (std::size_t i = 0; i < 40; ++i) y.push_back(X(i, 0) + 0.5 * rng.normal() > 0 ? 1 : 0);
        if (std::count(y.begin(), y.end(), 1) == 0 || std::count(y.begin(), y.end(), 0) == 0) continue;
        const double before = logistic_loss(train_logistic(X, y, 0, 0.5, 1e-3), X, y, 1e-3);
        const double after = logistic_loss(train_logistic(X, y, 100, 0.5, 1e-3), X, y, 1e-3);
        EXPECT_LE(after, before);
    }
}

TEST(Logistic, PredictionsAreDistributionsProperty) {
    Rng rng(19);
    Matrix X = random_matrix(rng, 30, 3);
    std::vector<std::size_t> y;
    for (std::size_t i = 0; i < 30; ++i) y.push_back(i % 3);
    const LogisticModel m = train_logistic(X, y, 50, 1.0, 0.0);
    for (int t = 0; t < 100; ++t) {
        const Vector p = m.predict(random_vector(rng, 3, 10.0));
        EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-9);
        for (double x : p) EXPECT_TRUE(x >= 0.0 && x <= 1.0);
    }
}

TEST(Logistic, AnalyticGradientMatchesFiniteDifferences) {
    Rng rng(20);
    for (int t = 0; t < 10; ++t) {
        const std::size_t n = 12, f = 3, k = 3;
        const Matrix X = random_matrix(rng, n, f);
        std::vector<std::size_t> y;
        for (std::size_t i = 0; i < n; ++i) y.push_back(rng.below(k));
        LogisticModel m{random_matrix(rng, f, k), random_vector(rng, k)};
        const double l2 = 0.01;

        auto flat = [&](const LogisticModel& mm) {
            std::vector<double> v(mm.weights.data().begin(), mm.weights.data().end());
            v.insert(v.end(), mm.bias.begin(), mm.bias.end());
            return Vector(v);
        };
        auto unflat = [&](const Vector& v) {
            LogisticModel mm{Matrix(f, k), Vector(k)};
            std::copy(v.begin(), v.begin() + f * k, mm.weights.data().begin());
            std::copy(v.begin() + f * k, v.end(), mm.bias.begin());
            return mm;
        };
        const Vector numeric =
            finite_diff_grad([&](const Vector& p) { return logistic_loss(unflat(p), X, y, l2); }, flat(m), 1e-6);
        auto [gw, gb] = logistic_gradient(m, X, y, l2);
        const Vector analytic = flat(LogisticModel{gw, gb});
        EXPECT_LE(max_relative_error(analytic.span(), numeric.span()), 1e-5);
    }
}

TEST(FiniteDiff, Quadratic) {
    const Vector g = finite_diff_grad([](const Vector& p) { return dot(p, p); }, Vector{1, 2}, 1e-5);
    EXPECT_NEAR(g[0], 2.0, 1e-6);
    EXPECT_NEAR(g[1], 4.0, 1e-6);
}

TEST(FiniteDiff, ConstantFunctionHasZeroGradient) {
    const Vector g = finite_diff_grad([](const Vector&) { return 3.5; }, Vector{1, -2, 7}, 1e-4);
    for (double x : g) EXPECT_EQ(x, 0.0);
}

TEST(FiniteDiff, NonPositiveEpsRejected) {
    EXPECT_THROW(finite_diff_grad([](const Vector&) { return 0.0; }, Vector{1}, 0.0), std::invalid_argument);
}

TEST(Rng, SameSeedSameStream) {
    Rng a(42), b(42), c(43);
    bool differs = false;
    for (int i = 0; i < 100; ++i) {
        const auto x = a();
        EXPECT_EQ(x, b());
        differs = differs || x != c();
    }
    EXPECT_TRUE(differs);
}

TEST(Rng, BelowStaysInRange) {
    Rng rng(1);
    for (std::uint64_t n : {1u, 2u, 7u, 1000u})
        for (int i = 0; i < 1000; ++i) EXPECT_LT(rng.below(n), n);
    EXPECT_THROW(rng.below(0), std::invalid_argument);
}
