#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "palu/numerics.hpp"
#include "test_util.hpp"

using namespace palu;
using palu::testing::error_code;
using palu::testing::random_distribution;
using palu::testing::random_logits;

TEST(Softmax, SymmetricPair) {
    const auto p = softmax(std::vector<double>{0.0, 0.0});
    EXPECT_DOUBLE_EQ(p[0], 0.5);
    EXPECT_DOUBLE_EQ(p[1], 0.5);
}

TEST(Softmax, RealizesGivenDistribution) {
    const auto p = softmax(std::vector<double>{std::log(0.8), std::log(0.15), std::log(0.05)});
    EXPECT_NEAR(p[0], 0.8, 1e-12);
    EXPECT_NEAR(p[1], 0.15, 1e-12);
    EXPECT_NEAR(p[2], 0.05, 1e-12);
}

TEST(Softmax, ShiftInvariantAndNormalized) {
    Rng rng(101);
    for (int trial = 0; trial < 200; ++trial) {
        const auto z = random_logits(rng, 2 + rng.below(30), 5.0);
        const double a = rng.uniform(-50.0, 50.0);
        std::vector<double> shifted(z);
        for (double& v : shifted) v += a;
        const auto p = softmax(z);
        const auto q = softmax(shifted);
        EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
        for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(p[i], q[i], 1e-12);
    }
    std::vector<double> z{1.0, 2.0, 3.0};
    std::vector<double> z5{6.0, 7.0, 8.0};
    const auto p = softmax(z);
    const auto q = softmax(z5);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(p[i], q[i], 1e-15);
}

TEST(Softmax, LargeMagnitudesStayFinite) {
    const auto p = softmax(std::vector<double>{1000.0, 999.0, -1000.0});
    EXPECT_NEAR(p[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-12);
    EXPECT_EQ(p[2], 0.0);
}

TEST(Softmax, RejectsNonFinite) {
    EXPECT_EQ(error_code([] { softmax(std::vector<double>{0.0, NAN}); }), ErrorCode::kInvalidInput);
    EXPECT_EQ(error_code([] { softmax(std::vector<double>{kInfinity, 0.0}); }), ErrorCode::kInvalidInput);
}

TEST(LogSumExp, Basic) {
    EXPECT_NEAR(log_sum_exp(std::vector<double>{0.0, 0.0}), std::log(2.0), 1e-15);
    const std::vector<double> c(7, -3.25);
    EXPECT_NEAR(log_sum_exp(c), -3.25 + std::log(7.0), 1e-14);
}

TEST(LogSumExp, AgreesWithNaiveSum) {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const auto z = random_logits(rng, 5, 1.0);
        double naive = 0.0;
        for (double v : z) naive += std::exp(v);
        EXPECT_NEAR(log_sum_exp(z), std::log(naive), 1e-12);
    }
}

TEST(LogSumExp, EmptyIsInvalid) {
    EXPECT_EQ(error_code([] { log_sum_exp(std::vector<double>{}); }), ErrorCode::kInvalidInput);
}

TEST(LogSoftmax, MatchesLogOfSoftmax) {
    Rng rng(6);
    const auto z = random_logits(rng, 9);
    const auto lp = log_softmax(z);
    const auto p = softmax(z);
    for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(lp[i], std::log(p[i]), 1e-12);
}

TEST(Entropy, Examples) {
    EXPECT_NEAR(entropy(std::vector<double>(4, 0.25)), std::log(4.0), 1e-15);
    EXPECT_EQ(entropy(std::vector<double>{0.0, 1.0, 0.0}), 0.0);
    const double expected = -(0.8 * std::log(0.8) + 0.15 * std::log(0.15) + 0.05 * std::log(0.05));
    EXPECT_NEAR(entropy(std::vector<double>{0.8, 0.15, 0.05}), expected, 1e-15);
}

TEST(Entropy, BoundedByLogV) {
    Rng rng(8);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng.below(20);
        const auto p = random_distribution(rng, n);
        const double h = entropy(p);
        EXPECT_GE(h, 0.0);
        EXPECT_LE(h, std::log(static_cast<double>(n)) + 1e-12);
    }
    for (double c : {-4.0, 0.0, 17.5}) {
        EXPECT_NEAR(entropy(softmax(std::vector<double>(11, c))), std::log(11.0), 1e-12);
    }
}

TEST(Entropy, NegativeEntryIsInvalid) {
    EXPECT_EQ(error_code([] { entropy(std::vector<double>{1.1, -0.1}); }), ErrorCode::kInvalidInput);
}

TEST(KlDivergence, Examples) {
    EXPECT_NEAR(kl_divergence(std::vector<double>{1.0, 0.0}, std::vector<double>{0.5, 0.5}), std::log(2.0), 1e-15);
    EXPECT_NEAR(kl_divergence(std::vector<double>{0.5, 0.5}, std::vector<double>{0.75, 0.25}),
                0.5 * std::log(4.0 / 3.0), 1e-12);
    EXPECT_NEAR(0.5 * std::log(4.0 / 3.0), 0.143841, 1e-6);
}

TEST(KlDivergence, FloorKeepsResultFinite) {
    const double kl = kl_divergence(std::vector<double>{0.5, 0.5}, std::vector<double>{1.0, 0.0});
    EXPECT_NEAR(kl, 0.5 * std::log(0.5 / 1.0) + 0.5 * std::log(0.5 / kKlFloor), 1e-9);
}

TEST(KlDivergence, NonNegativeAndZeroOnIdentity) {
    Rng rng(9);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 2 + rng.below(12);
        const auto p = random_distribution(rng, n);
        const auto q = random_distribution(rng, n);
        EXPECT_GE(kl_divergence(p, q), 0.0);
        EXPECT_NEAR(kl_divergence(p, p), 0.0, 1e-15);
    }
}

TEST(KlDivergence, LengthMismatchIsInvalid) {
    EXPECT_EQ(error_code([] { kl_divergence(std::vector<double>{1.0}, std::vector<double>{0.5, 0.5}); }),
              ErrorCode::kInvalidInput);
}

TEST(TopK, Examples) {
    EXPECT_EQ(top_k_indices(std::vector<double>{3, 1, 2}, 2).indices, (std::vector<std::size_t>{0, 2}));
    EXPECT_EQ(top_k_indices(std::vector<double>{1, 1, 1}, 2).indices, (std::vector<std::size_t>{0, 1}));
    const TopKSet clamped = top_k_indices(std::vector<double>{1, 2, 3}, 5);
    EXPECT_EQ(clamped.indices, (std::vector<std::size_t>{0, 1, 2}));
    EXPECT_EQ(clamped.k, 5u);
    EXPECT_EQ(top_k_indices(std::vector<double>{1, 2, 3}, Budget::all()).indices,
              (std::vector<std::size_t>{0, 1, 2}));
}

TEST(TopK, ZeroIsInvalid) {
    EXPECT_EQ(error_code([] { top_k_indices(std::vector<double>{1, 2}, 0); }), ErrorCode::kInvalidInput);
}

TEST(TopK, MatchesSortOracleAndPermutes) {
    Rng rng(10);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 2 + rng.below(25);
        auto z = random_logits(rng, n);
        // Force some ties.
        if (n > 3) z[n - 1] = z[1];
        const std::size_t k = 1 + rng.below(n + 2);
        const TopKSet s = top_k_indices(z, k);

        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return z[a] > z[b]; });
        std::vector<std::size_t> expected(order.begin(), order.begin() + std::min(k, n));
        std::sort(expected.begin(), expected.end());
        EXPECT_EQ(s.indices, expected);

        // Permuting z permutes the selected values identically.
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        rng.shuffle(std::span<std::size_t>(perm));
        std::vector<double> zp(n);
        for (std::size_t i = 0; i < n; ++i) zp[perm[i]] = z[i];
        std::vector<double> a, b;
        for (std::size_t i : s.indices) a.push_back(z[i]);
        for (std::size_t i : top_k_indices(zp, k).indices) b.push_back(zp[i]);
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        EXPECT_EQ(a, b);
    }
}

TEST(RestrictedEntropy, Examples) {
    TopKSet s{{0, 1, 2}, 3};
    EXPECT_NEAR(restricted_entropy(std::vector<double>{0.2, 0.2, 0.2, 0.4}, s), std::log(3.0), 1e-15);
    EXPECT_NEAR(restricted_entropy(std::vector<double>{1.0 - 2e-15, 1e-15, 1e-15, 0.0}, s), 0.0, 1e-12);
    const double h = restricted_entropy(std::vector<double>{0.8, 0.15, 0.05}, TopKSet{{0, 1}, 2});
    const double a = 16.0 / 19.0, b = 3.0 / 19.0;
    EXPECT_NEAR(h, -(a * std::log(a) + b * std::log(b)), 1e-15);
}

TEST(RestrictedEntropy, Errors) {
    EXPECT_EQ(error_code([] { restricted_entropy(std::vector<double>{0.0, 1.0}, TopKSet{{0}, 1}); }),
              ErrorCode::kUndefinedValue);
    EXPECT_EQ(error_code([] { restricted_entropy(std::vector<double>{0.5, 0.5}, TopKSet{{}, 1}); }),
              ErrorCode::kInvalidInput);
}

TEST(Argmax, LowestIndexWinsTies) {
    EXPECT_EQ(argmax(std::vector<double>{1, 3, 3, 2}), 1u);
}

TEST(FiniteDifference, Quadratic) {
    auto f = [](std::span<const double> z) { return z[0] * z[0] + z[1] * z[1]; };
    const auto g = finite_difference_gradient(f, std::vector<double>{1.0, 2.0});
    EXPECT_NEAR(g[0], 2.0, 1e-8);
    EXPECT_NEAR(g[1], 4.0, 1e-8);
}

TEST(FiniteDifference, ConstantGivesZero) {
    const auto g = finite_difference_gradient([](std::span<const double>) { return 3.0; },
                                              std::vector<double>{1.0, -2.0, 0.5});
    for (double v : g) EXPECT_EQ(v, 0.0);
}

TEST(FiniteDifference, NonFiniteIsOracleFailure) {
    auto f = [](std::span<const double> z) { return std::log(z[0]); };
    EXPECT_EQ(error_code([&] { finite_difference_gradient(f, std::vector<double>{0.0}); }),
              ErrorCode::kOracleFailure);
    EXPECT_EQ(error_code([&] { finite_difference_gradient(f, std::vector<double>{1.0}, 0.0); }),
              ErrorCode::kInvalidInput);
}

TEST(Budget, Resolve) {
    EXPECT_EQ(Budget::of(3).resolve(10), 3u);
    EXPECT_EQ(Budget::of(30).resolve(10), 10u);
    EXPECT_EQ(Budget::all().resolve(10), 10u);
    EXPECT_TRUE(Budget::all().is_all());
    EXPECT_FALSE(Budget::of(10).is_all());
}
