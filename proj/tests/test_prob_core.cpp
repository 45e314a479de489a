#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "trkd/prob_core.hpp"

using namespace trkd;

TEST(TemperatureScale, DividesEveryEntry) {
    const LogitVector z{2, 4};
    EXPECT_EQ(temperature_scale(z, 1.0)[0], 2.0);
    const auto t4 = temperature_scale(z, 4.0);
    EXPECT_DOUBLE_EQ(t4[0], 0.5);
    EXPECT_DOUBLE_EQ(t4[1], 1.0);
    const auto t2 = temperature_scale(LogitVector{1, 2, 3}, 2.0);
    EXPECT_DOUBLE_EQ(t2[0], 0.5);
    EXPECT_DOUBLE_EQ(t2[1], 1.0);
    EXPECT_DOUBLE_EQ(t2[2], 1.5);
}

TEST(TemperatureScale, RejectsBadTemperature) {
    const LogitVector z{1, 2};
    EXPECT_THROW(temperature_scale(z, 0.0), InvalidParameter);
    EXPECT_THROW(temperature_scale(z, -1.0), InvalidParameter);
    EXPECT_THROW(temperature_scale(z, std::nan("")), InvalidParameter);
    EXPECT_THROW(temperature_scale(z, INFINITY), InvalidParameter);
}

TEST(LogitVector, RejectsInvalidInput) {
    EXPECT_THROW(LogitVector({1.0}), InvalidParameter);
    EXPECT_THROW(LogitVector({1.0, NAN}), InvalidParameter);
    EXPECT_THROW(LogitVector({1.0, -INFINITY}), InvalidParameter);
}

TEST(Softmax, Examples) {
    const auto u = softmax(LogitVector{0, 0, 0, 0});
    for (double p : u.probs()) EXPECT_DOUBLE_EQ(p, 0.25);

    // mpmath, 30 digits
    const auto p = softmax(LogitVector{1, 2, 3});
    EXPECT_NEAR(p[0], 0.0900305731703805, 1e-15);
    EXPECT_NEAR(p[1], 0.2447284710547977, 1e-15);
    EXPECT_NEAR(p[2], 0.6652409557748219, 1e-15);

    const auto big = softmax(LogitVector{1000, 0});
    EXPECT_DOUBLE_EQ(big[0], 1.0);
    EXPECT_EQ(big[1], 0.0);
    EXPECT_EQ(big.log_probs()[0], 0.0);
    EXPECT_DOUBLE_EQ(big.log_probs()[1], -1000.0);
}

TEST(KlDivergence, Examples) {
    const ProbVector p{0.5, 0.5};
    EXPECT_EQ(kl_divergence(p, p), 0.0);
    EXPECT_NEAR(kl_divergence(p, ProbVector{0.25, 0.75}), 0.143841036225890, 1e-14);
    EXPECT_NEAR(kl_divergence(ProbVector{1.0, 0.0}, p), std::log(2.0), 1e-15);
}

TEST(KlDivergence, ZeroStudentMassIsDivergentNotNan) {
    const double kl = kl_divergence(ProbVector{0.5, 0.5}, ProbVector{1.0, 0.0});
    EXPECT_TRUE(is_divergent(kl));
    EXPECT_FALSE(std::isnan(kl));
    // zero teacher mass against zero student mass contributes nothing
    EXPECT_EQ(kl_divergence(ProbVector{1.0, 0.0}, ProbVector{1.0, 0.0}), 0.0);
}

TEST(KlDivergence, LengthMismatch) {
    EXPECT_THROW(kl_divergence(ProbVector{0.5, 0.5}, ProbVector{0.2, 0.3, 0.5}), ShapeError);
}

TEST(ProbVector, RejectsNonDistributions) {
    EXPECT_THROW(ProbVector({0.5, 0.6}), InvalidParameter);
    EXPECT_THROW(ProbVector({-0.1, 1.1}), InvalidParameter);
}

class ProbCoreProperties : public ::testing::Test {
protected:
    std::mt19937_64 rng{20240917};
    static constexpr int kIterations = 500;
};

TEST_F(ProbCoreProperties, GibbsInequality) {
    for (int it = 0; it < kIterations; ++it) {
        const std::size_t C = 2 + rng() % 30;
        const auto p = softmax(LogitVector(oracle::random_logits(rng, C)));
        const auto q = softmax(LogitVector(oracle::random_logits(rng, C)));
        const double kl = kl_divergence(p, q);
        EXPECT_GE(kl, 0.0);
        EXPECT_LE(kl_divergence(p, p), 1e-12);
    }
}

TEST_F(ProbCoreProperties, SoftmaxShiftInvariance) {
    std::uniform_real_distribution<double> shift(-500.0, 500.0);
    for (int it = 0; it < kIterations; ++it) {
        const std::size_t C = 2 + rng() % 30;
        auto z = oracle::random_logits(rng, C, 5.0);
        const auto p = softmax(LogitVector(z));
        const double c = shift(rng);
        for (double& v : z) v += c;
        const auto q = softmax(LogitVector(z));
        for (std::size_t i = 0; i < C; ++i) EXPECT_NEAR(p[i], q[i], 1e-12);
    }
}

TEST_F(ProbCoreProperties, LogProbsConsistentAndNormalized) {
    for (int it = 0; it < kIterations; ++it) {
        const std::size_t C = 2 + rng() % 50;
        const auto z = oracle::random_logits(rng, C, 10.0);
        const auto p = softmax(LogitVector(z));
        const auto ref = oracle::softmax(z);
        double sum = 0.0;
        for (std::size_t i = 0; i < C; ++i) {
            sum += p[i];
            EXPECT_NEAR(p[i], static_cast<double>(ref[i]), 1e-14);
            if (p[i] > 1e-300) EXPECT_NEAR(std::exp(p.log_probs()[i]), p[i], 1e-12);
            EXPECT_TRUE(std::isfinite(p.log_probs()[i]));
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
    }
}

TEST_F(ProbCoreProperties, HigherTemperatureFlattensTheMax) {
    std::uniform_real_distribution<double> temp(0.1, 10.0);
    for (int it = 0; it < kIterations; ++it) {
        const LogitVector z(oracle::random_logits(rng, 2 + rng() % 20, 3.0));
        double t1 = temp(rng), t2 = temp(rng);
        if (t1 > t2) std::swap(t1, t2);
        const auto hot = softmax(temperature_scale(z, t2)).probs();
        const auto cold = softmax(temperature_scale(z, t1)).probs();
        EXPECT_LE(*std::max_element(hot.begin(), hot.end()),
                  *std::max_element(cold.begin(), cold.end()) + 1e-15);
    }
}

TEST_F(ProbCoreProperties, KlMatchesDirectSummation) {
    for (int it = 0; it < kIterations; ++it) {
        const std::size_t C = 2 + rng() % 30;
        const auto zp = oracle::random_logits(rng, C);
        const auto zq = oracle::random_logits(rng, C);
        const double kl = kl_divergence(softmax(LogitVector(zp)), softmax(LogitVector(zq)));
        EXPECT_NEAR(kl, static_cast<double>(oracle::kl(oracle::softmax(zp), oracle::softmax(zq))), 1e-13);
    }
}
