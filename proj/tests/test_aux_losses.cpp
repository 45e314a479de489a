#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "trkd/aux_losses.hpp"

using namespace trkd;

namespace {

AamConfig config(RowMatrix w, double s, double m) {
    AamConfig c;
    c.scale = s;
    c.margin = m;
    c.class_weights = std::move(w);
    return c;
}

RowMatrix random_unit_rows(std::mt19937_64& rng, std::size_t C, std::size_t d) {
    RowMatrix w(static_cast<Eigen::Index>(C), static_cast<Eigen::Index>(d));
    std::normal_distribution<double> n(0.0, 1.0);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = n(rng);
    normalize_rows(w);
    return w;
}

/// Plain softmax cross-entropy on s * cos.
double scaled_cosine_ce(const Embedding& e, std::size_t y, const RowMatrix& w, double s) {
    const auto z = scaled_cosine_logits(e, w, s);
    return -log_softmax(z)[y];
}

}  // namespace

TEST(AamSoftmax, TwoClassExample) {
    RowMatrix w(2, 2);
    w << 1, 0, 0, 1;
    const auto l = aam_softmax_loss({1.0, 0.0}, 0, config(w, 1.0, 0.0));
    // -log(e / (e + 1))
    EXPECT_NEAR(l.value, 0.313261687518223, 1e-14);
}

TEST(AamSoftmax, DefaultScaleAndMargin) {
    const AamConfig c;
    EXPECT_EQ(c.scale, 32.0);
    EXPECT_EQ(c.margin, 0.2);
}

TEST(AamSoftmax, MarginUsesAngleSum) {
    RowMatrix w(2, 2);
    w << 1, 0, 0, 1;
    const double theta = 0.7;
    const Embedding e{std::cos(theta), std::sin(theta)};
    const double m = 0.2, s = 5.0;
    const auto l = aam_softmax_loss(e, 0, config(w, s, m));
    const double a = s * std::cos(theta + m), b = s * std::sin(theta);
    EXPECT_NEAR(l.value, -(a - std::log(std::exp(a) + std::exp(b))), 1e-12);
}

TEST(AamSoftmax, LinearExtensionPastPi) {
    // theta close to pi: cos(theta) <= cos(pi - m), so the target logit is cos - m sin m.
    RowMatrix w(2, 2);
    w << 1, 0, 0, 1;
    const double theta = std::numbers::pi - 0.1;
    const Embedding e{std::cos(theta), std::sin(theta)};
    const double m = 0.2;
    const auto l = aam_softmax_loss(e, 0, config(w, 1.0, m));
    const double a = std::cos(theta) - m * std::sin(m), b = std::sin(theta);
    EXPECT_NEAR(l.value, -(a - std::log(std::exp(a) + std::exp(b))), 1e-12);
}

TEST(AamSoftmax, Errors) {
    RowMatrix w(2, 2);
    w << 1, 0, 0, 1;
    EXPECT_THROW(aam_softmax_loss({0.0, 0.0}, 0, config(w, 32, 0.2)), DegenerateInput);
    EXPECT_THROW(aam_softmax_loss({1.0, 0.0, 0.0}, 0, config(w, 32, 0.2)), ShapeError);
    EXPECT_THROW(aam_softmax_loss({1.0, 0.0}, 2, config(w, 32, 0.2)), IndexError);
    EXPECT_THROW(aam_softmax_loss({1.0, 0.0}, 0, config(w, 0.0, 0.2)), InvalidParameter);
    EXPECT_THROW(aam_softmax_loss({1.0, 0.0}, 0, config(w, 32, 2.0)), InvalidParameter);
    RowMatrix bad = w;
    bad(0, 0) = 2.0;
    EXPECT_THROW(aam_softmax_loss({1.0, 0.0}, 0, config(bad, 32, 0.2)), InvalidParameter);
}

TEST(AamSoftmax, ZeroMarginIsScaledCosineCrossEntropy) {
    std::mt19937_64 rng(4);
    for (int it = 0; it < 200; ++it) {
        const std::size_t C = 2 + rng() % 20, d = 2 + rng() % 10;
        const auto w = random_unit_rows(rng, C, d);
        const auto e = gradcheck::unit_random(rng, d);
        const std::size_t y = rng() % C;
        EXPECT_NEAR(aam_softmax_loss(e, y, config(w, 32, 0.0)).value, scaled_cosine_ce(e, y, w, 32), 1e-12);
    }
}

TEST(AamSoftmax, InvariantToEmbeddingNorm) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> c(1e-3, 1e3);
    for (int it = 0; it < 200; ++it) {
        const std::size_t C = 2 + rng() % 20, d = 2 + rng() % 10;
        const auto cfg = config(random_unit_rows(rng, C, d), 32, 0.2);
        auto e = gradcheck::unit_random(rng, d);
        const std::size_t y = rng() % C;
        const double base = aam_softmax_loss(e, y, cfg).value;
        const double k = c(rng);
        for (double& v : e) v *= k;
        EXPECT_NEAR(aam_softmax_loss(e, y, cfg).value, base, 1e-10);
    }
}

TEST(AamSoftmax, GradientsMatchFiniteDifferences) {
    const auto r = gradcheck::check_aam(100, 31);
    EXPECT_EQ(r.instances, 100);
    EXPECT_LE(r.max_rel_err, 1e-6);
}

TEST(EmbedLosses, MseExamples) {
    EXPECT_EQ(mse_embed_loss({0.3, -2.0}, {0.3, -2.0}).value, 0.0);
    const auto l = mse_embed_loss({1, 0}, {0, 1});
    EXPECT_DOUBLE_EQ(l.value, 1.0);
    EXPECT_DOUBLE_EQ(l.grad[0], 1.0);
    EXPECT_DOUBLE_EQ(l.grad[1], -1.0);
    EXPECT_THROW(mse_embed_loss({1, 0}, {0, 1, 2}), ShapeError);
}

TEST(EmbedLosses, CosExamples) {
    EXPECT_NEAR(cos_embed_loss({0.3, -2.0}, {0.3, -2.0}).value, 0.0, 1e-15);
    EXPECT_NEAR(cos_embed_loss({1, 0}, {0, 3}).value, 1.0, 1e-15);
    EXPECT_NEAR(cos_embed_loss({1, 2}, {-2, -4}).value, 2.0, 1e-15);
    EXPECT_THROW(cos_embed_loss({0, 0}, {0, 1}), DegenerateInput);
    EXPECT_THROW(cos_embed_loss({1, 0}, {0, 0}), DegenerateInput);
    EXPECT_THROW(cos_embed_loss({1, 0}, {0, 1, 2}), ShapeError);
}

TEST(EmbedLosses, GradientsMatchFiniteDifferences) {
    for (const auto& r : {gradcheck::check_embedding_loss("mse", true, 100, 41),
                          gradcheck::check_embedding_loss("cos", false, 100, 42)}) {
        EXPECT_EQ(r.instances, 100);
        EXPECT_LE(r.max_rel_err, 1e-6) << r.name;
    }
}
