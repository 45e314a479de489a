#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "trkd/tau_schedule.hpp"

using namespace trkd;

namespace {

TauScheduleConfig default_schedule(long k_start = 100, long k_stop = 200) {
    TauScheduleConfig c;
    c.tau_init = 1.0;
    c.tau_final = 0.05;
    c.gamma = 0.001;
    c.k_start = k_start;
    c.k_stop = k_stop;
    return c;
}

}  // namespace

TEST(Progress, Clipping) {
    const auto c = default_schedule();
    EXPECT_EQ(progress(c, 50), 0.0);
    EXPECT_EQ(progress(c, 150), 0.5);
    EXPECT_EQ(progress(c, 250), 1.0);
    EXPECT_EQ(progress(c, 100), 0.0);
    EXPECT_EQ(progress(c, 200), 1.0);
}

TEST(TauAt, Examples) {
    const auto c = default_schedule();
    EXPECT_EQ(tau_at(c, 0), 1.0);
    EXPECT_EQ(tau_at(c, 99), 1.0);
    EXPECT_EQ(tau_at(c, 100), 1.0);
    EXPECT_NEAR(tau_at(c, 150), 0.0800416377715996, 1e-12);
    EXPECT_EQ(tau_at(c, 200), 0.05);
    EXPECT_EQ(tau_at(c, 1'000'000), 0.05);
}

TEST(TauAt, JumpAtStop) {
    const auto c = default_schedule();
    EXPECT_NEAR(jump_at_stop(c), -9.5e-4, 1e-12);
    // The scheduled branch just before k_stop approaches tau_init + (tau_final - tau_init)(1 - gamma).
    auto fine = default_schedule(0, 1'000'000);
    const double before = tau_at(fine, fine.k_stop - 1);
    const double limit = fine.tau_init + (fine.tau_final - fine.tau_init) * (1.0 - fine.gamma);
    EXPECT_NEAR(before, limit, 1e-6);
    EXPECT_NEAR(tau_at(fine, fine.k_stop) - limit, jump_at_stop(fine), 1e-12);
}

TEST(TauAt, GammaEdgeCases) {
    auto c = default_schedule();
    c.gamma = 0.0;
    EXPECT_EQ(tau_at(c, 100), 1.0);
    EXPECT_NEAR(tau_at(c, 101), 0.05, 1e-15);
    c.gamma = 1.0;
    EXPECT_EQ(tau_at(c, 100), 1.0);
    EXPECT_EQ(tau_at(c, 199), 1.0);
    EXPECT_EQ(tau_at(c, 200), 0.05);
}

TEST(TauScheduleConfig, Validation) {
    auto c = default_schedule();
    EXPECT_NO_THROW(c.validate());
    c.k_stop = c.k_start;
    EXPECT_THROW(c.validate(), InvalidParameter);
    c = default_schedule();
    c.tau_final = 0.0;
    EXPECT_THROW(c.validate(), InvalidParameter);
    c = default_schedule();
    c.tau_final = 1.0;
    c.tau_init = 0.5;
    EXPECT_THROW(c.validate(), InvalidParameter);
    c = default_schedule();
    c.gamma = 1.5;
    EXPECT_THROW(c.validate(), InvalidParameter);
}

TEST(TauSchedule, NonIncreasingForRandomConfigs) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int it = 0; it < 200; ++it) {
        TauScheduleConfig c;
        c.tau_init = std::max(1e-3, u(rng));
        c.tau_final = std::max(1e-4, u(rng) * c.tau_init);
        c.gamma = u(rng);
        c.k_start = static_cast<long>(rng() % 50);
        c.k_stop = c.k_start + 1 + static_cast<long>(rng() % 200);
        c.validate();
        double prev = tau_at(c, 0);
        EXPECT_EQ(prev, c.tau_init);
        for (long k = 1; k <= c.k_stop + 5; ++k) {
            const double t = tau_at(c, k);
            EXPECT_LE(t, prev);
            prev = t;
        }
        EXPECT_EQ(prev, c.tau_final);
    }
}

TEST(ScaledSchedule, KeepsEpochFractions) {
    const auto c = scaled_schedule(1.0, 0.05, 0.001, 10.0 / 150.0, 60.0 / 150.0, 1500);
    EXPECT_EQ(c.k_start, 100);
    EXPECT_EQ(c.k_stop, 600);
    const auto tiny = scaled_schedule(1.0, 0.05, 0.001, 0.0, 0.0, 10);
    EXPECT_LT(tiny.k_start, tiny.k_stop);
}
