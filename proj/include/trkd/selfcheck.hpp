#pragma once

// Randomized self-checks of the loss identities and gradients, runnable
// from the command line on any build.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "trkd/aux_losses.hpp"
#include "trkd/distill_losses.hpp"
#include "trkd/prob_core.hpp"
#include "trkd/triage_partition.hpp"

namespace trkd {

struct SelfcheckOptions {
    long trials = 1000;
    std::uint64_t seed = 1;
    /// Negative control: scales NCKD and CFKD by 1 + 1e-6 in the identity
    /// suites, which must then fail.
    bool tamper = false;
};

struct SuiteResult {
    std::string name;
    long trials = 0;
    double max_residual = 0.0;
    double tolerance = 0.0;

    bool passed() const { return std::isfinite(max_residual) && max_residual <= tolerance; }
};

namespace selfcheck_detail {

inline constexpr double kIdentityTol = 1e-10;
inline constexpr double kGradTol = 1e-6;
inline constexpr double kFdStep = 1e-5;

struct Draw {
    LogitVector teacher;
    LogitVector student;
    std::size_t y = 0;
};

inline Draw draw(std::mt19937_64& rng, std::size_t c_min, std::size_t c_max) {
    std::uniform_int_distribution<std::size_t> pick_c(c_min, c_max);
    const std::size_t C = pick_c(rng);
    std::uniform_real_distribution<double> scale_dist(0.5, 6.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double st = scale_dist(rng);
    const double ss = scale_dist(rng);
    std::vector<double> t(C), s(C);
    for (std::size_t i = 0; i < C; ++i) {
        t[i] = st * normal(rng);
        s[i] = ss * normal(rng);
    }
    std::uniform_int_distribution<std::size_t> pick_y(0, C - 1);
    return {LogitVector(std::move(t)), LogitVector(std::move(s)), pick_y(rng)};
}

inline double random_tau(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double tau = 1.0 - u(rng);  // (0, 1]
    return tau;
}

inline LossValueGrad maybe_tamper(LossValueGrad l, bool tamper) {
    if (tamper) l.value *= 1.0 + 1e-6;
    return l;
}

/// max_i |a_i - n_i| / max(max|a|, max|n|, floor). Normwise, because a
/// 64-bit difference quotient carries an absolute error of about
/// eps * |f| / h that swamps near-zero entries.
inline double rel_err(const std::vector<double>& analytic, const std::vector<double>& numeric,
                      double floor) {
    double diff = 0.0;
    double scale = floor;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double e = std::abs(analytic[i] - numeric[i]);
        if (!(e <= diff)) diff = e;  // NaN propagates as a failure
        scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
    }
    return diff / scale;
}

inline std::vector<double> central_diff(const std::function<double(const std::vector<double>&)>& f,
                                        std::vector<double> x) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double x0 = x[i];
        x[i] = x0 + kFdStep;
        const double fp = f(x);
        x[i] = x0 - kFdStep;
        const double fm = f(x);
        x[i] = x0;
        g[i] = (fp - fm) / (2.0 * kFdStep);
    }
    return g;
}

inline DistillWeights random_weights(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.1, 8.0);
    std::uniform_int_distribution<int> t_pick(0, 2);
    DistillWeights w;
    w.alpha = u(rng);
    w.beta = u(rng);
    w.lambda_m = w.alpha;
    w.lambda_f = w.beta;
    w.temperature = std::array{1.0, 2.0, 4.0}[static_cast<std::size_t>(t_pick(rng))];
    w.rescale_t2 = (rng() & 1U) != 0;
    return w;
}

}  // namespace selfcheck_detail

/// |KL - (TCKD + p^t_{\y} NCKD)| at T = 1.
inline SuiteResult check_dkd_identity(long trials, std::uint64_t seed, bool tamper = false) {
    using namespace selfcheck_detail;
    std::mt19937_64 rng(seed);
    DistillWeights unit;
    unit.temperature = 1.0;
    unit.rescale_t2 = false;
    SuiteResult r{"kl = tckd + p_rest * nckd", trials, 0.0, kIdentityTol};
    for (long i = 0; i < trials; ++i) {
        const auto d = draw(rng, 3, 200);
        const auto pt = softmax(d.teacher);
        const double kl = kl_divergence(pt, softmax(d.student));
        const double tc = tckd_loss(d.teacher, d.student, d.y, unit).value;
        const double nc = maybe_tamper(nckd_loss(d.teacher, d.student, d.y, unit), tamper).value;
        const double rest = 1.0 - pt[d.y];
        r.max_residual = std::max(r.max_residual, std::abs(kl - (tc + rest * nc)));
    }
    return r;
}

/// |KL - (TMKD + p^t_F CFKD + p^t_B BGKD)| at T = 1 for random tau.
inline SuiteResult check_trkd_identity(long trials, std::uint64_t seed, bool tamper = false) {
    using namespace selfcheck_detail;
    std::mt19937_64 rng(seed);
    DistillWeights unit;
    unit.temperature = 1.0;
    unit.rescale_t2 = false;
    SuiteResult r{"kl = tmkd + p_F * cfkd + p_B * bgkd", trials, 0.0, kIdentityTol};
    for (long i = 0; i < trials; ++i) {
        const auto d = draw(rng, 3, 200);
        const double tau = random_tau(rng);
        const auto pt = softmax(d.teacher);
        const double kl = kl_divergence(pt, softmax(d.student));
        const auto part = build_partition(pt, d.y, tau);
        const double tm = tmkd_loss(d.teacher, d.student, part, unit).value;
        const double cf = maybe_tamper(cfkd_loss(d.teacher, d.student, part, unit), tamper).value;
        const double bg = part.background_empty() ? 0.0 : bgkd_loss(d.teacher, d.student, part, unit).value;
        const double rhs = tm + part.teacher_mass_confusion * cf + part.teacher_mass_background * bg;
        r.max_residual = std::max(r.max_residual, std::abs(kl - rhs));
    }
    return r;
}

/// DKD and TRKD at tau = 1 with matching weights: values and gradients.
inline SuiteResult check_dkd_equals_trkd(long trials, std::uint64_t seed, bool tamper = false) {
    using namespace selfcheck_detail;
    std::mt19937_64 rng(seed);
    SuiteResult r{"dkd = trkd(tau=1)", trials, 0.0, kIdentityTol};
    for (long i = 0; i < trials; ++i) {
        const auto d = draw(rng, 3, 200);
        const auto w = random_weights(rng);
        const auto a = dkd_loss(d.teacher, d.student, d.y, w);
        auto terms = trkd_terms(d.teacher, d.student, d.y, 1.0, w);
        const auto b = combine(w.lambda_m, terms.tmkd, w.lambda_f, maybe_tamper(terms.cfkd, tamper));
        double res = std::abs(a.value - b.value);
        for (std::size_t k = 0; k < a.grad.size(); ++k) res = std::max(res, std::abs(a.grad[k] - b.grad[k]));
        r.max_residual = std::max(r.max_residual, res);
    }
    return r;
}

/// Central differences of every logit loss w.r.t. the student logits.
inline std::vector<SuiteResult> check_logit_gradients(long trials, std::uint64_t seed) {
    using namespace selfcheck_detail;
    using Loss = std::function<LossValueGrad(const LogitVector&, const LogitVector&, std::size_t, double,
                                             const DistillWeights&)>;
    auto with_part = [](auto fn) {
        return [fn](const LogitVector& t, const LogitVector& s, std::size_t y, double tau, const DistillWeights& w) {
            const auto part = build_partition(softmax(temperature_scale(t, w.temperature)), y, tau);
            return fn(t, s, part, w);
        };
    };
    const std::vector<std::pair<std::string, Loss>> losses = {
        {"kd", [](const LogitVector& t, const LogitVector& s, std::size_t, double, const DistillWeights& w) { return kd_loss(t, s, w); }},
        {"tckd", [](const LogitVector& t, const LogitVector& s, std::size_t y, double, const DistillWeights& w) { return tckd_loss(t, s, y, w); }},
        {"nckd", [](const LogitVector& t, const LogitVector& s, std::size_t y, double, const DistillWeights& w) { return nckd_loss(t, s, y, w); }},
        {"dkd", [](const LogitVector& t, const LogitVector& s, std::size_t y, double, const DistillWeights& w) { return dkd_loss(t, s, y, w); }},
        {"tmkd", with_part([](const LogitVector& t, const LogitVector& s, const TriagePartition& p, const DistillWeights& w) { return tmkd_loss(t, s, p, w); })},
        {"cfkd", with_part([](const LogitVector& t, const LogitVector& s, const TriagePartition& p, const DistillWeights& w) { return cfkd_loss(t, s, p, w); })},
        {"bgkd", with_part([](const LogitVector& t, const LogitVector& s, const TriagePartition& p, const DistillWeights& w) {
             if (p.background_empty()) return LossValueGrad{0.0, std::vector<double>(s.size(), 0.0)};
             return bgkd_loss(t, s, p, w);
         })},
        {"trkd", [](const LogitVector& t, const LogitVector& s, std::size_t y, double tau, const DistillWeights& w) { return trkd_loss(t, s, y, tau, w); }},
    };
    std::vector<SuiteResult> out;
    for (std::size_t li = 0; li < losses.size(); ++li) {
        const auto& [name, loss] = losses[li];
        std::mt19937_64 rng(seed + li);
        SuiteResult r{"grad " + name, trials, 0.0, kGradTol};
        for (long i = 0; i < trials; ++i) {
            const auto d = draw(rng, 3, 20);
            const auto w = random_weights(rng);
            const double tau = random_tau(rng);
            auto eval = [&](const std::vector<double>& s) {
                return loss(d.teacher, LogitVector(std::vector<double>(s)), d.y, tau, w);
            };
            const std::vector<double> s0(d.student.values().begin(), d.student.values().end());
            const auto analytic = eval(s0).grad;
            const auto numeric = central_diff([&](const std::vector<double>& s) { return eval(s).value; }, s0);
            // The quotient's rounding noise scales with the T^2 factor on the value.
            const double floor = 1e-3 * (w.rescale_t2 ? w.temperature * w.temperature : 1.0);
            r.max_residual = std::max(r.max_residual, rel_err(analytic, numeric, floor));
        }
        out.push_back(r);
    }
    return out;
}

/// AAM (embedding and class weights), MSE and COS.
inline std::vector<SuiteResult> check_embedding_gradients(long trials, std::uint64_t seed) {
    using namespace selfcheck_detail;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> pick_d(2, 12);
    std::uniform_int_distribution<std::size_t> pick_c(2, 10);
    std::uniform_real_distribution<double> pick_m(0.0, 0.5);
    std::uniform_int_distribution<int> pick_s(0, 2);
    std::uniform_real_distribution<double> pick_norm(1.0, 4.0);
    SuiteResult aam{"grad aam", trials, 0.0, kGradTol};
    SuiteResult mse{"grad mse", trials, 0.0, kGradTol};
    SuiteResult cos{"grad cos", trials, 0.0, kGradTol};
    auto randvec = [&](std::size_t n) {
        std::vector<double> v(n);
        for (double& x : v) x = normal(rng);
        return v;
    };
    for (long i = 0; i < trials; ++i) {
        const std::size_t d = pick_d(rng);
        const std::size_t C = pick_c(rng);
        const double s = std::array{1.0, 8.0, 32.0}[static_cast<std::size_t>(pick_s(rng))];
        const double m = pick_m(rng);
        std::uniform_int_distribution<std::size_t> pick_y(0, C - 1);
        const std::size_t y = pick_y(rng);
        // Unit class rows as in training, and an embedding norm in [1, 4]:
        // the difference quotient's truncation error grows like s^3 / |e|^3.
        auto e = randvec(d);
        {
            Eigen::Map<Eigen::VectorXd> ev(e.data(), static_cast<Eigen::Index>(d));
            ev *= pick_norm(rng) / ev.norm();
        }
        RowMatrix W(static_cast<Eigen::Index>(C), static_cast<Eigen::Index>(d));
        for (Eigen::Index r = 0; r < W.rows(); ++r)
            for (Eigen::Index c = 0; c < W.cols(); ++c) W(r, c) = normal(rng);
        normalize_rows(W);
        // The margin's derivative jumps where theta + m reaches pi; redraw
        // instances close to it.
        if (std::abs(cosine_scores(e, W).cos[y] - std::cos(std::numbers::pi - m)) < 1e-2) {
            --i;
            continue;
        }

        const auto g = aam_softmax_loss_raw(e, y, W, s, m);
        const double floor = 1e-4 * std::max(1.0, s);
        const auto ne = central_diff([&](const std::vector<double>& x) { return aam_softmax_loss_raw(x, y, W, s, m).value; }, e);
        aam.max_residual = std::max(aam.max_residual, rel_err(g.grad_embedding, ne, floor));
        std::vector<double> wflat(W.data(), W.data() + W.size());
        const auto nw = central_diff(
            [&](const std::vector<double>& x) {
                const RowMatrix Wx = Eigen::Map<const RowMatrix>(x.data(), W.rows(), W.cols());
                return aam_softmax_loss_raw(e, y, Wx, s, m).value;
            },
            wflat);
        const std::vector<double> gw(g.grad_class_weights.data(), g.grad_class_weights.data() + g.grad_class_weights.size());
        aam.max_residual = std::max(aam.max_residual, rel_err(gw, nw, floor));

        const auto t = randvec(d);
        const auto gm = mse_embed_loss(e, t);
        mse.max_residual = std::max(
            mse.max_residual, rel_err(gm.grad, central_diff([&](const std::vector<double>& x) { return mse_embed_loss(x, t).value; }, e), 1e-4));
        const auto gc = cos_embed_loss(e, t);
        cos.max_residual = std::max(
            cos.max_residual, rel_err(gc.grad, central_diff([&](const std::vector<double>& x) { return cos_embed_loss(x, t).value; }, e), 1e-4));
    }
    return {aam, mse, cos};
}

/// Every suite, `trials` instances each.
inline std::vector<SuiteResult> run_selfcheck(const SelfcheckOptions& opts) {
    if (opts.trials < 1) throw InvalidParameter("selfcheck: trials must be >= 1");
    std::vector<SuiteResult> out;
    out.push_back(check_dkd_identity(opts.trials, opts.seed, opts.tamper));
    out.push_back(check_trkd_identity(opts.trials, opts.seed + 1, opts.tamper));
    out.push_back(check_dkd_equals_trkd(opts.trials, opts.seed + 2, opts.tamper));
    for (auto& r : check_logit_gradients(opts.trials, opts.seed + 3)) out.push_back(r);
    for (auto& r : check_embedding_gradients(opts.trials, opts.seed + 20)) out.push_back(r);
    return out;
}

}  // namespace trkd
