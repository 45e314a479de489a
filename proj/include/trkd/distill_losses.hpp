#pragma once

// Logit-level distillation objectives with analytic gradients w.r.t. the
// student logits: KD, the TCKD/NCKD pair behind DKD, and the TMKD/CFKD/BGKD
// triple behind TRKD.
//
// Conventions shared by every loss here:
//   * both logit vectors are divided by the temperature T before softmax;
//   * KL is forward, KL(teacher || student);
//   * with rescale_t2 the value is multiplied by T^2 and the gradient by T
//     (T^2 times the 1/T chain factor), otherwise the gradient carries 1/T.
//
// All set sums are evaluated in ascending class-index order, so a tau = 1
// partition reproduces the DKD terms bit for bit.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "trkd/errors.hpp"
#include "trkd/prob_core.hpp"
#include "trkd/triage_partition.hpp"

namespace trkd {

struct DistillWeights {
    double alpha = 1.0;     // TCKD
    double beta = 8.0;      // NCKD
    double lambda_m = 1.0;  // TMKD
    double lambda_f = 8.0;  // CFKD
    double temperature = 4.0;
    bool rescale_t2 = true;

    void validate() const {
        if (alpha < 0 || beta < 0 || lambda_m < 0 || lambda_f < 0)
            throw InvalidParameter("distill weights must be non-negative");
        check_temperature(temperature);
    }
};

struct LossValueGrad {
    double value = 0.0;
    std::vector<double> grad;  // w.r.t. student logits

    LossValueGrad& operator+=(const LossValueGrad& other) {
        value += other.value;
        if (grad.empty()) grad.assign(other.grad.size(), 0.0);
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += other.grad[i];
        return *this;
    }
};

inline LossValueGrad scaled(const LossValueGrad& l, double w) {
    LossValueGrad out{w * l.value, l.grad};
    for (double& g : out.grad) g *= w;
    return out;
}

/// w1*a + w2*b, evaluated elementwise in that order.
inline LossValueGrad combine(double w1, const LossValueGrad& a, double w2, const LossValueGrad& b) {
    LossValueGrad out{w1 * a.value + w2 * b.value, std::vector<double>(a.grad.size())};
    for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] = w1 * a.grad[i] + w2 * b.grad[i];
    return out;
}

namespace detail {

/// Temperature-scaled teacher and student log-posteriors.
struct ScaledPair {
    std::vector<double> teacher;  // log p^t
    std::vector<double> student;  // log p^s
    double T = 1.0;
    bool rescale = true;

    std::size_t size() const noexcept { return teacher.size(); }
};

inline ScaledPair make_pair(const LogitVector& teacher, const LogitVector& student, double T,
                            bool rescale) {
    check_temperature(T);
    if (teacher.size() != student.size())
        throw ShapeError("teacher has " + std::to_string(teacher.size()) +
                         " logits, student has " + std::to_string(student.size()));
    auto scale = [T](std::span<const double> z) {
        std::vector<double> u(z.begin(), z.end());
        for (double& v : u) v /= T;
        return log_softmax(u);
    };
    return {scale(teacher.values()), scale(student.values()), T, rescale};
}

/// Applies the temperature convention to a loss computed on scaled logits.
inline LossValueGrad finish(LossValueGrad l, const ScaledPair& sp) {
    const double vs = sp.rescale ? sp.T * sp.T : 1.0;
    const double gs = sp.rescale ? sp.T : 1.0 / sp.T;
    l.value *= vs;
    for (double& g : l.grad) g *= gs;
    return l;
}

inline std::vector<std::size_t> ascending(std::span<const std::size_t> s) {
    std::vector<std::size_t> out(s.begin(), s.end());
    std::sort(out.begin(), out.end());
    return out;
}

inline std::vector<std::size_t> non_targets(std::size_t C, std::size_t y) {
    std::vector<std::size_t> out;
    out.reserve(C - 1);
    for (std::size_t i = 0; i < C; ++i)
        if (i != y) out.push_back(i);
    return out;
}

/// KL between aggregated masses over disjoint groups that cover every class.
/// Empty groups are skipped. Gradient w.r.t. scaled student logits:
///   d/du_k = q_k (1 - P_g(k) / Q_g(k)).
inline LossValueGrad group_mass_kl(const ScaledPair& sp,
                                   std::initializer_list<std::span<const std::size_t>> groups) {
    LossValueGrad out{0.0, std::vector<double>(sp.size(), 0.0)};
    for (auto g : groups) {
        if (g.empty()) continue;
        const double log_pt = logsumexp(sp.teacher, g);
        const double log_ps = logsumexp(sp.student, g);
        double ratio = 0.0;
        if (std::isfinite(log_pt)) {
            out.value += std::exp(log_pt) * (log_pt - log_ps);
            ratio = std::exp(log_pt - log_ps);
        }
        for (std::size_t k : g) out.grad[k] = std::exp(sp.student[k]) * (1.0 - ratio);
    }
    return out;
}

/// KL between the within-set conditionals of teacher and student.
/// Gradient is b_k - a_k on set members and 0 elsewhere.
inline LossValueGrad conditional_kl(const ScaledPair& sp, std::span<const std::size_t> set) {
    LossValueGrad out{0.0, std::vector<double>(sp.size(), 0.0)};
    if (set.empty()) return out;
    const double lse_t = logsumexp(sp.teacher, set);
    const double lse_s = logsumexp(sp.student, set);
    for (std::size_t i : set) {
        const double la = sp.teacher[i] - lse_t;
        const double lb = sp.student[i] - lse_s;
        const double a = std::exp(la);
        if (a > 0.0) out.value += a * (la - lb);
        out.grad[i] = std::exp(lb) - a;
    }
    return out;
}

inline void require_mass(const ScaledPair& sp, std::span<const std::size_t> set, const char* what) {
    if (logsumexp(sp.teacher, set) < std::log(1e-300))
        throw DegenerateMass(std::string(what) + ": teacher mass below 1e-300");
}

inline void check_target(std::size_t y, std::size_t C) {
    if (y >= C)
        throw IndexError("target index " + std::to_string(y) + " out of range for " +
                         std::to_string(C) + " classes");
}

inline void check_partition(const TriagePartition& part, std::size_t C) {
    if (part.num_classes != C)
        throw ShapeError("partition built for " + std::to_string(part.num_classes) +
                         " classes, logits have " + std::to_string(C));
}

inline LossValueGrad tckd(const ScaledPair& sp, std::size_t y) {
    const std::size_t target[] = {y};
    const auto rest = non_targets(sp.size(), y);
    return group_mass_kl(sp, {target, rest});
}

inline LossValueGrad nckd(const ScaledPair& sp, std::size_t y) {
    const auto rest = non_targets(sp.size(), y);
    require_mass(sp, rest, "nckd");
    return conditional_kl(sp, rest);
}

inline LossValueGrad tmkd(const ScaledPair& sp, const TriagePartition& part) {
    const std::size_t target[] = {part.target};
    const auto f = ascending(part.confusion_set);
    const auto b = ascending(part.background_set);
    return group_mass_kl(sp, {target, f, b});
}

inline LossValueGrad cfkd(const ScaledPair& sp, const TriagePartition& part) {
    if (part.confusion_set.empty()) throw EmptySetError("cfkd: confusion set is empty");
    const auto f = ascending(part.confusion_set);
    require_mass(sp, f, "cfkd");
    return conditional_kl(sp, f);
}

inline LossValueGrad bgkd(const ScaledPair& sp, const TriagePartition& part) {
    return conditional_kl(sp, ascending(part.background_set));
}

inline TriagePartition partition_from_scaled(const ScaledPair& sp, std::size_t y, double tau) {
    return build_partition(ProbVector::from_log_probs(sp.teacher), y, tau);
}

}  // namespace detail

inline LossValueGrad kd_loss(const LogitVector& teacher_logits, const LogitVector& student_logits,
                             const DistillWeights& w) {
    const auto sp = detail::make_pair(teacher_logits, student_logits, w.temperature, w.rescale_t2);
    LossValueGrad out{0.0, std::vector<double>(sp.size())};
    for (std::size_t i = 0; i < sp.size(); ++i) {
        const double p = std::exp(sp.teacher[i]);
        if (p > 0.0) out.value += p * (sp.teacher[i] - sp.student[i]);
        out.grad[i] = std::exp(sp.student[i]) - p;
    }
    out.value = std::max(out.value, 0.0);
    return detail::finish(std::move(out), sp);
}

inline LossValueGrad tckd_loss(const LogitVector& teacher_logits, const LogitVector& student_logits,
                               std::size_t y, const DistillWeights& w) {
    const auto sp = detail::make_pair(teacher_logits, student_logits, w.temperature, w.rescale_t2);
    detail::check_target(y, sp.size());
    return detail::finish(detail::tckd(sp, y), sp);
}

inline LossValueGrad nckd_loss(const LogitVector& teacher_logits, const LogitVector& student_logits,
                               std::size_t y, const DistillWeights& w) {
    const auto sp = detail::make_pair(teacher_logits, student_logits, w.temperature, w.rescale_t2);
    detail::check_target(y, sp.size());
    return detail::finish(detail::nckd(sp, y), sp);
}

/// Both DKD terms, already temperature-rescaled but not yet weighted.
struct DkdTerms {
    LossValueGrad tckd;
    LossValueGrad nckd;
};

inline DkdTerms dkd_terms(const LogitVector& teacher_logits, const LogitVector& student_logits,
                          std::size_t y, const DistillWeights& w) {
    const auto sp = detail::make_pair(teacher_logits, student_logits, w.temperature, w.rescale_t2);
    detail::check_target(y, sp.size());
    return {detail::finish(detail::tckd(sp, y), sp), detail::finish(detail::nckd(sp, y), sp)};
}

inline LossValueGrad dkd_loss(const LogitVector& teacher_logits, const LogitVector& student_logits,
                              std::size_t y, const DistillWeights& w) {
    w.validate();
    const auto t = dkd_terms(teacher_logits, student_logits, y, w);
    return combine(w.alpha, t.tckd, w.beta, t.nckd);
}

inline LossValueGrad tmkd_loss(const LogitVector& teacher_logits, const LogitVector& student_logits,
                               const TriagePartition& part, const DistillWeights& w) {
    const auto sp = detail::make_pair(teacher_logits, student_logits, w.temperature, w.rescale_t2);
    detail::check_partition(part, sp.size());
    return detail::finish(detail::tmkd(sp, part), sp);
}

inline LossValueGrad cfkd_loss(const LogitVector& teacher_logits, const LogitVector& student_logits,
                               const TriagePartition& part, const DistillWeights& w) {
    const auto sp = detail::make_pair(teacher_logits, student_logits, w.temperature, w.rescale_t2);
    detail::check_partition(part, sp.size());
    return detail::finish(detail::cfkd(sp, part), sp);
}

inline LossValueGrad bgkd_loss(const LogitVector& teacher_logits, const LogitVector& student_logits,
                               const TriagePartition& part, const DistillWeights& w) {
    const auto sp = detail::make_pair(teacher_logits, student_logits, w.temperature, w.rescale_t2);
    detail::check_partition(part, sp.size());
    return detail::finish(detail::bgkd(sp, part), sp);
}

/// TMKD and CFKD for one example plus the partition they were built on.
struct TrkdTerms {
    TriagePartition partition;
    LossValueGrad tmkd;
    LossValueGrad cfkd;
};

/// The partition comes from the temperature-scaled teacher posterior.
inline TrkdTerms trkd_terms(const LogitVector& teacher_logits, const LogitVector& student_logits,
                            std::size_t y, double tau, const DistillWeights& w) {
    const auto sp = detail::make_pair(teacher_logits, student_logits, w.temperature, w.rescale_t2);
    detail::check_target(y, sp.size());
    auto part = detail::partition_from_scaled(sp, y, tau);
    auto tm = detail::finish(detail::tmkd(sp, part), sp);
    auto cf = detail::finish(detail::cfkd(sp, part), sp);
    return {std::move(part), std::move(tm), std::move(cf)};
}

/// lambda_m * TMKD + lambda_f * CFKD. The background term is left out.
inline LossValueGrad trkd_loss(const LogitVector& teacher_logits, const LogitVector& student_logits,
                               std::size_t y, double tau, const DistillWeights& w) {
    w.validate();
    const auto t = trkd_terms(teacher_logits, student_logits, y, tau, w);
    return combine(w.lambda_m, t.tmkd, w.lambda_f, t.cfkd);
}

/// |KL - (TCKD + p^t_{\y} NCKD)| with T = 1 and no weights.
inline double dkd_decomposition_check(const LogitVector& teacher_logits,
                                      const LogitVector& student_logits, std::size_t y) {
    const auto sp = detail::make_pair(teacher_logits, student_logits, 1.0, false);
    detail::check_target(y, sp.size());
    const double kl = kl_divergence(ProbVector::from_log_probs(sp.teacher),
                                    ProbVector::from_log_probs(sp.student));
    const auto rest = detail::non_targets(sp.size(), y);
    const double mass_rest = std::exp(logsumexp(sp.teacher, rest));
    const double tc = detail::tckd(sp, y).value;
    const double nc = detail::conditional_kl(sp, rest).value;
    return std::abs(kl - (tc + mass_rest * nc));
}

/// |KL - (TMKD + p^t_F CFKD + p^t_B BGKD)| with T = 1, the sample-dependent
/// prefactors kept and no weights. tau = 1 checks the two-term DKD form.
inline double kd_decomposition_check(const LogitVector& teacher_logits,
                                     const LogitVector& student_logits, std::size_t y, double tau) {
    check_tau(tau);
    if (tau == 1.0) return dkd_decomposition_check(teacher_logits, student_logits, y);
    const auto sp = detail::make_pair(teacher_logits, student_logits, 1.0, false);
    detail::check_target(y, sp.size());
    const auto part = detail::partition_from_scaled(sp, y, tau);
    const double kl = kl_divergence(ProbVector::from_log_probs(sp.teacher),
                                    ProbVector::from_log_probs(sp.student));
    const double tm = detail::tmkd(sp, part).value;
    const double cf = detail::conditional_kl(sp, detail::ascending(part.confusion_set)).value;
    const double bg = detail::bgkd(sp, part).value;
    return std::abs(kl - (tm + part.teacher_mass_confusion * cf +
                          part.teacher_mass_background * bg));
}

}  // namespace trkd
