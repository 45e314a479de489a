#pragma once

// Probability primitives shared by every loss: temperature scaling,
// log-sum-exp based softmax, and forward KL with zero-mass conventions.
// Everything is natural-log, 64-bit.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "trkd/errors.hpp"

namespace trkd {

/// Raw scores over C >= 2 classes. All entries finite.
class LogitVector {
public:
    explicit LogitVector(std::vector<double> values) : values_(std::move(values)) {
        if (values_.size() < 2)
            throw InvalidParameter("LogitVector: need at least 2 classes, got " +
                                   std::to_string(values_.size()));
        for (double v : values_)
            if (!std::isfinite(v)) throw InvalidParameter("LogitVector: non-finite entry");
    }
    LogitVector(std::initializer_list<double> values) : LogitVector(std::vector<double>(values)) {}

    std::span<const double> values() const noexcept { return values_; }
    std::size_t size() const noexcept { return values_.size(); }
    double operator[](std::size_t i) const { return values_[i]; }

private:
    std::vector<double> values_;
};

/// A distribution together with its logs. When produced by softmax() the
/// logs come straight from log-space and stay finite for finite logits.
class ProbVector {
public:
    /// From explicit probabilities; logs are taken directly (log 0 = -inf).
    explicit ProbVector(std::vector<double> probs) : probs_(std::move(probs)) {
        if (probs_.empty()) throw InvalidParameter("ProbVector: empty");
        double sum = 0.0;
        for (double p : probs_) {
            if (!(p >= 0.0 && p <= 1.0)) throw InvalidParameter("ProbVector: entry outside [0,1]");
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-12)
            throw InvalidParameter("ProbVector: probabilities sum to " + std::to_string(sum));
        log_probs_.resize(probs_.size());
        std::transform(probs_.begin(), probs_.end(), log_probs_.begin(),
                       [](double p) { return std::log(p); });
    }
    ProbVector(std::initializer_list<double> probs) : ProbVector(std::vector<double>(probs)) {}

    static ProbVector from_log_probs(std::vector<double> log_probs) {
        ProbVector out;
        out.probs_.resize(log_probs.size());
        std::transform(log_probs.begin(), log_probs.end(), out.probs_.begin(),
                       [](double lp) { return std::exp(lp); });
        out.log_probs_ = std::move(log_probs);
        return out;
    }

    std::span<const double> probs() const noexcept { return probs_; }
    std::span<const double> log_probs() const noexcept { return log_probs_; }
    std::size_t size() const noexcept { return probs_.size(); }
    double operator[](std::size_t i) const { return probs_[i]; }

private:
    ProbVector() = default;

    std::vector<double> probs_;
    std::vector<double> log_probs_;
};

/// log(sum(exp(x))) with the max shift. Empty input gives -inf.
inline double logsumexp(std::span<const double> x) {
    if (x.empty()) return -std::numeric_limits<double>::infinity();
    const double m = *std::max_element(x.begin(), x.end());
    if (!std::isfinite(m)) return m;
    double acc = 0.0;
    for (double v : x) acc += std::exp(v - m);
    return m + std::log(acc);
}

/// logsumexp restricted to x[idx] for idx in `indices`, visited in the given order.
inline double logsumexp(std::span<const double> x, std::span<const std::size_t> indices) {
    if (indices.empty()) return -std::numeric_limits<double>::infinity();
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i : indices) m = std::max(m, x[i]);
    if (!std::isfinite(m)) return m;
    double acc = 0.0;
    for (std::size_t i : indices) acc += std::exp(x[i] - m);
    return m + std::log(acc);
}

inline void check_temperature(double T) {
    if (!(T > 0.0) || !std::isfinite(T))
        throw InvalidParameter("temperature must be positive and finite, got " + std::to_string(T));
}

inline LogitVector temperature_scale(const LogitVector& z, double T) {
    check_temperature(T);
    std::vector<double> out(z.values().begin(), z.values().end());
    for (double& v : out) v /= T;
    return LogitVector(std::move(out));
}

inline std::vector<double> log_softmax(std::span<const double> z) {
    const double lse = logsumexp(z);
    std::vector<double> out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] - lse;
    return out;
}

inline ProbVector softmax(const LogitVector& z) {
    return ProbVector::from_log_probs(log_softmax(z.values()));
}

/// KL(p || q) = sum p_i (log p_i - log q_i). Terms with p_i = 0 contribute 0;
/// p_i > 0 against q_i = 0 yields +infinity (see is_divergent), never NaN.
inline double kl_divergence(const ProbVector& p, const ProbVector& q) {
    if (p.size() != q.size())
        throw ShapeError("kl_divergence: length mismatch " + std::to_string(p.size()) + " vs " +
                         std::to_string(q.size()));
    const auto pp = p.probs();
    const auto lp = p.log_probs();
    const auto lq = q.log_probs();
    double acc = 0.0;
    for (std::size_t i = 0; i < pp.size(); ++i) {
        if (pp[i] == 0.0) continue;
        if (std::isinf(lq[i])) return std::numeric_limits<double>::infinity();
        acc += pp[i] * (lp[i] - lq[i]);
    }
    // Rounding can leave a tiny negative residue when p == q.
    return std::max(acc, 0.0);
}

inline bool is_divergent(double kl) noexcept { return std::isinf(kl) && kl > 0; }

}  // namespace trkd
