#pragma once

// Splits a teacher posterior into the target class, a confusion set (the
// fewest non-targets whose cumulative probability reaches tau) and the
// background set (everything else).

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "trkd/errors.hpp"
#include "trkd/prob_core.hpp"

namespace trkd {

struct TriagePartition {
    std::size_t num_classes = 0;
    std::size_t target = 0;
    /// Descending teacher probability, ties by ascending index.
    std::vector<std::size_t> confusion_set;
    /// Continues the same order as confusion_set.
    std::vector<std::size_t> background_set;
    double teacher_mass_target = 0.0;
    double teacher_mass_confusion = 0.0;
    double teacher_mass_background = 0.0;

    bool background_empty() const noexcept { return background_set.empty(); }
};

inline void check_tau(double tau) {
    if (!(tau > 0.0 && tau <= 1.0))
        throw InvalidParameter("tau must lie in (0, 1], got " + std::to_string(tau));
}

inline TriagePartition build_partition(const ProbVector& teacher, std::size_t y, double tau) {
    check_tau(tau);
    const std::size_t C = teacher.size();
    if (y >= C)
        throw IndexError("target index " + std::to_string(y) + " out of range for " +
                         std::to_string(C) + " classes");
    const auto p = teacher.probs();

    std::vector<std::size_t> order;
    order.reserve(C - 1);
    for (std::size_t i = 0; i < C; ++i)
        if (i != y) order.push_back(i);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });

    // tau = 1 always absorbs every non-target, even if rounding makes a
    // shorter prefix appear to reach 1.
    std::size_t cut = order.size();
    if (tau < 1.0) {
        double cum = 0.0;
        for (std::size_t k = 0; k < order.size(); ++k) {
            cum += p[order[k]];
            if (cum >= tau) {
                cut = k + 1;
                break;
            }
        }
    }

    TriagePartition part;
    part.num_classes = C;
    part.target = y;
    part.confusion_set.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cut));
    part.background_set.assign(order.begin() + static_cast<std::ptrdiff_t>(cut), order.end());
    part.teacher_mass_target = p[y];
    for (std::size_t i : part.confusion_set) part.teacher_mass_confusion += p[i];
    for (std::size_t j : part.background_set) part.teacher_mass_background += p[j];
    return part;
}

/// p restricted to `set` and renormalized; entries follow the order of `set`.
inline ProbVector conditional_over_set(const ProbVector& p, std::span<const std::size_t> set) {
    if (set.empty()) throw EmptySetError("conditional_over_set: empty index set");
    const auto pr = p.probs();
    const auto lp = p.log_probs();
    double mass = 0.0;
    for (std::size_t i : set) {
        if (i >= p.size()) throw IndexError("conditional_over_set: index out of range");
        mass += pr[i];
    }
    if (!(mass > 0.0)) throw DegenerateMass("conditional_over_set: set carries zero mass");
    std::vector<double> logs;
    logs.reserve(set.size());
    for (std::size_t i : set) logs.push_back(lp[i]);
    const double lse = logsumexp(logs);
    for (double& v : logs) v -= lse;
    return ProbVector::from_log_probs(std::move(logs));
}

/// [p_y, p_F, p_B], or [p_y, p_F] when the background set is empty.
inline ProbVector three_mass_vector(const ProbVector& p, const TriagePartition& part) {
    if (p.size() != part.num_classes)
        throw ShapeError("three_mass_vector: partition built for " +
                         std::to_string(part.num_classes) + " classes, got " +
                         std::to_string(p.size()));
    const auto lp = p.log_probs();
    std::vector<double> logs{lp[part.target], logsumexp(lp, part.confusion_set)};
    if (!part.background_empty()) logs.push_back(logsumexp(lp, part.background_set));
    return ProbVector::from_log_probs(std::move(logs));
}

}  // namespace trkd
