#pragma once

// Verification-style evaluation: same/different-class trials scored by
// cosine similarity, and the equal error rate of those scores.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "trkd/errors.hpp"

namespace trkd {

struct Trial {
    std::size_t a = 0;
    std::size_t b = 0;
    bool target = false;
    double score = 0.0;

    bool operator==(const Trial&) const = default;
};

struct TrialScoreSet {
    std::vector<double> target_scores;
    std::vector<double> nontarget_scores;
    std::vector<Trial> trials;
    /// Classes with fewer than two examples, which yield no target pairs.
    std::size_t skipped_classes = 0;
};

inline double cosine_similarity(const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
    const double nu = u.norm();
    const double nv = v.norm();
    if (nu == 0.0 || nv == 0.0) return 0.0;
    return std::clamp(u.dot(v) / (nu * nv), -1.0, 1.0);
}

/// Up to `pairs_per_class` same-class pairs per class, and as many
/// cross-class pairs anchored in that class. `embeddings` holds one column
/// per example.
inline TrialScoreSet build_trials(const Eigen::MatrixXd& embeddings,
                                  const std::vector<std::uint32_t>& labels,
                                  std::size_t pairs_per_class, std::uint64_t seed) {
    if (static_cast<std::size_t>(embeddings.cols()) != labels.size())
        throw ShapeError("build_trials: " + std::to_string(embeddings.cols()) + " embeddings but " +
                         std::to_string(labels.size()) + " labels");
    std::map<std::uint32_t, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

    std::mt19937_64 rng(seed);
    TrialScoreSet out;
    for (const auto& [label, members] : by_class) {
        if (members.size() < 2) {
            ++out.skipped_classes;
            continue;
        }
        std::vector<std::pair<std::size_t, std::size_t>> same;
        for (std::size_t i = 0; i < members.size(); ++i)
            for (std::size_t j = i + 1; j < members.size(); ++j) same.emplace_back(members[i], members[j]);
        std::shuffle(same.begin(), same.end(), rng);
        if (same.size() > pairs_per_class) same.resize(pairs_per_class);
        for (auto [a, b] : same) out.trials.push_back({a, b, true, 0.0});

        const std::size_t others = labels.size() - members.size();
        if (others == 0) continue;
        std::uniform_int_distribution<std::size_t> pick_in(0, members.size() - 1);
        std::uniform_int_distribution<std::size_t> pick_any(0, labels.size() - 1);
        std::set<std::pair<std::size_t, std::size_t>> seen;
        const std::size_t want = std::min(same.size(), members.size() * others);
        for (std::size_t tries = 0; seen.size() < want && tries < 50 * want; ++tries) {
            const std::size_t a = members[pick_in(rng)];
            const std::size_t b = pick_any(rng);
            if (labels[b] == label) continue;
            if (seen.insert({std::min(a, b), std::max(a, b)}).second) out.trials.push_back({a, b, false, 0.0});
        }
    }
    for (auto& t : out.trials) {
        t.score = cosine_similarity(embeddings.col(static_cast<Eigen::Index>(t.a)),
                                    embeddings.col(static_cast<Eigen::Index>(t.b)));
        (t.target ? out.target_scores : out.nontarget_scores).push_back(t.score);
    }
    return out;
}

/// EER as a fraction. FRR(t) counts targets below t, FAR(t) counts
/// non-targets at or above t; the crossing is linearly interpolated between
/// the two ROC points where FAR - FRR changes sign.
inline double compute_eer(std::vector<double> target_scores, std::vector<double> nontarget_scores) {
    if (target_scores.empty() || nontarget_scores.empty())
        throw InvalidParameter("compute_eer: both score lists must be non-empty");
    for (double s : target_scores)
        if (!std::isfinite(s)) throw InvalidParameter("compute_eer: non-finite target score");
    for (double s : nontarget_scores)
        if (!std::isfinite(s)) throw InvalidParameter("compute_eer: non-finite non-target score");
    std::sort(target_scores.begin(), target_scores.end());
    std::sort(nontarget_scores.begin(), nontarget_scores.end());

    std::vector<double> thresholds;
    thresholds.reserve(target_scores.size() + nontarget_scores.size() + 1);
    std::merge(target_scores.begin(), target_scores.end(), nontarget_scores.begin(),
               nontarget_scores.end(), std::back_inserter(thresholds));
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    thresholds.push_back(std::numeric_limits<double>::infinity());

    const double nt = static_cast<double>(target_scores.size());
    const double nn = static_cast<double>(nontarget_scores.size());
    std::size_t ti = 0;  // targets strictly below the current threshold
    std::size_t ni = 0;  // non-targets strictly below the current threshold
    double prev_frr = 0.0;
    double prev_far = 1.0;
    for (double t : thresholds) {
        while (ti < target_scores.size() && target_scores[ti] < t) ++ti;
        while (ni < nontarget_scores.size() && nontarget_scores[ni] < t) ++ni;
        const double frr = static_cast<double>(ti) / nt;
        const double far = static_cast<double>(nontarget_scores.size() - ni) / nn;
        const double diff = far - frr;
        if (diff == 0.0) return frr;
        if (diff < 0.0) {
            const double prev_diff = prev_far - prev_frr;
            const double w = prev_diff / (prev_diff - diff);
            return prev_frr + w * (frr - prev_frr);
        }
        prev_frr = frr;
        prev_far = far;
    }
    return prev_frr;  // unreachable: the +inf threshold always has FAR - FRR = -1
}

inline double compute_eer(const TrialScoreSet& scores) {
    return compute_eer(scores.target_scores, scores.nontarget_scores);
}

/// One "tgt <score>" or "non <score>" line per trial.
inline void write_score_file(const TrialScoreSet& scores, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.precision(17);
    for (const auto& t : scores.trials) out << (t.target ? "tgt " : "non ") << t.score << '\n';
    if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace trkd
