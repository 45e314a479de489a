#pragma once

// Synthetic class-clustered data: Gaussian class means, isotropic noise.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "trkd/errors.hpp"

namespace trkd {

struct SyntheticDatasetConfig {
    std::size_t num_classes = 64;
    std::size_t input_dim = 32;
    std::size_t samples_per_class = 200;
    double class_separation = 1.0;
    double noise_sigma = 1.0;
    std::uint64_t seed = 1;
    /// Share of each class held out for evaluation (at least one sample).
    double heldout_fraction = 0.25;
    /// When > 0, classes are split round-robin into this many groups and each
    /// class mean is group_center + group_spread * own_offset (both standard
    /// normal, then scaled by class_separation). Siblings become each other's
    /// natural impostors. 0 draws every mean independently.
    std::size_t num_groups = 0;
    double group_spread = 0.5;

    void validate() const {
        if (num_classes < 2) throw InvalidParameter("dataset: num_classes must be >= 2");
        if (input_dim < 1) throw InvalidParameter("dataset: input_dim must be >= 1");
        if (samples_per_class < 2)
            throw InvalidParameter("dataset: samples_per_class must be >= 2 for a held-out split");
        if (!(class_separation > 0.0)) throw InvalidParameter("dataset: class_separation must be > 0");
        if (!(noise_sigma > 0.0)) throw InvalidParameter("dataset: noise_sigma must be > 0");
        if (!(heldout_fraction > 0.0 && heldout_fraction < 1.0))
            throw InvalidParameter("dataset: heldout_fraction must lie in (0, 1)");
        if (num_groups > num_classes) throw InvalidParameter("dataset: num_groups must be <= num_classes");
        if (num_groups > 0 && !(group_spread > 0.0))
            throw InvalidParameter("dataset: group_spread must be > 0");
    }

    std::size_t heldout_per_class() const {
        const auto h = static_cast<std::size_t>(
            std::lround(heldout_fraction * static_cast<double>(samples_per_class)));
        return std::clamp<std::size_t>(h, 1, samples_per_class - 1);
    }
};

/// Samples are columns of `x`.
struct LabeledSet {
    Eigen::MatrixXd x;
    std::vector<std::uint32_t> labels;

    std::size_t size() const noexcept { return labels.size(); }
};

struct Dataset {
    std::size_t num_classes = 0;
    Eigen::MatrixXd class_means;  // input_dim x num_classes
    LabeledSet train;
    LabeledSet heldout;
};

inline Dataset gen_dataset(const SyntheticDatasetConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    const auto C = static_cast<Eigen::Index>(cfg.num_classes);
    const auto d = static_cast<Eigen::Index>(cfg.input_dim);
    Dataset ds;
    ds.num_classes = cfg.num_classes;
    ds.class_means.resize(d, C);
    if (cfg.num_groups == 0) {
        for (Eigen::Index c = 0; c < C; ++c)
            for (Eigen::Index i = 0; i < d; ++i) ds.class_means(i, c) = cfg.class_separation * normal(rng);
    } else {
        const auto G = static_cast<Eigen::Index>(cfg.num_groups);
        Eigen::MatrixXd centers(d, G);
        for (Eigen::Index g = 0; g < G; ++g)
            for (Eigen::Index i = 0; i < d; ++i) centers(i, g) = normal(rng);
        for (Eigen::Index c = 0; c < C; ++c)
            for (Eigen::Index i = 0; i < d; ++i)
                ds.class_means(i, c) =
                    cfg.class_separation * (centers(i, c % G) + cfg.group_spread * normal(rng));
    }

    const std::size_t n_held = cfg.heldout_per_class();
    const std::size_t n_train = cfg.samples_per_class - n_held;
    ds.train.x.resize(d, static_cast<Eigen::Index>(n_train * cfg.num_classes));
    ds.heldout.x.resize(d, static_cast<Eigen::Index>(n_held * cfg.num_classes));
    Eigen::Index tr = 0;
    Eigen::Index ho = 0;
    for (Eigen::Index c = 0; c < C; ++c) {
        for (std::size_t s = 0; s < cfg.samples_per_class; ++s) {
            const bool held = s >= n_train;
            auto& set = held ? ds.heldout : ds.train;
            Eigen::Index& col = held ? ho : tr;
            for (Eigen::Index i = 0; i < d; ++i)
                set.x(i, col) = ds.class_means(i, c) + cfg.noise_sigma * normal(rng);
            set.labels.push_back(static_cast<std::uint32_t>(c));
            ++col;
        }
    }
    return ds;
}

}  // namespace trkd
