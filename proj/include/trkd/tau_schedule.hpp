#pragma once

// Curriculum on the cumulative cutoff: clipped linear progress between
// k_start and k_stop drives an exponential interpolation from tau_init to
// tau_final.

#include <algorithm>
#include <cmath>
#include <string>

#include "trkd/errors.hpp"

namespace trkd {

struct TauScheduleConfig {
    double tau_init = 1.0;
    double tau_final = 0.05;
    double gamma = 0.001;
    long k_start = 0;
    long k_stop = 1;

    void validate() const {
        if (!(k_start < k_stop))
            throw InvalidParameter("tau schedule: k_start must be < k_stop");
        if (!(tau_final > 0.0 && tau_final <= tau_init && tau_init <= 1.0))
            throw InvalidParameter("tau schedule: need 0 < tau_final <= tau_init <= 1");
        if (!(gamma >= 0.0 && gamma <= 1.0))
            throw InvalidParameter("tau schedule: gamma must lie in [0, 1]");
    }
};

inline double progress(const TauScheduleConfig& cfg, long k) {
    const double v = static_cast<double>(k - cfg.k_start) /
                     static_cast<double>(cfg.k_stop - cfg.k_start);
    return std::min(1.0, std::max(0.0, v));
}

inline double tau_at(const TauScheduleConfig& cfg, long k) {
    if (k < cfg.k_start) return cfg.tau_init;
    if (k >= cfg.k_stop) return cfg.tau_final;
    const double v = progress(cfg, k);
    // std::pow(0, 0) == 1, so gamma = 0 holds tau_init exactly at k_start.
    const double decay = 1.0 - std::pow(cfg.gamma, v);
    return cfg.tau_init + (cfg.tau_final - cfg.tau_init) * decay;
}

/// Size of the discontinuity at k_stop: the scheduled branch tends to
/// tau_init + (tau_final - tau_init)(1 - gamma) while the tail is tau_final.
inline double jump_at_stop(const TauScheduleConfig& cfg) {
    return (cfg.tau_final - cfg.tau_init) * cfg.gamma;
}

/// Maps an epoch window (e.g. 10..60 of 150) onto optimizer steps of a
/// shorter run by keeping the same fractions of total training.
inline TauScheduleConfig scaled_schedule(double tau_init, double tau_final, double gamma,
                                         double start_fraction, double stop_fraction,
                                         long total_steps) {
    TauScheduleConfig cfg;
    cfg.tau_init = tau_init;
    cfg.tau_final = tau_final;
    cfg.gamma = gamma;
    cfg.k_start = std::lround(start_fraction * static_cast<double>(total_steps));
    cfg.k_stop = std::lround(stop_fraction * static_cast<double>(total_steps));
    if (cfg.k_stop <= cfg.k_start) cfg.k_stop = cfg.k_start + 1;
    return cfg;
}

}  // namespace trkd
