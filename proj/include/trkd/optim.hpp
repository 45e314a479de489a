#pragma once

// SGD with classic momentum and the warmup + exponential-decay learning
// rate used for every training run.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>

#include <Eigen/Dense>

#include "trkd/distill_losses.hpp"
#include "trkd/errors.hpp"
#include "trkd/mlp.hpp"
#include "trkd/tau_schedule.hpp"

namespace trkd {

enum class DistillMethod {
    none,
    kd,
    dkd,
    trkd,
    mse,
    cos,
    tmkd_nckd,  // ablation: TCKD replaced by TMKD
    tckd_cfkd,  // ablation: NCKD replaced by CFKD
};

inline const char* to_string(DistillMethod m) {
    switch (m) {
        case DistillMethod::none: return "none";
        case DistillMethod::kd: return "kd";
        case DistillMethod::dkd: return "dkd";
        case DistillMethod::trkd: return "trkd";
        case DistillMethod::mse: return "mse";
        case DistillMethod::cos: return "cos";
        case DistillMethod::tmkd_nckd: return "tmkd_nckd";
        case DistillMethod::tckd_cfkd: return "tckd_cfkd";
    }
    return "?";
}

inline std::optional<DistillMethod> parse_method(const std::string& s) {
    for (auto m : {DistillMethod::none, DistillMethod::kd, DistillMethod::dkd, DistillMethod::trkd,
                   DistillMethod::mse, DistillMethod::cos, DistillMethod::tmkd_nckd,
                   DistillMethod::tckd_cfkd})
        if (s == to_string(m)) return m;
    return std::nullopt;
}

/// Whether the method partitions the teacher posterior (and so needs tau).
inline bool uses_tau(DistillMethod m) {
    return m == DistillMethod::trkd || m == DistillMethod::tmkd_nckd ||
           m == DistillMethod::tckd_cfkd;
}

/// The tau window is given as fractions of total steps; a fixed tau, when
/// set, replaces the curriculum.
struct TauCurriculum {
    double tau_init = 1.0;
    double tau_final = 0.05;
    double gamma = 0.001;
    double start_fraction = 10.0 / 150.0;
    double stop_fraction = 60.0 / 150.0;
    std::optional<double> fixed;

    TauScheduleConfig resolve(long total_steps) const {
        auto cfg = scaled_schedule(tau_init, tau_final, gamma, start_fraction, stop_fraction,
                                   total_steps);
        cfg.validate();
        return cfg;
    }
};

struct TrainConfig {
    long epochs = 30;
    long batch_size = 64;
    double lr_peak = 0.1;
    double lr_final = 5e-5;
    double warmup_epochs = 1.2;
    double momentum = 0.9;
    std::uint64_t seed = 1;
    DistillMethod method = DistillMethod::none;
    DistillWeights distill_weights;
    TauCurriculum tau_schedule;
    double aam_scale = 32.0;
    double aam_margin = 0.2;
    /// Weight on the MSE / COS embedding losses.
    double embed_weight = 1.0;

    void validate() const {
        if (epochs < 1) throw InvalidParameter("train: epochs must be >= 1");
        if (batch_size < 1) throw InvalidParameter("train: batch_size must be >= 1");
        if (!(lr_peak > lr_final && lr_final > 0.0))
            throw InvalidParameter("train: need lr_peak > lr_final > 0");
        if (!(warmup_epochs >= 0.0 && warmup_epochs < static_cast<double>(epochs)))
            throw InvalidParameter("train: need 0 <= warmup_epochs < epochs");
        if (!(momentum >= 0.0 && momentum < 1.0))
            throw InvalidParameter("train: momentum must lie in [0, 1)");
        if (!(aam_scale > 0.0)) throw InvalidParameter("train: aam_scale must be > 0");
        if (!(aam_margin >= 0.0 && aam_margin < 1.5707963267948966))
            throw InvalidParameter("train: aam_margin must lie in [0, pi/2)");
        if (!(embed_weight >= 0.0)) throw InvalidParameter("train: embed_weight must be >= 0");
        distill_weights.validate();
        if (tau_schedule.fixed) check_tau(*tau_schedule.fixed);
        TauScheduleConfig probe{tau_schedule.tau_init, tau_schedule.tau_final, tau_schedule.gamma, 0, 1};
        probe.validate();
        if (!(tau_schedule.start_fraction >= 0.0 &&
              tau_schedule.start_fraction < tau_schedule.stop_fraction))
            throw InvalidParameter("train: tau window needs 0 <= start_fraction < stop_fraction");
    }
};

struct LrSchedule {
    double lr_peak = 0.1;
    double lr_final = 5e-5;
    long warmup_steps = 0;
    long total_steps = 1;

    static LrSchedule from(const TrainConfig& cfg, long steps_per_epoch) {
        return {cfg.lr_peak, cfg.lr_final,
                std::lround(cfg.warmup_epochs * static_cast<double>(steps_per_epoch)),
                cfg.epochs * steps_per_epoch};
    }
};

/// Linear 0 -> peak over warmup, then exponential decay that lands on
/// lr_final at the last step (total_steps - 1).
inline double lr_at(const LrSchedule& s, long k) {
    if (k < s.warmup_steps)
        return s.lr_peak * static_cast<double>(k) / static_cast<double>(s.warmup_steps);
    const long last = s.total_steps - 1;
    if (last <= s.warmup_steps) return s.lr_peak;
    const double frac = std::min(1.0, static_cast<double>(k - s.warmup_steps) /
                                          static_cast<double>(last - s.warmup_steps));
    return s.lr_peak * std::pow(s.lr_final / s.lr_peak, frac);
}

inline double lr_at(const TrainConfig& cfg, long steps_per_epoch, long k) {
    return lr_at(LrSchedule::from(cfg, steps_per_epoch), k);
}

/// v <- momentum * v + g;  w <- w - lr * v
template <typename Param, typename Velocity, typename Grad>
void momentum_step(Eigen::MatrixBase<Param>& w, Eigen::MatrixBase<Velocity>& v,
                   const Eigen::MatrixBase<Grad>& g, double lr, double momentum) {
    if (w.rows() != g.rows() || w.cols() != g.cols() || v.rows() != g.rows() || v.cols() != g.cols())
        throw ShapeError("sgd: parameter, velocity and gradient shapes differ");
    v = momentum * v + g;
    w -= lr * v;
}

inline void sgd_step(Mlp& net, const MlpGrads& grads, MlpGrads& velocity, double lr, double momentum) {
    if (grads.size() != net.layers().size() || velocity.size() != net.layers().size())
        throw ShapeError("sgd: layer count mismatch");
    auto& layers = net.mutable_layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
        momentum_step(layers[l].weight, velocity[l].weight, grads[l].weight, lr, momentum);
        momentum_step(layers[l].bias, velocity[l].bias, grads[l].bias, lr, momentum);
    }
}

}  // namespace trkd
