#pragma once

// Non-distillation objectives: additive angular margin softmax over a
// cosine classifier head, and the embedding-level MSE / cosine baselines.

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "trkd/distill_losses.hpp"
#include "trkd/errors.hpp"
#include "trkd/prob_core.hpp"

namespace trkd {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Embedding = std::vector<double>;

struct AamConfig {
    double scale = 32.0;
    double margin = 0.2;
    /// One unit-norm row per class.
    RowMatrix class_weights;

    std::size_t num_classes() const noexcept { return static_cast<std::size_t>(class_weights.rows()); }
    std::size_t dim() const noexcept { return static_cast<std::size_t>(class_weights.cols()); }

    void validate() const {
        if (!(scale > 0.0) || !std::isfinite(scale)) throw InvalidParameter("aam: scale must be > 0");
        if (!(margin >= 0.0 && margin < std::numbers::pi / 2))
            throw InvalidParameter("aam: margin must lie in [0, pi/2)");
        if (class_weights.rows() < 2) throw InvalidParameter("aam: need at least 2 classes");
        for (Eigen::Index j = 0; j < class_weights.rows(); ++j)
            if (std::abs(class_weights.row(j).norm() - 1.0) > 1e-9)
                throw InvalidParameter("aam: class weight " + std::to_string(j) + " is not unit norm");
    }
};

/// Rescales every row to unit length (all-zero rows are left alone).
inline void normalize_rows(RowMatrix& w) {
    for (Eigen::Index j = 0; j < w.rows(); ++j) {
        const double n = w.row(j).norm();
        if (n > 0.0) w.row(j) /= n;
    }
}

/// Cosines between an embedding and every (row-normalized) class weight.
struct CosineScores {
    std::vector<double> cos;
    Eigen::VectorXd unit;      // embedding / |embedding|
    Eigen::VectorXd row_norm;  // |w_j|
    double norm = 0.0;
};

inline CosineScores cosine_scores(std::span<const double> embedding, const RowMatrix& weights) {
    if (embedding.size() != static_cast<std::size_t>(weights.cols()))
        throw ShapeError("embedding dim " + std::to_string(embedding.size()) +
                         " does not match class weight dim " + std::to_string(weights.cols()));
    const Eigen::Map<const Eigen::VectorXd> e(embedding.data(),
                                              static_cast<Eigen::Index>(embedding.size()));
    if (!e.allFinite()) throw DegenerateInput("embedding has non-finite entries");
    CosineScores out;
    out.norm = e.norm();
    if (!(out.norm > 0.0)) throw DegenerateInput("embedding has zero norm");
    out.unit = e / out.norm;
    out.row_norm = weights.rowwise().norm();
    const Eigen::VectorXd raw = weights * out.unit;
    out.cos.resize(static_cast<std::size_t>(weights.rows()));
    for (Eigen::Index j = 0; j < weights.rows(); ++j)
        out.cos[static_cast<std::size_t>(j)] = raw[j] / out.row_norm[j];
    return out;
}

/// Chains dL/dcos back to the raw embedding and (optionally) the raw class
/// weights. Both outputs are accumulated into.
inline void cosine_backward(const CosineScores& cs, const RowMatrix& weights,
                            std::span<const double> dcos, std::span<double> d_embedding,
                            RowMatrix* d_weights) {
    Eigen::VectorXd de = Eigen::VectorXd::Zero(cs.unit.size());
    for (Eigen::Index j = 0; j < weights.rows(); ++j) {
        const double g = dcos[static_cast<std::size_t>(j)];
        if (g == 0.0) continue;
        const double c = cs.cos[static_cast<std::size_t>(j)];
        const double rn = cs.row_norm[j];
        de.noalias() += (g / cs.norm) * (weights.row(j).transpose() / rn - c * cs.unit);
        if (d_weights)
            d_weights->row(j) += (g / rn) * (cs.unit.transpose() - c * weights.row(j) / rn);
    }
    for (std::size_t i = 0; i < d_embedding.size(); ++i)
        d_embedding[i] += de[static_cast<Eigen::Index>(i)];
}

inline std::vector<double> scaled_cosine_logits(std::span<const double> embedding,
                                                const RowMatrix& weights, double scale) {
    auto cs = cosine_scores(embedding, weights);
    for (double& c : cs.cos) c *= scale;
    return cs.cos;
}

/// AAM cross-entropy given the cosine vector. Returns value and dL/dcos.
inline LossValueGrad aam_from_cosines(std::span<const double> cos, std::size_t y, double scale,
                                      double margin) {
    const std::size_t C = cos.size();
    if (y >= C) throw IndexError("aam: target index out of range");
    const double c = std::clamp(cos[y], -1.0, 1.0);
    double phi = c;
    double dphi = 1.0;
    if (margin != 0.0) {
        if (c > std::cos(std::numbers::pi - margin)) {
            const double sin_t = std::max(std::sqrt(1.0 - c * c), 1e-12);
            phi = c * std::cos(margin) - sin_t * std::sin(margin);
            dphi = std::cos(margin) + c * std::sin(margin) / sin_t;
        } else {
            // Linear extension once theta + m would pass pi.
            phi = c - margin * std::sin(margin);
        }
    }
    std::vector<double> logits(cos.begin(), cos.end());
    logits[y] = phi;
    for (double& l : logits) l *= scale;
    const auto lp = log_softmax(logits);
    LossValueGrad out{-lp[y], std::vector<double>(C)};
    for (std::size_t j = 0; j < C; ++j) {
        const double d = std::exp(lp[j]) - (j == y ? 1.0 : 0.0);
        out.grad[j] = scale * d * (j == y ? dphi : 1.0);
    }
    return out;
}

struct AamValueGrad {
    double value = 0.0;
    std::vector<double> grad_embedding;
    RowMatrix grad_class_weights;
};

/// Class weights are normalized inside the forward pass, so the weight
/// gradient is tangent to the unit sphere at a unit-norm row.
inline AamValueGrad aam_softmax_loss_raw(std::span<const double> embedding, std::size_t y,
                                         const RowMatrix& weights, double scale, double margin) {
    const auto cs = cosine_scores(embedding, weights);
    const auto l = aam_from_cosines(cs.cos, y, scale, margin);
    AamValueGrad out{l.value, std::vector<double>(embedding.size(), 0.0),
                     RowMatrix::Zero(weights.rows(), weights.cols())};
    cosine_backward(cs, weights, l.grad, out.grad_embedding, &out.grad_class_weights);
    return out;
}

inline AamValueGrad aam_softmax_loss(const Embedding& embedding, std::size_t y,
                                     const AamConfig& cfg) {
    cfg.validate();
    return aam_softmax_loss_raw(embedding, y, cfg.class_weights, cfg.scale, cfg.margin);
}

inline LossValueGrad mse_embed_loss(const Embedding& student, const Embedding& teacher) {
    if (student.size() != teacher.size())
        throw ShapeError("mse: student dim " + std::to_string(student.size()) +
                         " vs teacher dim " + std::to_string(teacher.size()));
    if (student.empty()) throw ShapeError("mse: empty embeddings");
    const double d = static_cast<double>(student.size());
    LossValueGrad out{0.0, std::vector<double>(student.size())};
    for (std::size_t i = 0; i < student.size(); ++i) {
        const double diff = student[i] - teacher[i];
        out.value += diff * diff;
        out.grad[i] = 2.0 * diff / d;
    }
    out.value /= d;
    return out;
}

/// 1 - cos(student, teacher); the teacher side is a constant.
inline LossValueGrad cos_embed_loss(const Embedding& student, const Embedding& teacher) {
    if (student.size() != teacher.size())
        throw ShapeError("cos: student dim " + std::to_string(student.size()) +
                         " vs teacher dim " + std::to_string(teacher.size()));
    const Eigen::Map<const Eigen::VectorXd> s(student.data(), static_cast<Eigen::Index>(student.size()));
    const Eigen::Map<const Eigen::VectorXd> t(teacher.data(), static_cast<Eigen::Index>(teacher.size()));
    const double ns = s.norm();
    const double nt = t.norm();
    if (!(ns > 0.0) || !(nt > 0.0)) throw DegenerateInput("cos: zero-norm embedding");
    const double c = s.dot(t) / (ns * nt);
    const Eigen::VectorXd g = -(t / nt - c * s / ns) / ns;
    return {1.0 - c, std::vector<double>(g.data(), g.data() + g.size())};
}

}  // namespace trkd
