#pragma once

// Teacher training and teacher -> student distillation on the synthetic
// task. Single-threaded; every run is a pure function of (data, config).

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "trkd/aux_losses.hpp"
#include "trkd/checkpoint.hpp"
#include "trkd/dataset.hpp"
#include "trkd/distill_losses.hpp"
#include "trkd/errors.hpp"
#include "trkd/logit_io.hpp"
#include "trkd/mlp.hpp"
#include "trkd/optim.hpp"
#include "trkd/tau_schedule.hpp"

namespace trkd {

struct StepRecord {
    long step = 0;
    long epoch = 0;
    double lr = 0.0;
    std::optional<double> tau;
    double loss_total = 0.0;
    double loss_aam = 0.0;
    /// Distillation terms in a fixed per-method order, e.g. {"loss_tmkd", ...}.
    std::vector<std::pair<std::string, double>> components;
    std::optional<double> confusion_size_mean;
};

inline nlohmann::ordered_json to_json(const StepRecord& r) {
    nlohmann::ordered_json j;
    j["step"] = r.step;
    j["epoch"] = r.epoch;
    j["lr"] = r.lr;
    if (r.tau) j["tau"] = *r.tau;
    j["loss_total"] = r.loss_total;
    j["loss_aam"] = r.loss_aam;
    for (const auto& [k, v] : r.components) j[k] = v;
    if (r.confusion_size_mean) j["confusion_size_mean"] = *r.confusion_size_mean;
    return j;
}

struct EpochRecord {
    long epoch = 0;
    double mean_loss = 0.0;
    double train_accuracy = 0.0;
};

inline nlohmann::ordered_json to_json(const EpochRecord& r) {
    return {{"epoch", r.epoch}, {"loss", r.mean_loss}, {"train_accuracy", r.train_accuracy}};
}

struct TrainResult {
    Network net;
    std::vector<EpochRecord> epochs;
    std::vector<StepRecord> steps;
};

using StepSink = std::function<void(const StepRecord&)>;

/// Teacher outputs over a fixed input set, computed once: the frozen
/// teacher never changes during distillation.
struct TeacherTargets {
    Eigen::MatrixXd logits;      // num_classes x N, scale * cosine, no margin
    Eigen::MatrixXd embeddings;  // embedding_dim x N
};

inline Eigen::MatrixXd embed(const Network& net, const Eigen::MatrixXd& x) {
    return net.body.forward(x);
}

inline TeacherTargets teacher_targets(const Network& teacher, const Eigen::MatrixXd& x, double scale) {
    TeacherTargets t;
    t.embeddings = embed(teacher, x);
    t.logits.resize(teacher.head.rows(), t.embeddings.cols());
    for (Eigen::Index i = 0; i < t.embeddings.cols(); ++i) {
        const auto col = t.embeddings.col(i);
        const auto logits = scaled_cosine_logits({col.data(), static_cast<std::size_t>(col.size())},
                                                 teacher.head, scale);
        t.logits.col(i) = Eigen::Map<const Eigen::VectorXd>(logits.data(), t.logits.rows());
    }
    return t;
}

inline LogitDump export_logits(const Network& net, const LabeledSet& data, double scale) {
    const auto t = teacher_targets(net, data.x, scale);
    LogitDump d;
    d.num_examples = static_cast<std::uint32_t>(data.size());
    d.num_classes = static_cast<std::uint32_t>(net.num_classes());
    d.logits.reserve(static_cast<std::size_t>(t.logits.size()));
    for (Eigen::Index i = 0; i < t.logits.cols(); ++i)
        for (Eigen::Index c = 0; c < t.logits.rows(); ++c) d.logits.push_back(static_cast<float>(t.logits(c, i)));
    d.labels = data.labels;
    return d;
}

/// Teacher embeddings as MSE/COS targets for a student of embedding size
/// `dim`: projected onto the top principal axes of the uncentered second
/// moment when the sizes differ, then divided by one global constant so the
/// mean norm is 1 (AAM never constrains the teacher's norm).
inline Eigen::MatrixXd embedding_targets(const Eigen::MatrixXd& teacher_emb, std::size_t dim) {
    const auto k = static_cast<Eigen::Index>(dim);
    if (k > teacher_emb.rows())
        throw ShapeError("distill: student embedding dim " + std::to_string(dim) +
                         " exceeds teacher dim " + std::to_string(teacher_emb.rows()));
    Eigen::MatrixXd out = teacher_emb;
    if (k < teacher_emb.rows()) {
        const Eigen::MatrixXd moment = teacher_emb * teacher_emb.transpose();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(moment);
        // Eigenvalues ascend; keep the last k axes, largest first.
        const Eigen::MatrixXd axes = eig.eigenvectors().rightCols(k).rowwise().reverse();
        out = axes.transpose() * teacher_emb;
    }
    const double mean_norm = out.colwise().norm().mean();
    if (mean_norm > 0.0) out /= mean_norm;
    return out;
}

inline RowMatrix init_head(std::size_t num_classes, std::size_t dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    RowMatrix w(static_cast<Eigen::Index>(num_classes), static_cast<Eigen::Index>(dim));
    for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = normal(rng);
    normalize_rows(w);
    return w;
}

namespace detail {

inline std::span<const double> col_span(const Eigen::MatrixXd& m, Eigen::Index i) {
    return {m.col(i).data(), static_cast<std::size_t>(m.rows())};
}

inline LogitVector logits_of(const Eigen::MatrixXd& m, Eigen::Index i) {
    const auto s = col_span(m, i);
    return LogitVector(std::vector<double>(s.begin(), s.end()));
}

/// Per-example distillation term over logits: value, gradient, and the
/// named components that go into the step log.
struct LogitTerm {
    LossValueGrad total;
    std::vector<std::pair<std::string, double>> parts;
    std::size_t confusion_size = 0;
};

inline LogitTerm logit_term(DistillMethod method, const LogitVector& teacher,
                            const LogitVector& student, std::size_t y, double tau,
                            const DistillWeights& w) {
    switch (method) {
        case DistillMethod::kd: {
            auto l = kd_loss(teacher, student, w);
            return {l, {{"loss_kd", l.value}}, 0};
        }
        case DistillMethod::dkd: {
            const auto t = dkd_terms(teacher, student, y, w);
            return {combine(w.alpha, t.tckd, w.beta, t.nckd),
                    {{"loss_tckd", t.tckd.value}, {"loss_nckd", t.nckd.value}}, 0};
        }
        case DistillMethod::trkd: {
            const auto t = trkd_terms(teacher, student, y, tau, w);
            return {combine(w.lambda_m, t.tmkd, w.lambda_f, t.cfkd),
                    {{"loss_tmkd", t.tmkd.value}, {"loss_cfkd", t.cfkd.value}},
                    t.partition.confusion_set.size()};
        }
        case DistillMethod::tmkd_nckd: {
            const auto t = trkd_terms(teacher, student, y, tau, w);
            const auto d = dkd_terms(teacher, student, y, w);
            return {combine(w.lambda_m, t.tmkd, w.beta, d.nckd),
                    {{"loss_tmkd", t.tmkd.value}, {"loss_nckd", d.nckd.value}},
                    t.partition.confusion_set.size()};
        }
        case DistillMethod::tckd_cfkd: {
            const auto t = trkd_terms(teacher, student, y, tau, w);
            const auto d = dkd_terms(teacher, student, y, w);
            return {combine(w.alpha, d.tckd, w.lambda_f, t.cfkd),
                    {{"loss_tckd", d.tckd.value}, {"loss_cfkd", t.cfkd.value}},
                    t.partition.confusion_set.size()};
        }
        default:
            return {};
    }
}

inline bool is_logit_method(DistillMethod m) {
    return m == DistillMethod::kd || m == DistillMethod::dkd || uses_tau(m);
}

inline bool is_embedding_method(DistillMethod m) {
    return m == DistillMethod::mse || m == DistillMethod::cos;
}

inline bool params_finite(const Network& net) {
    for (const auto& L : net.body.layers())
        if (!L.weight.allFinite() || !L.bias.allFinite()) return false;
    return net.head.allFinite();
}

/// One minibatch after gathering: inputs, labels and, when distilling, the
/// matching teacher columns.
struct Batch {
    Eigen::MatrixXd x;
    std::vector<std::size_t> labels;
    Eigen::MatrixXd teacher_logits;
    Eigen::MatrixXd teacher_embeddings;
};

/// Mean loss over a batch and its gradient w.r.t. every trainable tensor.
struct BatchGradient {
    double loss_total = 0.0;
    double loss_aam = 0.0;
    std::vector<std::pair<std::string, double>> components;
    double confusion_size_mean = 0.0;
    long correct = 0;
    MlpGrads body;
    RowMatrix head;
};

/// `method` is none for plain supervised training. For mse/cos the teacher
/// embeddings must already have the student's embedding size.
inline BatchGradient batch_gradient(const Network& net, const Batch& batch, DistillMethod method,
                                    double tau, const TrainConfig& cfg) {
    const auto bsz = batch.x.cols();
    const double inv_b = 1.0 / static_cast<double>(bsz);
    const double s = cfg.aam_scale;

    ForwardCache cache;
    const Eigen::MatrixXd emb = net.body.forward(batch.x, &cache);
    Eigen::MatrixXd d_emb = Eigen::MatrixXd::Zero(emb.rows(), emb.cols());
    BatchGradient out;
    out.head = RowMatrix::Zero(net.head.rows(), net.head.cols());
    double confusion_total = 0.0;

    for (Eigen::Index i = 0; i < bsz; ++i) {
        const std::size_t y = batch.labels[static_cast<std::size_t>(i)];
        const auto e = col_span(emb, i);
        const auto cs = cosine_scores(e, net.head);
        if (std::max_element(cs.cos.begin(), cs.cos.end()) - cs.cos.begin() ==
            static_cast<std::ptrdiff_t>(y))
            ++out.correct;

        const auto aam = aam_from_cosines(cs.cos, y, s, cfg.aam_margin);
        std::vector<double> dcos = aam.grad;
        out.loss_aam += aam.value * inv_b;
        double example_loss = aam.value;

        if (is_logit_method(method)) {
            std::vector<double> z(cs.cos);
            for (double& v : z) v *= s;
            const auto term = logit_term(method, logits_of(batch.teacher_logits, i),
                                         LogitVector(std::move(z)), y, tau, cfg.distill_weights);
            for (std::size_t c = 0; c < dcos.size(); ++c) dcos[c] += s * term.total.grad[c];
            example_loss += term.total.value;
            if (out.components.empty())
                for (const auto& [k, v] : term.parts) out.components.emplace_back(k, 0.0);
            for (std::size_t p = 0; p < term.parts.size(); ++p)
                out.components[p].second += term.parts[p].second * inv_b;
            confusion_total += static_cast<double>(term.confusion_size);
        }

        for (double& g : dcos) g *= inv_b;
        auto d_col = d_emb.col(i);
        cosine_backward(cs, net.head, dcos, {d_col.data(), static_cast<std::size_t>(d_col.size())},
                        &out.head);

        if (is_embedding_method(method)) {
            const auto t = col_span(batch.teacher_embeddings, i);
            const Embedding se(e.begin(), e.end());
            const Embedding te(t.begin(), t.end());
            const auto l = method == DistillMethod::mse ? mse_embed_loss(se, te) : cos_embed_loss(se, te);
            const double w = cfg.embed_weight;
            example_loss += w * l.value;
            if (out.components.empty())
                out.components.emplace_back(method == DistillMethod::mse ? "loss_mse" : "loss_cos", 0.0);
            out.components[0].second += l.value * inv_b;
            const Eigen::Map<const Eigen::VectorXd> g(l.grad.data(), static_cast<Eigen::Index>(l.grad.size()));
            d_col += (w * inv_b) * g;
        }
        out.loss_total += example_loss * inv_b;
    }
    if (uses_tau(method)) out.confusion_size_mean = confusion_total * inv_b;
    out.body = net.body.backward(cache, d_emb);
    return out;
}

/// Shared loop. `teacher` is null for plain supervised training.
inline TrainResult run_training(const Dataset& data, const MlpSpec& spec, const TrainConfig& cfg,
                                const TeacherTargets* teacher, const StepSink& sink) {
    cfg.validate();
    spec.validate();
    const LabeledSet& train = data.train;
    if (train.size() == 0) throw InvalidParameter("train: empty training set");
    if (static_cast<std::size_t>(train.x.rows()) != spec.input_dim())
        throw ShapeError("train: data has input dim " + std::to_string(train.x.rows()) +
                         ", network expects " + std::to_string(spec.input_dim()));
    const DistillMethod method = teacher ? cfg.method : DistillMethod::none;
    if (teacher && is_logit_method(method) &&
        static_cast<std::size_t>(teacher->logits.rows()) != data.num_classes)
        throw ShapeError("distill: teacher head has " + std::to_string(teacher->logits.rows()) +
                         " classes, data has " + std::to_string(data.num_classes));

    const std::size_t emb_dim = spec.output_dim();
    TrainResult result{Network{Mlp(spec, cfg.seed), init_head(data.num_classes, emb_dim, cfg.seed + 1)},
                       {}, {}};
    Network& net = result.net;

    if (teacher && is_embedding_method(method) &&
        static_cast<std::size_t>(teacher->embeddings.rows()) != emb_dim)
        throw ShapeError("distill: teacher embedding targets have dim " +
                         std::to_string(teacher->embeddings.rows()) + ", student has " +
                         std::to_string(emb_dim));

    const auto N = static_cast<long>(train.size());
    const long B = std::min<long>(cfg.batch_size, N);
    const long steps_per_epoch = (N + B - 1) / B;
    const long total_steps = cfg.epochs * steps_per_epoch;
    const auto lr_sched = LrSchedule::from(cfg, steps_per_epoch);
    const auto tau_cfg = cfg.tau_schedule.resolve(total_steps);

    MlpGrads body_velocity = net.body.zero_grads();
    RowMatrix head_velocity = RowMatrix::Zero(net.head.rows(), net.head.cols());

    std::vector<std::size_t> order(static_cast<std::size_t>(N));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);

    long step = 0;
    for (long epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double epoch_loss = 0.0;
        long correct = 0;
        for (long start = 0; start < N; start += B, ++step) {
            const long bsz = std::min(B, N - start);
            Batch batch;
            batch.x.resize(train.x.rows(), bsz);
            batch.labels.resize(static_cast<std::size_t>(bsz));
            if (teacher && is_logit_method(method)) batch.teacher_logits.resize(teacher->logits.rows(), bsz);
            if (teacher && is_embedding_method(method))
                batch.teacher_embeddings.resize(teacher->embeddings.rows(), bsz);
            for (long i = 0; i < bsz; ++i) {
                const auto idx = static_cast<Eigen::Index>(order[static_cast<std::size_t>(start + i)]);
                batch.x.col(i) = train.x.col(idx);
                batch.labels[static_cast<std::size_t>(i)] = train.labels[static_cast<std::size_t>(idx)];
                if (batch.teacher_logits.size()) batch.teacher_logits.col(i) = teacher->logits.col(idx);
                if (batch.teacher_embeddings.size()) batch.teacher_embeddings.col(i) = teacher->embeddings.col(idx);
            }

            const double lr = lr_at(lr_sched, step);
            const double tau = cfg.tau_schedule.fixed ? *cfg.tau_schedule.fixed : tau_at(tau_cfg, step);
            BatchGradient g;
            try {
                g = batch_gradient(net, batch, method, tau, cfg);
            } catch (const DivergenceError&) {
                throw;
            } catch (const Error& err) {
                // Inputs were validated up front, so a failure here means the
                // activations left the representable range.
                throw DivergenceError(std::string("numerical failure at step ") +
                                          std::to_string(step) + ": " + err.what(),
                                      step);
            }

            StepRecord rec;
            rec.step = step;
            rec.epoch = epoch;
            rec.lr = lr;
            if (uses_tau(method)) {
                rec.tau = tau;
                rec.confusion_size_mean = g.confusion_size_mean;
            }
            rec.loss_total = g.loss_total;
            rec.loss_aam = g.loss_aam;
            rec.components = std::move(g.components);
            correct += g.correct;
            if (!std::isfinite(rec.loss_total))
                throw DivergenceError("non-finite loss at step " + std::to_string(step), step);
            epoch_loss += rec.loss_total * static_cast<double>(bsz);

            sgd_step(net.body, g.body, body_velocity, lr, cfg.momentum);
            momentum_step(net.head, head_velocity, g.head, lr, cfg.momentum);
            normalize_rows(net.head);
            if (!params_finite(net))
                throw DivergenceError("non-finite parameters after step " + std::to_string(step), step);

            if (sink) sink(rec);
            result.steps.push_back(std::move(rec));
        }
        result.epochs.push_back({epoch, epoch_loss / static_cast<double>(N),
                                 static_cast<double>(correct) / static_cast<double>(N)});
    }
    return result;
}

}  // namespace detail

/// Supervised training with the AAM loss only.
inline TrainResult train_teacher(const Dataset& data, const MlpSpec& spec, const TrainConfig& cfg,
                                 const StepSink& sink = {}) {
    return detail::run_training(data, spec, cfg, nullptr, sink);
}

/// Trains a fresh student against a frozen teacher with the configured
/// method on top of the AAM loss. The teacher is only read.
inline TrainResult distill_student(const Network& teacher, const Dataset& data,
                                   const MlpSpec& student_spec, const TrainConfig& cfg,
                                   const StepSink& sink = {}) {
    if (cfg.method == DistillMethod::none) return detail::run_training(data, student_spec, cfg, nullptr, sink);
    auto targets = teacher_targets(teacher, data.train.x, cfg.aam_scale);
    if (detail::is_embedding_method(cfg.method))
        targets.embeddings = embedding_targets(targets.embeddings, student_spec.output_dim());
    return detail::run_training(data, student_spec, cfg, &targets, sink);
}

}  // namespace trkd
