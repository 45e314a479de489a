#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "trkd/checkpoint.hpp"
#include "trkd/dataset.hpp"
#include "trkd/mlp.hpp"
#include "trkd/optim.hpp"
#include "trkd/trainer.hpp"

using namespace trkd;

namespace {

SyntheticDatasetConfig small_data(std::uint64_t seed = 1) {
    SyntheticDatasetConfig c;
    c.num_classes = 8;
    c.input_dim = 6;
    c.samples_per_class = 24;
    c.class_separation = 2.0;
    c.noise_sigma = 0.5;
    c.seed = seed;
    return c;
}

TrainConfig small_train(std::uint64_t seed = 1) {
    TrainConfig t;
    t.epochs = 4;
    t.batch_size = 16;
    t.warmup_epochs = 0.5;
    t.seed = seed;
    return t;
}

const MlpSpec kSmallTeacher{{6, 32, 16}};
const MlpSpec kSmallStudent{{6, 8, 8}};

bool same_params(const Network& a, const Network& b) {
    return encode_checkpoint(a) == encode_checkpoint(b);
}

}  // namespace

TEST(GenDataset, Deterministic) {
    const auto a = gen_dataset(small_data(5));
    const auto b = gen_dataset(small_data(5));
    EXPECT_TRUE(a.train.x == b.train.x);
    EXPECT_TRUE(a.heldout.x == b.heldout.x);
    EXPECT_EQ(a.train.labels, b.train.labels);
    const auto c = gen_dataset(small_data(6));
    EXPECT_FALSE(a.train.x == c.train.x);
}

TEST(GenDataset, ZeroNoiseGivesClassMeans) {
    auto cfg = small_data();
    cfg.noise_sigma = 1e-300;
    const auto ds = gen_dataset(cfg);
    for (Eigen::Index i = 0; i < ds.train.x.cols(); ++i)
        EXPECT_TRUE(ds.train.x.col(i) == ds.class_means.col(ds.train.labels[static_cast<std::size_t>(i)]));
    cfg.noise_sigma = 0.0;
    EXPECT_THROW(gen_dataset(cfg), InvalidParameter);
}

TEST(GenDataset, StratifiedDisjointSplit) {
    const auto cfg = small_data();
    const auto ds = gen_dataset(cfg);
    const std::size_t held = cfg.heldout_per_class();
    EXPECT_EQ(held, 6u);
    EXPECT_EQ(ds.heldout.size(), held * cfg.num_classes);
    EXPECT_EQ(ds.train.size(), (cfg.samples_per_class - held) * cfg.num_classes);
    std::vector<std::size_t> counts(cfg.num_classes);
    for (auto y : ds.heldout.labels) ++counts[y];
    for (auto n : counts) EXPECT_EQ(n, held);
    for (Eigen::Index i = 0; i < ds.heldout.x.cols(); ++i)
        for (Eigen::Index j = 0; j < ds.train.x.cols(); ++j)
            ASSERT_FALSE(ds.heldout.x.col(i) == ds.train.x.col(j));
}

TEST(GenDataset, RejectsTooFewSamples) {
    auto cfg = small_data();
    cfg.samples_per_class = 1;
    EXPECT_THROW(gen_dataset(cfg), InvalidParameter);
    cfg = small_data();
    cfg.num_classes = 1;
    EXPECT_THROW(gen_dataset(cfg), InvalidParameter);
}

TEST(GenDataset, WellSeparatedClassesAreLinearlySeparable) {
    SyntheticDatasetConfig cfg;
    cfg.num_classes = 16;
    cfg.class_separation = 10.0;
    cfg.noise_sigma = 0.1;
    const auto ds = gen_dataset(cfg);
    // Nearest class centroid estimated on the training split; a linear rule.
    Eigen::MatrixXd centroids = Eigen::MatrixXd::Zero(ds.train.x.rows(), 16);
    std::vector<double> n(16);
    for (Eigen::Index i = 0; i < ds.train.x.cols(); ++i) {
        centroids.col(ds.train.labels[static_cast<std::size_t>(i)]) += ds.train.x.col(i);
        ++n[ds.train.labels[static_cast<std::size_t>(i)]];
    }
    for (Eigen::Index c = 0; c < 16; ++c) centroids.col(c) /= n[static_cast<std::size_t>(c)];
    std::size_t correct = 0;
    for (Eigen::Index i = 0; i < ds.heldout.x.cols(); ++i) {
        Eigen::Index best = 0;
        (centroids.colwise() - ds.heldout.x.col(i)).colwise().squaredNorm().minCoeff(&best);
        correct += static_cast<std::size_t>(best) == ds.heldout.labels[static_cast<std::size_t>(i)];
    }
    EXPECT_GT(static_cast<double>(correct) / static_cast<double>(ds.heldout.size()), 0.99);
}

TEST(Mlp, ZeroWeightsGiveZeroEmbeddings) {
    const MlpSpec spec{{4, 5, 3}};
    Mlp net(spec, std::vector<Linear>{Linear::zeros(4, 5), Linear::zeros(5, 3)});
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(4, 7);
    EXPECT_TRUE(net.forward(x).isZero(0.0));
}

TEST(Mlp, IdentityLayersPassNonNegativeInput) {
    const MlpSpec spec{{3, 3, 3}};
    Linear id{Eigen::MatrixXd::Identity(3, 3), Eigen::VectorXd::Zero(3)};
    Mlp net(spec, std::vector<Linear>{id, id});
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(3, 5).cwiseAbs();
    EXPECT_TRUE(net.forward(x) == x);
}

TEST(Mlp, ForwardMatchesMatrixOracle) {
    const Mlp net(MlpSpec{{4, 6, 3}}, 17);
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(4, 9);
    const auto& L = net.layers();
    Eigen::MatrixXd expect(3, 9);
    for (int i = 0; i < 9; ++i) {
        Eigen::VectorXd h(6);
        for (int r = 0; r < 6; ++r) {
            double acc = L[0].bias[r];
            for (int c = 0; c < 4; ++c) acc += L[0].weight(r, c) * x(c, i);
            h[r] = acc > 0 ? acc : 0.0;
        }
        for (int r = 0; r < 3; ++r) {
            double acc = L[1].bias[r];
            for (int c = 0; c < 6; ++c) acc += L[1].weight(r, c) * h[c];
            expect(r, i) = acc;
        }
    }
    EXPECT_TRUE(net.forward(x).isApprox(expect, 1e-14));
}

TEST(Mlp, ShapeMismatch) {
    const Mlp net(MlpSpec{{4, 6, 3}}, 1);
    EXPECT_THROW(net.forward(Eigen::MatrixXd::Zero(5, 2)), ShapeError);
    EXPECT_THROW((MlpSpec{{4, 3}}.validate()), InvalidParameter);
    EXPECT_THROW((MlpSpec{{4, 0, 3}}.validate()), InvalidParameter);
}

TEST(Mlp, BackwardBasics) {
    Mlp net(MlpSpec{{4, 6, 3}}, 2);
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(4, 5);
    ForwardCache cache;
    net.forward(x, &cache);
    for (const auto& g : net.backward(cache, Eigen::MatrixXd::Zero(3, 5))) {
        EXPECT_TRUE(g.weight.isZero(0.0));
        EXPECT_TRUE(g.bias.isZero(0.0));
    }
    // Output layer is linear: its weight gradient is upstream * input^T.
    const Eigen::MatrixXd up = Eigen::MatrixXd::Random(3, 5);
    const auto grads = net.backward(cache, up);
    EXPECT_TRUE(grads[1].weight.isApprox(up * cache.inputs[1].transpose(), 1e-14));
    EXPECT_TRUE(grads[1].bias.isApprox(up.rowwise().sum(), 1e-14));
}

TEST(Mlp, StaleCacheIsRejected) {
    Mlp net(MlpSpec{{4, 6, 3}}, 2);
    ForwardCache cache;
    EXPECT_THROW(net.backward(cache, Eigen::MatrixXd::Zero(3, 1)), StateError);
    net.forward(Eigen::MatrixXd::Random(4, 1), &cache);
    net.mutable_layers()[0].bias[0] += 1.0;
    EXPECT_THROW(net.backward(cache, Eigen::MatrixXd::Zero(3, 1)), StateError);
    Mlp other(MlpSpec{{4, 6, 3}}, 2);
    ForwardCache fresh;
    net.forward(Eigen::MatrixXd::Random(4, 1), &fresh);
    EXPECT_THROW(other.backward(fresh, Eigen::MatrixXd::Zero(3, 1)), StateError);
}

TEST(Mlp, FullLossGradientMatchesFiniteDifferences) {
    const auto r = gradcheck::check_network(20, 8);
    EXPECT_EQ(r.instances, 120);
    EXPECT_LE(r.max_rel_err, 1e-5);
}

TEST(LrSchedule, Endpoints) {
    TrainConfig cfg;
    cfg.epochs = 10;
    cfg.warmup_epochs = 1.0;
    const long spe = 20;
    EXPECT_EQ(lr_at(cfg, spe, 0), 0.0);
    EXPECT_DOUBLE_EQ(lr_at(cfg, spe, 10), 0.05);
    EXPECT_DOUBLE_EQ(lr_at(cfg, spe, 20), 0.1);
    EXPECT_DOUBLE_EQ(lr_at(cfg, spe, 199), 5e-5);
    double prev = lr_at(cfg, spe, 20);
    for (long k = 21; k < 200; ++k) {
        const double lr = lr_at(cfg, spe, k);
        EXPECT_LT(lr, prev);
        prev = lr;
    }
}

TEST(MomentumStep, HandComputedRecurrence) {
    Eigen::VectorXd w(1), v(1), g(1);
    w << 1.0;
    v << 0.0;
    g << 0.5;
    momentum_step(w, v, g, 0.1, 0.9);
    EXPECT_DOUBLE_EQ(v[0], 0.5);
    EXPECT_DOUBLE_EQ(w[0], 0.95);
    g << -0.2;
    momentum_step(w, v, g, 0.1, 0.9);
    EXPECT_DOUBLE_EQ(v[0], 0.25);
    EXPECT_DOUBLE_EQ(w[0], 0.925);
}

TEST(MomentumStep, EdgeCases) {
    Eigen::VectorXd w(2), v(2), g(2);
    w << 1.0, 2.0;
    v << 0.3, -0.3;
    g << 0.5, 0.5;
    Eigen::VectorXd w0 = w;
    momentum_step(w, v, g, 0.0, 0.9);
    EXPECT_TRUE(w == w0);
    EXPECT_DOUBLE_EQ(v[0], 0.77);
    v.setConstant(7.0);
    momentum_step(w, v, g, 0.1, 0.0);
    EXPECT_DOUBLE_EQ(w[0], 0.95);
    Eigen::VectorXd bad(3);
    EXPECT_THROW(momentum_step(w, v, bad, 0.1, 0.9), ShapeError);
}

TEST(SgdStep, LayerCountMismatch) {
    Mlp net(MlpSpec{{4, 6, 3}}, 2);
    MlpGrads g = net.zero_grads();
    MlpGrads v;
    EXPECT_THROW(sgd_step(net, g, v, 0.1, 0.9), ShapeError);
}

TEST(DistillMethod, Parsing) {
    for (auto m : {DistillMethod::none, DistillMethod::kd, DistillMethod::dkd, DistillMethod::trkd,
                   DistillMethod::mse, DistillMethod::cos, DistillMethod::tmkd_nckd, DistillMethod::tckd_cfkd})
        EXPECT_EQ(parse_method(to_string(m)), m);
    EXPECT_FALSE(parse_method("gkd").has_value());
}

class Training : public ::testing::Test {
protected:
    static const Dataset& data() {
        static const Dataset ds = gen_dataset(small_data());
        return ds;
    }
    static const TrainResult& teacher() {
        static const TrainResult t = train_teacher(data(), kSmallTeacher, small_train());
        return t;
    }
};

TEST_F(Training, TeacherIsDeterministic) {
    const auto again = train_teacher(data(), kSmallTeacher, small_train());
    EXPECT_TRUE(same_params(again.net, teacher().net));
    EXPECT_EQ(again.steps.size(), teacher().steps.size());
}

TEST_F(Training, TeacherLogsEpochsAndStartsNearLogC) {
    const auto& t = teacher();
    ASSERT_EQ(t.epochs.size(), 4u);
    const double lnC = std::log(8.0);
    EXPECT_GT(t.steps.front().loss_total, lnC / 3.0);
    EXPECT_LT(t.steps.front().loss_total, lnC * 3.0 * 32.0 / 8.0);
    EXPECT_LT(t.epochs.back().mean_loss, t.epochs.front().mean_loss);
    for (const auto& s : t.steps) {
        EXPECT_TRUE(s.components.empty());
        EXPECT_FALSE(s.tau.has_value());
    }
}

TEST_F(Training, HeadRowsStayUnitNorm) {
    for (Eigen::Index j = 0; j < teacher().net.head.rows(); ++j)
        EXPECT_NEAR(teacher().net.head.row(j).norm(), 1.0, 1e-12);
}

TEST_F(Training, MethodNoneIsPlainTraining) {
    auto cfg = small_train(3);
    cfg.method = DistillMethod::none;
    const auto a = distill_student(teacher().net, data(), kSmallStudent, cfg);
    const auto b = train_teacher(data(), kSmallStudent, cfg);
    EXPECT_TRUE(same_params(a.net, b.net));
    for (const auto& s : a.steps) {
        EXPECT_TRUE(s.components.empty());
        EXPECT_EQ(s.loss_total, s.loss_aam);
    }
}

TEST_F(Training, TeacherStaysFrozen) {
    const auto before = encode_checkpoint(teacher().net);
    for (auto m : {DistillMethod::kd, DistillMethod::trkd, DistillMethod::mse}) {
        auto cfg = small_train(4);
        cfg.method = m;
        distill_student(teacher().net, data(), kSmallStudent, cfg);
    }
    EXPECT_EQ(encode_checkpoint(teacher().net), before);
}

TEST_F(Training, TrkdAtTauOneReproducesDkd) {
    auto cfg = small_train(5);
    cfg.method = DistillMethod::dkd;
    const auto dkd = distill_student(teacher().net, data(), kSmallStudent, cfg);
    cfg.method = DistillMethod::trkd;
    cfg.tau_schedule.fixed = 1.0;
    const auto trkd = distill_student(teacher().net, data(), kSmallStudent, cfg);
    ASSERT_EQ(dkd.steps.size(), trkd.steps.size());
    for (std::size_t k = 0; k < dkd.steps.size(); ++k) {
        const auto& a = dkd.steps[k];
        const auto& b = trkd.steps[k];
        EXPECT_NEAR(a.loss_total, b.loss_total, 1e-8);
        EXPECT_NEAR(a.components[0].second, b.components[0].second, 1e-8);
        EXPECT_NEAR(a.components[1].second, b.components[1].second, 1e-8);
    }
    EXPECT_TRUE(same_params(dkd.net, trkd.net));
}

TEST_F(Training, TrkdLogsCurriculum) {
    auto cfg = small_train(6);
    cfg.epochs = 6;
    cfg.method = DistillMethod::trkd;
    const auto r = distill_student(teacher().net, data(), kSmallStudent, cfg);
    ASSERT_FALSE(r.steps.empty());
    EXPECT_EQ(*r.steps.front().tau, 1.0);
    EXPECT_EQ(*r.steps.back().tau, 0.05);
    EXPECT_EQ(r.steps.front().components[0].first, "loss_tmkd");
    EXPECT_EQ(r.steps.front().components[1].first, "loss_cfkd");
    // tau = 1 keeps every non-target in the confusion set.
    EXPECT_EQ(*r.steps.front().confusion_size_mean, 7.0);
    EXPECT_LT(*r.steps.back().confusion_size_mean, 7.0);
    for (std::size_t k = 1; k < r.steps.size(); ++k) EXPECT_LE(*r.steps[k].tau, *r.steps[k - 1].tau);
    for (const auto& s : r.steps) EXPECT_TRUE(std::isfinite(s.loss_total));
}

TEST_F(Training, EmbeddingBaselinesTrain) {
    for (auto m : {DistillMethod::mse, DistillMethod::cos}) {
        auto cfg = small_train(7);
        cfg.method = m;
        const auto r = distill_student(teacher().net, data(), kSmallStudent, cfg);
        ASSERT_EQ(r.steps.front().components.size(), 1u);
        EXPECT_EQ(r.steps.front().components[0].first, m == DistillMethod::mse ? "loss_mse" : "loss_cos");
        EXPECT_TRUE(std::isfinite(r.steps.back().loss_total));
    }
}

TEST_F(Training, DivergenceNamesTheStep) {
    auto cfg = small_train(8);
    cfg.lr_peak = 1e300;
    cfg.lr_final = 1.0;
    cfg.method = DistillMethod::kd;
    try {
        distill_student(teacher().net, data(), kSmallStudent, cfg);
        FAIL() << "expected divergence";
    } catch (const DivergenceError& e) {
        EXPECT_GE(e.step(), 0);
        EXPECT_NE(std::string(e.what()).find(std::to_string(e.step())), std::string::npos);
    }
}

TEST_F(Training, ExportedLogitsMatchTeacherHead) {
    const auto dump = export_logits(teacher().net, data().heldout, 32.0);
    EXPECT_EQ(dump.num_examples, data().heldout.size());
    EXPECT_EQ(dump.num_classes, 8u);
    const Eigen::MatrixXd emb = embed(teacher().net, data().heldout.x);
    const auto z = scaled_cosine_logits({emb.col(0).data(), 16}, teacher().net.head, 32.0);
    for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(dump.logits[c], static_cast<float>(z[c]));
}
