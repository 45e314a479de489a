#pragma once

// Feed-forward embedding network: affine layers, ReLU between them, linear
// output. Batches are column-major (one sample per column).

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "trkd/errors.hpp"

namespace trkd {

struct MlpSpec {
    /// [d_in, h_1, ..., embedding_dim]
    std::vector<std::size_t> widths;

    void validate() const {
        if (widths.size() < 3)
            throw InvalidParameter("mlp: need input, at least one hidden layer, and output widths");
        for (std::size_t w : widths)
            if (w < 1) throw InvalidParameter("mlp: every width must be >= 1");
    }
    std::size_t input_dim() const { return widths.front(); }
    std::size_t output_dim() const { return widths.back(); }
};

struct Linear {
    Eigen::MatrixXd weight;  // out x in
    Eigen::VectorXd bias;

    static Linear zeros(Eigen::Index in, Eigen::Index out) {
        return {Eigen::MatrixXd::Zero(out, in), Eigen::VectorXd::Zero(out)};
    }
};

/// Per-layer parameter gradients (or momentum buffers); same layout as Mlp.
using MlpGrads = std::vector<Linear>;

class Mlp;

/// Activations saved by forward() for backward(). Tied to the parameter
/// version it was produced with.
struct ForwardCache {
    std::vector<Eigen::MatrixXd> inputs;  // input to each layer
    std::vector<Eigen::MatrixXd> pre;     // pre-activation of each layer
    std::uint64_t version = 0;
    const Mlp* owner = nullptr;
};

class Mlp {
public:
    Mlp() = default;

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
    Mlp(MlpSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
        spec_.validate();
        std::mt19937_64 rng(seed);
        for (std::size_t l = 0; l + 1 < spec_.widths.size(); ++l) {
            const auto in = static_cast<Eigen::Index>(spec_.widths[l]);
            const auto out = static_cast<Eigen::Index>(spec_.widths[l + 1]);
            const double bound = 1.0 / std::sqrt(static_cast<double>(in));
            std::uniform_real_distribution<double> u(-bound, bound);
            Linear layer = Linear::zeros(in, out);
            for (Eigen::Index r = 0; r < out; ++r)
                for (Eigen::Index c = 0; c < in; ++c) layer.weight(r, c) = u(rng);
            for (Eigen::Index r = 0; r < out; ++r) layer.bias[r] = u(rng);
            layers_.push_back(std::move(layer));
        }
    }

    /// Adopts explicit parameters; shapes must chain.
    Mlp(MlpSpec spec, std::vector<Linear> layers) : spec_(std::move(spec)), layers_(std::move(layers)) {
        spec_.validate();
        if (layers_.size() + 1 != spec_.widths.size()) throw ShapeError("mlp: layer count mismatch");
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const auto& L = layers_[l];
            if (L.weight.cols() != static_cast<Eigen::Index>(spec_.widths[l]) ||
                L.weight.rows() != static_cast<Eigen::Index>(spec_.widths[l + 1]) ||
                L.bias.size() != L.weight.rows())
                throw ShapeError("mlp: layer " + std::to_string(l) + " has wrong shape");
        }
    }

    const MlpSpec& spec() const noexcept { return spec_; }
    const std::vector<Linear>& layers() const noexcept { return layers_; }
    std::uint64_t version() const noexcept { return version_; }

    /// Mutable access invalidates outstanding forward caches.
    std::vector<Linear>& mutable_layers() noexcept {
        ++version_;
        return layers_;
    }

    MlpGrads zero_grads() const {
        MlpGrads g;
        for (const auto& L : layers_) g.push_back(Linear::zeros(L.weight.cols(), L.weight.rows()));
        return g;
    }

    Eigen::MatrixXd forward(const Eigen::MatrixXd& x, ForwardCache* cache = nullptr) const {
        if (x.rows() != static_cast<Eigen::Index>(spec_.input_dim()))
            throw ShapeError("mlp: input has " + std::to_string(x.rows()) + " rows, expected " +
                             std::to_string(spec_.input_dim()));
        if (cache) {
            cache->inputs.clear();
            cache->pre.clear();
            cache->version = version_;
            cache->owner = this;
        }
        Eigen::MatrixXd a = x;
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            Eigen::MatrixXd z = layers_[l].weight * a;
            z.colwise() += layers_[l].bias;
            if (cache) {
                cache->inputs.push_back(std::move(a));
                cache->pre.push_back(z);
            }
            if (l + 1 < layers_.size()) z = z.cwiseMax(0.0);
            a = std::move(z);
        }
        return a;
    }

    /// Parameter gradients for upstream dL/d(embeddings). Optionally also
    /// returns dL/d(input) through `d_input`.
    MlpGrads backward(const ForwardCache& cache, const Eigen::MatrixXd& d_out,
                      Eigen::MatrixXd* d_input = nullptr) const {
        if (cache.owner != this || cache.version != version_ || cache.inputs.size() != layers_.size())
            throw StateError("mlp: backward without a matching forward cache");
        if (d_out.rows() != static_cast<Eigen::Index>(spec_.output_dim()) ||
            d_out.cols() != cache.inputs.front().cols())
            throw ShapeError("mlp: upstream gradient has wrong shape");
        MlpGrads grads(layers_.size());
        Eigen::MatrixXd delta = d_out;
        for (std::size_t l = layers_.size(); l-- > 0;) {
            if (l + 1 < layers_.size())
                delta = delta.cwiseProduct((cache.pre[l].array() > 0.0).cast<double>().matrix());
            grads[l].weight.noalias() = delta * cache.inputs[l].transpose();
            grads[l].bias = delta.rowwise().sum();
            if (l > 0 || d_input) {
                Eigen::MatrixXd next = layers_[l].weight.transpose() * delta;
                delta = std::move(next);
            }
        }
        if (d_input) *d_input = std::move(delta);
        return grads;
    }

private:
    MlpSpec spec_;
    std::vector<Linear> layers_;
    std::uint64_t version_ = 0;
};

}  // namespace trkd
