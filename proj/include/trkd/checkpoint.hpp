#pragma once

// A trained network: embedding MLP plus the cosine classifier head, and its
// "TRKD" checkpoint file.
//
// Layout (little-endian):
//   "TRKD" | version u32 | layer_count u32 | widths u32 x (layer_count + 1)
//   per layer: weight f64 x (out*in) row-major, bias f64 x out
//   num_classes u32 | embedding_dim u32 | class weights f64 x (C*d) row-major

#include <cstdint>
#include <string>
#include <vector>

#include "trkd/aux_losses.hpp"
#include "trkd/binary_io.hpp"
#include "trkd/errors.hpp"
#include "trkd/mlp.hpp"

namespace trkd {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Network {
    Mlp body;
    RowMatrix head;  // num_classes x embedding_dim, unit rows

    std::size_t num_classes() const noexcept { return static_cast<std::size_t>(head.rows()); }
};

inline std::vector<unsigned char> encode_checkpoint(const Network& net) {
    bin::Writer w;
    w.magic("TRKD");
    w.u32(kCheckpointVersion);
    const auto& widths = net.body.spec().widths;
    w.u32(static_cast<std::uint32_t>(widths.size() - 1));
    for (std::size_t width : widths) w.u32(static_cast<std::uint32_t>(width));
    for (const auto& L : net.body.layers()) {
        for (Eigen::Index r = 0; r < L.weight.rows(); ++r)
            for (Eigen::Index c = 0; c < L.weight.cols(); ++c) w.f64(L.weight(r, c));
        for (Eigen::Index r = 0; r < L.bias.size(); ++r) w.f64(L.bias[r]);
    }
    w.u32(static_cast<std::uint32_t>(net.head.rows()));
    w.u32(static_cast<std::uint32_t>(net.head.cols()));
    for (Eigen::Index r = 0; r < net.head.rows(); ++r)
        for (Eigen::Index c = 0; c < net.head.cols(); ++c) w.f64(net.head(r, c));
    return w.bytes();
}

inline void write_checkpoint(const Network& net, const std::string& path) {
    bin::save(path, encode_checkpoint(net));
}

inline Network decode_checkpoint(bin::Reader r) {
    if (!r.magic("TRKD")) throw FormatError("'" + r.source() + "' is not a TRKD checkpoint");
    const auto version = r.u32();
    if (version != kCheckpointVersion)
        throw VersionError("'" + r.source() + "' has checkpoint version " + std::to_string(version) +
                           ", expected " + std::to_string(kCheckpointVersion));
    const auto n_layers = r.u32();
    if (n_layers < 2 || n_layers > 1024)
        throw ValidationError("'" + r.source() + "': implausible layer count " + std::to_string(n_layers));
    MlpSpec spec;
    for (std::uint32_t i = 0; i <= n_layers; ++i) {
        const auto width = r.u32();
        if (width == 0) throw ValidationError("'" + r.source() + "': zero layer width");
        spec.widths.push_back(width);
    }
    std::vector<Linear> layers;
    for (std::uint32_t l = 0; l < n_layers; ++l) {
        const auto in = static_cast<Eigen::Index>(spec.widths[l]);
        const auto out = static_cast<Eigen::Index>(spec.widths[l + 1]);
        r.need(static_cast<std::size_t>((out * in + out) * 8));
        Linear L = Linear::zeros(in, out);
        for (Eigen::Index row = 0; row < out; ++row)
            for (Eigen::Index c = 0; c < in; ++c) L.weight(row, c) = r.f64();
        for (Eigen::Index row = 0; row < out; ++row) L.bias[row] = r.f64();
        layers.push_back(std::move(L));
    }
    const auto C = r.u32();
    const auto d = r.u32();
    if (d != spec.widths.back())
        throw ValidationError("'" + r.source() + "': head dim " + std::to_string(d) +
                              " does not match embedding dim " + std::to_string(spec.widths.back()));
    if (C < 2) throw ValidationError("'" + r.source() + "': head needs >= 2 classes");
    r.need(static_cast<std::size_t>(C) * d * 8);
    RowMatrix head(C, d);
    for (Eigen::Index row = 0; row < head.rows(); ++row)
        for (Eigen::Index c = 0; c < head.cols(); ++c) head(row, c) = r.f64();
    if (r.remaining() != 0)
        throw FormatError("'" + r.source() + "' has " + std::to_string(r.remaining()) +
                          " trailing bytes");
    return {Mlp(std::move(spec), std::move(layers)), std::move(head)};
}

inline Network read_checkpoint(const std::string& path) {
    return decode_checkpoint(bin::Reader::load(path));
}

}  // namespace trkd
