#pragma once

// "TKLD" teacher logit dumps and the per-tau partition statistics computed
// from them.
//
// Layout (little-endian):
//   "TKLD" | version u32 = 1 | N u32 | C u32
//   logits f32 x (N*C) row-major | labels u32 x N

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trkd/binary_io.hpp"
#include "trkd/errors.hpp"
#include "trkd/prob_core.hpp"
#include "trkd/triage_partition.hpp"

namespace trkd {

inline constexpr std::uint32_t kDumpVersion = 1;
inline constexpr std::size_t kDumpHeaderBytes = 16;

struct LogitDump {
    std::uint32_t num_examples = 0;
    std::uint32_t num_classes = 0;
    std::vector<float> logits;  // row-major N x C
    std::vector<std::uint32_t> labels;

    std::span<const float> row(std::size_t i) const {
        return std::span<const float>(logits).subspan(i * num_classes, num_classes);
    }

    bool operator==(const LogitDump&) const = default;

    void validate() const {
        if (logits.size() != static_cast<std::size_t>(num_examples) * num_classes)
            throw ShapeError("logit dump: expected " + std::to_string(num_examples) + "x" +
                             std::to_string(num_classes) + " logits, have " +
                             std::to_string(logits.size()));
        if (labels.size() != num_examples) throw ShapeError("logit dump: label count mismatch");
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] >= num_classes)
                throw ValidationError("logit dump: label " + std::to_string(labels[i]) + " at row " +
                                      std::to_string(i) + " is not < " + std::to_string(num_classes));
        for (float v : logits)
            if (!std::isfinite(v)) throw ValidationError("logit dump: non-finite logit");
    }
};

inline std::vector<unsigned char> encode_dump(const LogitDump& d) {
    d.validate();
    bin::Writer w;
    w.magic("TKLD");
    w.u32(kDumpVersion);
    w.u32(d.num_examples);
    w.u32(d.num_classes);
    for (float v : d.logits) w.f32(v);
    for (std::uint32_t l : d.labels) w.u32(l);
    return w.bytes();
}

inline void write_dump(const LogitDump& d, const std::string& path) {
    bin::save(path, encode_dump(d));
}

inline LogitDump decode_dump(bin::Reader r) {
    if (!r.magic("TKLD")) throw FormatError("'" + r.source() + "' does not start with TKLD magic");
    const auto version = r.u32();
    if (version != kDumpVersion)
        throw VersionError("'" + r.source() + "' has dump version " + std::to_string(version) +
                           ", expected " + std::to_string(kDumpVersion));
    LogitDump d;
    d.num_examples = r.u32();
    d.num_classes = r.u32();
    const std::size_t expected = static_cast<std::size_t>(d.num_examples) * d.num_classes * 4 +
                                 static_cast<std::size_t>(d.num_examples) * 4;
    r.need(expected);
    if (r.remaining() != expected)
        throw FormatError("'" + r.source() + "' has " + std::to_string(r.remaining() - expected) +
                          " trailing bytes");
    d.logits.resize(static_cast<std::size_t>(d.num_examples) * d.num_classes);
    for (float& v : d.logits) v = r.f32();
    d.labels.resize(d.num_examples);
    for (auto& l : d.labels) l = r.u32();
    d.validate();
    return d;
}

inline LogitDump read_dump(const std::string& path) { return decode_dump(bin::Reader::load(path)); }

struct PartitionSummary {
    double tau = 0.0;
    double mean_confusion_size = 0.0;
    double median_confusion_size = 0.0;
    std::size_t max_confusion_size = 0;
    double mean_mass_target = 0.0;
    double mean_mass_confusion = 0.0;
    double mean_mass_background = 0.0;
};

inline nlohmann::ordered_json to_json(const PartitionSummary& s) {
    return {{"tau", s.tau},
            {"mean_confusion_size", s.mean_confusion_size},
            {"median_confusion_size", s.median_confusion_size},
            {"max_confusion_size", s.max_confusion_size},
            {"mean_p_target", s.mean_mass_target},
            {"mean_p_confusion", s.mean_mass_confusion},
            {"mean_p_background", s.mean_mass_background}};
}

/// Partition statistics of the temperature-scaled teacher posterior for each tau.
inline std::vector<PartitionSummary> analyze_partitions(const LogitDump& dump,
                                                        const std::vector<double>& taus,
                                                        double temperature) {
    dump.validate();
    check_temperature(temperature);
    for (double tau : taus) check_tau(tau);
    if (dump.num_examples == 0) throw InvalidParameter("analyze: dump has no examples");
    if (dump.num_classes < 2) throw InvalidParameter("analyze: need at least 2 classes");

    std::vector<ProbVector> posteriors;
    posteriors.reserve(dump.num_examples);
    for (std::size_t i = 0; i < dump.num_examples; ++i) {
        const auto r = dump.row(i);
        std::vector<double> z(r.begin(), r.end());
        posteriors.push_back(softmax(temperature_scale(LogitVector(std::move(z)), temperature)));
    }

    std::vector<PartitionSummary> out;
    const double n = static_cast<double>(dump.num_examples);
    for (double tau : taus) {
        PartitionSummary s;
        s.tau = tau;
        std::vector<std::size_t> sizes;
        sizes.reserve(dump.num_examples);
        for (std::size_t i = 0; i < dump.num_examples; ++i) {
            const auto part = build_partition(posteriors[i], dump.labels[i], tau);
            sizes.push_back(part.confusion_set.size());
            s.mean_mass_target += part.teacher_mass_target;
            s.mean_mass_confusion += part.teacher_mass_confusion;
            s.mean_mass_background += part.teacher_mass_background;
        }
        for (std::size_t k : sizes) s.mean_confusion_size += static_cast<double>(k);
        s.mean_confusion_size /= n;
        s.mean_mass_target /= n;
        s.mean_mass_confusion /= n;
        s.mean_mass_background /= n;
        std::sort(sizes.begin(), sizes.end());
        const std::size_t m = sizes.size() / 2;
        s.median_confusion_size = sizes.size() % 2 ? static_cast<double>(sizes[m])
                                                   : 0.5 * static_cast<double>(sizes[m - 1] + sizes[m]);
        s.max_confusion_size = sizes.back();
        out.push_back(s);
    }
    return out;
}

}  // namespace trkd
