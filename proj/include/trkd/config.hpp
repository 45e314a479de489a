#pragma once

// Run configuration: a TOML-style file with the sections dataset, teacher,
// student, train, distill, schedule and eval, plus "section.key=value"
// overrides. Parsing uses CLI11's TOML reader; every key is checked here.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "trkd/dataset.hpp"
#include "trkd/errors.hpp"
#include "trkd/mlp.hpp"
#include "trkd/optim.hpp"

namespace trkd {

struct EvalConfig {
    std::size_t pairs_per_class = 1000;
    std::uint64_t seed = 7;
};

struct RunConfig {
    SyntheticDatasetConfig dataset;
    MlpSpec teacher{{32, 256, 256, 64}};
    MlpSpec student{{32, 64, 64}};
    TrainConfig train = [] {
        TrainConfig t;
        t.method = DistillMethod::trkd;
        return t;
    }();
    EvalConfig eval;

    /// Module invariants plus the cross-section shape checks.
    void validate() const;

    /// Same experiment under another seed (data, initialization, shuffling).
    RunConfig with_seed(std::uint64_t seed) const {
        RunConfig c = *this;
        c.dataset.seed = seed;
        c.train.seed = seed;
        return c;
    }
};

namespace config_detail {

using Inputs = std::vector<std::string>;
using Setter = std::function<void(RunConfig&, const Inputs&)>;

inline const std::string& single(const std::string& key, const Inputs& in) {
    if (in.size() != 1) throw ConfigError(key, "expected a single value");
    return in.front();
}

inline double to_real(const std::string& key, const std::string& s) {
    double v = 0.0;
    const auto* end = s.data() + s.size();
    const auto [p, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc() || p != end || !std::isfinite(v))
        throw ConfigError(key, "'" + s + "' is not a finite number");
    return v;
}

inline long long to_integer(const std::string& key, const std::string& s) {
    long long v = 0;
    const auto* end = s.data() + s.size();
    const auto [p, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc() || p != end) throw ConfigError(key, "'" + s + "' is not an integer");
    return v;
}

/// Real-valued key with an inclusive/exclusive range check.
template <class Get>
Setter real_key(const std::string& key, Get get, std::function<bool(double)> ok, std::string rule) {
    return [=](RunConfig& c, const Inputs& in) {
        const double v = to_real(key, single(key, in));
        if (!ok(v)) throw ConfigError(key, "must be " + rule + ", got " + single(key, in));
        get(c) = v;
    };
}

template <class T, class Get>
Setter integer_key(const std::string& key, Get get, long long min) {
    return [=](RunConfig& c, const Inputs& in) {
        const long long v = to_integer(key, single(key, in));
        if (v < min) throw ConfigError(key, "must be >= " + std::to_string(min) + ", got " + std::to_string(v));
        get(c) = static_cast<T>(v);
    };
}

template <class Get>
Setter bool_key(const std::string& key, Get get) {
    return [=](RunConfig& c, const Inputs& in) {
        const auto& s = single(key, in);
        if (s == "true") get(c) = true;
        else if (s == "false") get(c) = false;
        else throw ConfigError(key, "expected true or false, got '" + s + "'");
    };
}

inline Setter widths_key(const std::string& key, MlpSpec RunConfig::*spec) {
    return [=](RunConfig& c, const Inputs& in) {
        std::vector<std::size_t> w;
        for (const auto& s : in) {
            const long long v = to_integer(key, s);
            if (v < 1) throw ConfigError(key, "every width must be >= 1");
            w.push_back(static_cast<std::size_t>(v));
        }
        if (w.size() < 3) throw ConfigError(key, "need input, at least one hidden and an output width");
        (c.*spec).widths = std::move(w);
    };
}

inline const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = [] {
        std::map<std::string, Setter> t;
        auto pos = [](double v) { return v > 0.0; };
        auto nonneg = [](double v) { return v >= 0.0; };
        auto unit_open = [](double v) { return v > 0.0 && v < 1.0; };
        auto tau_range = [](double v) { return v > 0.0 && v <= 1.0; };

        t["dataset.num_classes"] = integer_key<std::size_t>("dataset.num_classes", [](RunConfig& c) -> auto& { return c.dataset.num_classes; }, 2);
        t["dataset.input_dim"] = integer_key<std::size_t>("dataset.input_dim", [](RunConfig& c) -> auto& { return c.dataset.input_dim; }, 1);
        t["dataset.samples_per_class"] = integer_key<std::size_t>("dataset.samples_per_class", [](RunConfig& c) -> auto& { return c.dataset.samples_per_class; }, 2);
        t["dataset.class_separation"] = real_key("dataset.class_separation", [](RunConfig& c) -> auto& { return c.dataset.class_separation; }, pos, "> 0");
        t["dataset.noise_sigma"] = real_key("dataset.noise_sigma", [](RunConfig& c) -> auto& { return c.dataset.noise_sigma; }, pos, "> 0");
        t["dataset.heldout_fraction"] = real_key("dataset.heldout_fraction", [](RunConfig& c) -> auto& { return c.dataset.heldout_fraction; }, unit_open, "in (0, 1)");
        t["dataset.num_groups"] = integer_key<std::size_t>("dataset.num_groups", [](RunConfig& c) -> auto& { return c.dataset.num_groups; }, 0);
        t["dataset.group_spread"] = real_key("dataset.group_spread", [](RunConfig& c) -> auto& { return c.dataset.group_spread; }, pos, "> 0");
        t["dataset.seed"] = integer_key<std::uint64_t>("dataset.seed", [](RunConfig& c) -> auto& { return c.dataset.seed; }, 0);

        t["teacher.widths"] = widths_key("teacher.widths", &RunConfig::teacher);
        t["student.widths"] = widths_key("student.widths", &RunConfig::student);

        t["train.epochs"] = integer_key<long>("train.epochs", [](RunConfig& c) -> auto& { return c.train.epochs; }, 1);
        t["train.batch_size"] = integer_key<long>("train.batch_size", [](RunConfig& c) -> auto& { return c.train.batch_size; }, 1);
        t["train.lr_peak"] = real_key("train.lr_peak", [](RunConfig& c) -> auto& { return c.train.lr_peak; }, pos, "> 0");
        t["train.lr_final"] = real_key("train.lr_final", [](RunConfig& c) -> auto& { return c.train.lr_final; }, pos, "> 0");
        t["train.warmup_epochs"] = real_key("train.warmup_epochs", [](RunConfig& c) -> auto& { return c.train.warmup_epochs; }, nonneg, ">= 0");
        t["train.momentum"] = real_key("train.momentum", [](RunConfig& c) -> auto& { return c.train.momentum; }, [](double v) { return v >= 0.0 && v < 1.0; }, "in [0, 1)");
        t["train.seed"] = integer_key<std::uint64_t>("train.seed", [](RunConfig& c) -> auto& { return c.train.seed; }, 0);
        t["train.aam_scale"] = real_key("train.aam_scale", [](RunConfig& c) -> auto& { return c.train.aam_scale; }, pos, "> 0");
        t["train.aam_margin"] = real_key("train.aam_margin", [](RunConfig& c) -> auto& { return c.train.aam_margin; }, [](double v) { return v >= 0.0 && v < 1.5707963267948966; }, "in [0, pi/2)");

        t["distill.method"] = [](RunConfig& c, const Inputs& in) {
            const auto& s = single("distill.method", in);
            const auto m = parse_method(s);
            if (!m) throw ConfigError("distill.method", "unknown method '" + s + "'");
            c.train.method = *m;
        };
        t["distill.temperature"] = real_key("distill.temperature", [](RunConfig& c) -> auto& { return c.train.distill_weights.temperature; }, pos, "> 0");
        t["distill.alpha"] = real_key("distill.alpha", [](RunConfig& c) -> auto& { return c.train.distill_weights.alpha; }, nonneg, ">= 0");
        t["distill.beta"] = real_key("distill.beta", [](RunConfig& c) -> auto& { return c.train.distill_weights.beta; }, nonneg, ">= 0");
        t["distill.lambda_m"] = real_key("distill.lambda_m", [](RunConfig& c) -> auto& { return c.train.distill_weights.lambda_m; }, nonneg, ">= 0");
        t["distill.lambda_f"] = real_key("distill.lambda_f", [](RunConfig& c) -> auto& { return c.train.distill_weights.lambda_f; }, nonneg, ">= 0");
        t["distill.rescale_t2"] = bool_key("distill.rescale_t2", [](RunConfig& c) -> auto& { return c.train.distill_weights.rescale_t2; });
        t["distill.embed_weight"] = real_key("distill.embed_weight", [](RunConfig& c) -> auto& { return c.train.embed_weight; }, nonneg, ">= 0");

        t["schedule.tau_init"] = real_key("schedule.tau_init", [](RunConfig& c) -> auto& { return c.train.tau_schedule.tau_init; }, tau_range, "in (0, 1]");
        t["schedule.tau_final"] = real_key("schedule.tau_final", [](RunConfig& c) -> auto& { return c.train.tau_schedule.tau_final; }, tau_range, "in (0, 1]");
        t["schedule.gamma"] = real_key("schedule.gamma", [](RunConfig& c) -> auto& { return c.train.tau_schedule.gamma; }, [](double v) { return v >= 0.0 && v <= 1.0; }, "in [0, 1]");
        t["schedule.start_fraction"] = real_key("schedule.start_fraction", [](RunConfig& c) -> auto& { return c.train.tau_schedule.start_fraction; }, [](double v) { return v >= 0.0 && v < 1.0; }, "in [0, 1)");
        t["schedule.stop_fraction"] = real_key("schedule.stop_fraction", [](RunConfig& c) -> auto& { return c.train.tau_schedule.stop_fraction; }, [](double v) { return v > 0.0 && v <= 1.0; }, "in (0, 1]");
        t["schedule.tau_fixed"] = [](RunConfig& c, const Inputs& in) {
            const auto& s = single("schedule.tau_fixed", in);
            if (s == "none" || s.empty()) {
                c.train.tau_schedule.fixed.reset();
                return;
            }
            const double v = to_real("schedule.tau_fixed", s);
            if (!(v > 0.0 && v <= 1.0)) throw ConfigError("schedule.tau_fixed", "must be in (0, 1] or \"none\", got " + s);
            c.train.tau_schedule.fixed = v;
        };

        t["eval.pairs_per_class"] = integer_key<std::size_t>("eval.pairs_per_class", [](RunConfig& c) -> auto& { return c.eval.pairs_per_class; }, 1);
        t["eval.seed"] = integer_key<std::uint64_t>("eval.seed", [](RunConfig& c) -> auto& { return c.eval.seed; }, 0);
        return t;
    }();
    return table;
}

inline void apply(RunConfig& c, const std::string& key, const Inputs& in) {
    const auto& table = setters();
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError(key, "unknown key");
    it->second(c, in);
}

/// Rethrows a module validation failure as a ConfigError naming `section`.
template <class F>
void section_check(const std::string& section, F&& f) {
    try {
        f();
    } catch (const InvalidParameter& e) {
        throw ConfigError(section, e.what());
    }
}

}  // namespace config_detail

inline void RunConfig::validate() const {
    using config_detail::section_check;
    section_check("dataset", [&] { dataset.validate(); });
    section_check("teacher.widths", [&] { teacher.validate(); });
    section_check("student.widths", [&] { student.validate(); });
    if (train.lr_final >= train.lr_peak)
        throw ConfigError("train.lr_final", "must be below train.lr_peak");
    if (train.warmup_epochs >= static_cast<double>(train.epochs))
        throw ConfigError("train.warmup_epochs", "must be below train.epochs");
    if (train.tau_schedule.tau_final > train.tau_schedule.tau_init)
        throw ConfigError("schedule.tau_final", "must not exceed schedule.tau_init");
    if (train.tau_schedule.start_fraction >= train.tau_schedule.stop_fraction)
        throw ConfigError("schedule.stop_fraction", "must exceed schedule.start_fraction");
    section_check("train", [&] { train.validate(); });
    if (teacher.input_dim() != dataset.input_dim)
        throw ConfigError("teacher.widths", "input width " + std::to_string(teacher.input_dim()) +
                                                " != dataset.input_dim " + std::to_string(dataset.input_dim));
    if (student.input_dim() != dataset.input_dim)
        throw ConfigError("student.widths", "input width " + std::to_string(student.input_dim()) +
                                                " != dataset.input_dim " + std::to_string(dataset.input_dim));
    if ((train.method == DistillMethod::mse || train.method == DistillMethod::cos) &&
        student.output_dim() > teacher.output_dim())
        throw ConfigError("student.widths", "embedding dim exceeds the teacher's, which mse/cos cannot target");
}

/// Parses config text over the defaults. `origin` names the source in errors.
inline RunConfig parse_config(std::istream& in, const std::string& origin = "<config>") {
    std::vector<CLI::ConfigItem> items;
    try {
        items = CLI::ConfigTOML().from_config(in);
    } catch (const CLI::Error& e) {
        throw ConfigError("", origin + ": " + e.what());
    }
    RunConfig c;
    for (const auto& item : items) {
        if (item.name == "++" || item.name == "--") continue;  // section markers
        const std::string key = item.fullname();
        if (item.parents.size() != 1)
            throw ConfigError(key, origin + ": keys must sit in one of the sections dataset, teacher, "
                                            "student, train, distill, schedule, eval");
        config_detail::apply(c, key, item.inputs);
    }
    return c;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config '" + path + "'");
    return parse_config(f, path);
}

/// "section.key=value"; arrays as "[a, b, c]" or "a,b,c".
inline void apply_override(RunConfig& c, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("", "override '" + assignment + "' is not of the form section.key=value");
    const std::string key = assignment.substr(0, eq);
    std::string value = assignment.substr(eq + 1);
    if (!value.empty() && value.front() == '[' && value.back() == ']') value = value.substr(1, value.size() - 2);
    config_detail::Inputs inputs;
    if (key.ends_with(".widths")) {
        std::stringstream ss(value);
        std::string part;
        while (std::getline(ss, part, ',')) inputs.push_back(CLI::detail::trim_copy(part));
    } else {
        inputs.push_back(CLI::detail::trim_copy(value));
        auto& v = inputs.back();
        if (v.size() >= 2 && v.front() == '"' && v.back() == '"') v = v.substr(1, v.size() - 2);
    }
    config_detail::apply(c, key, inputs);
}

inline nlohmann::ordered_json to_json(const RunConfig& c) {
    const auto& d = c.dataset;
    const auto& t = c.train;
    const auto& w = t.distill_weights;
    const auto& s = t.tau_schedule;
    nlohmann::ordered_json j;
    j["dataset"] = {{"num_classes", d.num_classes},     {"input_dim", d.input_dim},
                    {"samples_per_class", d.samples_per_class}, {"class_separation", d.class_separation},
                    {"noise_sigma", d.noise_sigma},     {"heldout_fraction", d.heldout_fraction},
                    {"num_groups", d.num_groups},       {"group_spread", d.group_spread},
                    {"seed", d.seed}};
    j["teacher"] = {{"widths", c.teacher.widths}};
    j["student"] = {{"widths", c.student.widths}};
    j["train"] = {{"epochs", t.epochs},       {"batch_size", t.batch_size},
                  {"lr_peak", t.lr_peak},     {"lr_final", t.lr_final},
                  {"warmup_epochs", t.warmup_epochs}, {"momentum", t.momentum},
                  {"seed", t.seed},           {"aam_scale", t.aam_scale},
                  {"aam_margin", t.aam_margin}};
    j["distill"] = {{"method", to_string(t.method)}, {"temperature", w.temperature},
                    {"alpha", w.alpha},              {"beta", w.beta},
                    {"lambda_m", w.lambda_m},        {"lambda_f", w.lambda_f},
                    {"rescale_t2", w.rescale_t2},    {"embed_weight", t.embed_weight}};
    j["schedule"] = {{"tau_init", s.tau_init},
                     {"tau_final", s.tau_final},
                     {"gamma", s.gamma},
                     {"start_fraction", s.start_fraction},
                     {"stop_fraction", s.stop_fraction}};
    j["schedule"]["tau_fixed"] = s.fixed ? nlohmann::ordered_json(*s.fixed) : nlohmann::ordered_json("none");
    j["eval"] = {{"pairs_per_class", c.eval.pairs_per_class}, {"seed", c.eval.seed}};
    return j;
}

}  // namespace trkd
