// trkd: teacher training, distillation, evaluation and analysis on the
// synthetic verification task.
//
// Exit codes: 0 success, 2 config or usage error, 3 numerical failure or
// divergence, 4 I/O or file-format error.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "trkd/trkd.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitIo = 4;

struct ConfigFlags {
    std::string path;
    std::vector<std::string> overrides;

    void add_to(CLI::App* cmd) {
        cmd->add_option("-c,--config", path, "TOML-style run configuration (defaults when omitted)");
        cmd->add_option("--set", overrides, "Override a config key, e.g. --set train.epochs=10 (repeatable)")
            ->take_all();
    }

    trkd::RunConfig load() const {
        trkd::RunConfig c = path.empty() ? trkd::RunConfig{} : trkd::load_config(path);
        for (const auto& o : overrides) trkd::apply_override(c, o);
        c.validate();
        return c;
    }
};

/// Writes JSON lines to a file, or nowhere when the path is empty.
class JsonlWriter {
public:
    explicit JsonlWriter(const std::string& path) {
        if (path.empty()) return;
        out_.open(path);
        if (!out_) throw trkd::IoError("cannot open log '" + path + "' for writing");
        path_ = path;
    }
    template <class J>
    void write(const J& j) {
        if (!out_.is_open()) return;
        out_ << j.dump() << '\n';
        if (!out_) throw trkd::IoError("write failed for '" + path_ + "'");
    }

private:
    std::ofstream out_;
    std::string path_;
};

void report_epochs(const trkd::TrainResult& r) {
    for (const auto& e : r.epochs) std::cerr << to_json(e).dump() << '\n';
}

trkd::Network load_network(const std::string& path, const char* role) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw trkd::IoError(std::string(role) + " checkpoint '" + path + "' not found");
    return trkd::read_checkpoint(path);
}

void check_matches_dataset(const trkd::Network& net, const trkd::RunConfig& c, const char* role) {
    if (net.body.spec().input_dim() != c.dataset.input_dim)
        throw trkd::ShapeError(std::string(role) + " expects input dim " +
                               std::to_string(net.body.spec().input_dim()) + ", dataset.input_dim is " +
                               std::to_string(c.dataset.input_dim));
    if (net.num_classes() != c.dataset.num_classes)
        throw trkd::ShapeError(std::string(role) + " has " + std::to_string(net.num_classes()) +
                               " classes, dataset.num_classes is " + std::to_string(c.dataset.num_classes));
}

std::string default_log(const std::string& out) { return out + ".jsonl"; }

int cmd_train_teacher(const ConfigFlags& cf, const std::string& out, std::string log) {
    const auto c = cf.load();
    const auto data = trkd::gen_dataset(c.dataset);
    if (log.empty()) log = default_log(out);
    JsonlWriter w(log);
    const auto r = trkd::train_teacher(data, c.teacher, c.train, [&](const trkd::StepRecord& s) { w.write(to_json(s)); });
    report_epochs(r);
    trkd::write_checkpoint(r.net, out);
    return kExitOk;
}

int cmd_distill(const ConfigFlags& cf, const std::string& teacher_path, const std::string& method,
                std::optional<double> tau_fixed, const std::string& out, std::string log) {
    auto c = cf.load();
    if (!method.empty()) {
        const auto m = trkd::parse_method(method);
        if (!m) throw trkd::ConfigError("--method", "unknown method '" + method + "'");
        c.train.method = *m;
    }
    if (tau_fixed) {
        if (!(*tau_fixed > 0.0 && *tau_fixed <= 1.0))
            throw trkd::ConfigError("--tau-fixed", "must lie in (0, 1]");
        c.train.tau_schedule.fixed = *tau_fixed;
    }
    c.validate();
    const auto teacher = load_network(teacher_path, "teacher");
    check_matches_dataset(teacher, c, "teacher");
    const auto data = trkd::gen_dataset(c.dataset);
    if (log.empty()) log = default_log(out);
    JsonlWriter w(log);
    const auto r = trkd::distill_student(teacher, data, c.student, c.train,
                                         [&](const trkd::StepRecord& s) { w.write(to_json(s)); });
    report_epochs(r);
    trkd::write_checkpoint(r.net, out);
    return kExitOk;
}

int cmd_evaluate(const ConfigFlags& cf, const std::string& ckpt, const std::string& scores_path,
                 const std::string& split, bool shuffle_labels) {
    const auto c = cf.load();
    const auto net = load_network(ckpt, "evaluated");
    check_matches_dataset(net, c, "checkpoint");
    const auto data = trkd::gen_dataset(c.dataset);
    trkd::LabeledSet set = split == "train" ? data.train : data.heldout;
    if (shuffle_labels) std::shuffle(set.labels.begin(), set.labels.end(), std::mt19937_64(c.eval.seed + 1));
    const auto rep = trkd::evaluate_network(net, set, c.eval.pairs_per_class, c.eval.seed);
    if (!scores_path.empty()) trkd::write_score_file(rep.scores, scores_path);
    nlohmann::ordered_json j{{"checkpoint", ckpt},
                             {"split", split},
                             {"eer", rep.eer},
                             {"eer_percent", 100.0 * rep.eer},
                             {"target_trials", rep.scores.target_scores.size()},
                             {"nontarget_trials", rep.scores.nontarget_scores.size()},
                             {"skipped_classes", rep.scores.skipped_classes}};
    std::cout << j.dump() << '\n';
    std::fprintf(stderr, "EER %.4f%%\n", 100.0 * rep.eer);
    return kExitOk;
}

int cmd_export_logits(const ConfigFlags& cf, const std::string& ckpt, const std::string& out,
                      const std::string& split) {
    const auto c = cf.load();
    const auto net = load_network(ckpt, "teacher");
    check_matches_dataset(net, c, "checkpoint");
    const auto data = trkd::gen_dataset(c.dataset);
    trkd::write_dump(trkd::export_logits(net, split == "train" ? data.train : data.heldout, c.train.aam_scale), out);
    return kExitOk;
}

std::vector<double> parse_tau_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ',')) {
        part = CLI::detail::trim_copy(part);
        double v = 0.0;
        const auto* end = part.data() + part.size();
        const auto [p, ec] = std::from_chars(part.data(), end, v);
        if (part.empty() || ec != std::errc() || p != end)
            throw trkd::ConfigError("--tau", "'" + part + "' is not a number");
        if (!(v > 0.0 && v <= 1.0)) throw trkd::ConfigError("--tau", "values must lie in (0, 1], got " + part);
        out.push_back(v);
    }
    if (out.empty()) throw trkd::ConfigError("--tau", "empty list");
    return out;
}

int cmd_analyze(const std::string& dump_path, const std::string& taus, double temperature,
                const std::string& out) {
    const auto tau_list = parse_tau_list(taus);
    if (!(temperature > 0.0) || !std::isfinite(temperature))
        throw trkd::ConfigError("--temperature", "must be > 0");
    const auto dump = trkd::read_dump(dump_path);
    const auto summary = trkd::analyze_partitions(dump, tau_list, temperature);
    std::ofstream file;
    if (!out.empty()) {
        file.open(out);
        if (!file) throw trkd::IoError("cannot open '" + out + "' for writing");
    }
    std::ostream& os = out.empty() ? std::cout : file;
    for (const auto& s : summary) os << to_json(s).dump() << '\n';
    return kExitOk;
}

int cmd_selfcheck(long trials, std::uint64_t seed, bool tamper) {
    if (trials < 1) throw trkd::ConfigError("--trials", "must be >= 1");
    const auto t0 = std::chrono::steady_clock::now();
    const auto results = trkd::run_selfcheck({trials, seed, tamper});
    bool ok = true;
    for (const auto& r : results) {
        std::printf("%-40s trials=%-6ld max_residual=%.3e tol=%.0e %s\n", r.name.c_str(), r.trials,
                    r.max_residual, r.tolerance, r.passed() ? "PASS" : "FAIL");
        ok = ok && r.passed();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s in %.2f s\n", ok ? "all suites passed" : "FAILED", secs);
    return ok ? kExitOk : kExitNumerical;
}

int cmd_schedule_dump(const ConfigFlags& cf, long steps) {
    if (steps < 1) throw trkd::ConfigError("--steps", "must be >= 1");
    const auto c = cf.load();
    const auto& cur = c.train.tau_schedule;
    std::printf("k\ttau\n");
    if (cur.fixed) {
        for (long k = 0; k < steps; ++k) std::printf("%ld\t%.17g\n", k, *cur.fixed);
        return kExitOk;
    }
    const auto sched = cur.resolve(steps);
    for (long k = 0; k < steps; ++k) std::printf("%ld\t%.17g\n", k, trkd::tau_at(sched, k));
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Triage knowledge distillation on a synthetic speaker-verification task"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "trkd 1.0.0");

    ConfigFlags cf_teacher, cf_distill, cf_eval, cf_export, cf_sched;
    std::string out, log, teacher, method, ckpt, scores, split = "heldout", dump, taus = "0.05,0.1,0.2,0.5,0.9,1", analyze_out;
    std::optional<double> tau_fixed;
    double temperature = 4.0;
    long trials = 1000;
    long steps = 0;
    std::uint64_t seed = 1;
    bool tamper = false;
    bool shuffle_labels = false;

    auto* train_cmd = app.add_subcommand("train-teacher", "Train the teacher with the AAM loss");
    cf_teacher.add_to(train_cmd);
    train_cmd->add_option("-o,--out", out, "Checkpoint path to write")->required();
    train_cmd->add_option("--log", log, "JSONL step log (default: <out>.jsonl)");

    auto* distill_cmd = app.add_subcommand("distill", "Train a student against a frozen teacher");
    cf_distill.add_to(distill_cmd);
    distill_cmd->add_option("--teacher", teacher, "Teacher checkpoint")->required();
    distill_cmd->add_option("--method", method, "none|kd|dkd|trkd|mse|cos|tmkd_nckd|tckd_cfkd (default: distill.method)");
    distill_cmd->add_option("--tau-fixed", tau_fixed, "Use this tau for every step instead of the curriculum");
    distill_cmd->add_option("-o,--out", out, "Student checkpoint path to write")->required();
    distill_cmd->add_option("--log", log, "JSONL step log (default: <out>.jsonl)");

    auto* eval_cmd = app.add_subcommand("evaluate", "Held-out verification EER of a checkpoint");
    cf_eval.add_to(eval_cmd);
    eval_cmd->add_option("--checkpoint", ckpt, "Checkpoint to evaluate")->required();
    eval_cmd->add_option("--scores", scores, "Write one 'tgt|non <score>' line per trial");
    eval_cmd->add_option("--split", split, "heldout or train")->check(CLI::IsMember({"heldout", "train"}));
    eval_cmd->add_flag("--shuffle-labels", shuffle_labels, "Permute the labels before building trials");

    auto* export_cmd = app.add_subcommand("export-logits", "Write a TKLD logit dump of a checkpoint");
    cf_export.add_to(export_cmd);
    export_cmd->add_option("--checkpoint", ckpt, "Teacher checkpoint")->required();
    export_cmd->add_option("-o,--out", out, "Dump path to write")->required();
    export_cmd->add_option("--split", split, "heldout or train")->check(CLI::IsMember({"heldout", "train"}));

    auto* analyze_cmd = app.add_subcommand("analyze", "Confusion/background statistics of a logit dump");
    analyze_cmd->add_option("--dump", dump, "TKLD logit dump")->required();
    analyze_cmd->add_option("--tau", taus, "Comma-separated tau values in (0, 1]");
    analyze_cmd->add_option("--temperature", temperature, "Temperature applied to the logits");
    analyze_cmd->add_option("-o,--out", analyze_out, "JSONL output (default: stdout)");

    auto* self_cmd = app.add_subcommand("selfcheck", "Randomized identity and gradient checks");
    self_cmd->add_option("--trials", trials, "Instances per suite");
    self_cmd->add_option("--seed", seed, "Random seed");
    self_cmd->add_flag("--tamper", tamper, "Perturb NCKD/CFKD so the identity suites must fail");

    auto* sched_cmd = app.add_subcommand("schedule-dump", "Print the tau schedule over a run of N steps");
    cf_sched.add_to(sched_cmd);
    sched_cmd->add_option("--steps", steps, "Total optimizer steps")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*train_cmd) return cmd_train_teacher(cf_teacher, out, log);
        if (*distill_cmd) return cmd_distill(cf_distill, teacher, method, tau_fixed, out, log);
        if (*eval_cmd) return cmd_evaluate(cf_eval, ckpt, scores, split, shuffle_labels);
        if (*export_cmd) return cmd_export_logits(cf_export, ckpt, out, split);
        if (*analyze_cmd) return cmd_analyze(dump, taus, temperature, analyze_out);
        if (*self_cmd) return cmd_selfcheck(trials, seed, tamper);
        if (*sched_cmd) return cmd_schedule_dump(cf_sched, steps);
    } catch (const trkd::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const trkd::IoError& e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return kExitIo;
    } catch (const trkd::DivergenceError& e) {
        std::cerr << "diverged: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const trkd::InvalidParameter& e) {
        std::cerr << "invalid parameter: " << e.what() << '\n';
        return kExitConfig;
    } catch (const trkd::ShapeError& e) {
        std::cerr << "shape mismatch: " << e.what() << '\n';
        return kExitConfig;
    } catch (const trkd::Error& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return kExitConfig;
}
