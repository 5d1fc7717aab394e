// Command-line driver: train, prune, analyze, eval.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ctxprune/ctxprune.h"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumeric = 2;

/// Thrown to unwind to main with a diagnostic and exit code.
struct Exit {
    int code;
};

int exit_code(ctxprune_status s) { return s == CTXPRUNE_NUMERIC ? kExitNumeric : kExitUsage; }

void check(ctxprune_status s, const std::string& what) {
    if (s == CTXPRUNE_OK) return;
    std::cerr << "ctxprune: " << what << ": " << ctxprune_last_error() << '\n';
    throw Exit{exit_code(s)};
}

[[noreturn]] void usage_error(const std::string& msg) {
    std::cerr << "ctxprune: " << msg << '\n';
    throw Exit{kExitUsage};
}

template <class T, void (*Free)(T*)>
struct Handle {
    T* p = nullptr;
    Handle() = default;
    Handle(const Handle&) = delete;
    Handle& operator=(const Handle&) = delete;
    Handle(Handle&& o) noexcept : p(o.p) { o.p = nullptr; }
    ~Handle() { Free(p); }
};

using Config = Handle<ctxprune_config, ctxprune_config_free>;
using Checkpoint = Handle<ctxprune_checkpoint, ctxprune_checkpoint_free>;
using Mask = Handle<ctxprune_mask, ctxprune_mask_free>;

template <class F>
std::string read_string(F&& f, const std::string& what) {
    std::size_t size = 0;
    check(f(nullptr, &size), what);
    std::string s(size, '\0');
    check(f(s.data(), &size), what);
    s.resize(size - 1);
    return s;
}

struct Options {
    std::string config;
    std::string checkpoint;
    std::vector<std::string> masks;
    std::optional<int> task;
    bool all_tasks = false;
    std::string out;
    bool overwrite = false;
    std::optional<int> episodes;
    std::optional<std::uint64_t> seed;
};

Config load_config(const Options& o) {
    Config c;
    check(ctxprune_config_load(o.config.c_str(), &c.p), "config " + o.config);
    if (o.episodes) check(ctxprune_config_set_eval_episodes(c.p, *o.episodes), "--episodes");
    return c;
}

/// --out, then $CTXPRUNE_OUTPUT_ROOT/<config output_dir>, then output_dir.
fs::path output_dir(const Options& o, const Config& c) {
    if (!o.out.empty()) return o.out;
    const fs::path dir = read_string([&](char* b, std::size_t* n) { return ctxprune_config_output_dir(c.p, b, n); },
                                     "output_dir");
    if (const char* root = std::getenv("CTXPRUNE_OUTPUT_ROOT"); root != nullptr && *root != '\0') {
        return fs::path(root) / dir.relative_path();
    }
    return dir;
}

void guard_outputs(const Options& o, const std::vector<fs::path>& paths) {
    if (o.overwrite) return;
    for (const auto& p : paths) {
        if (fs::exists(p)) usage_error(p.string() + " exists; pass --overwrite to replace it");
    }
}

fs::path checkpoint_path(const Options& o, const fs::path& out) {
    return o.checkpoint.empty() ? out / "checkpoint.json" : fs::path(o.checkpoint);
}

Checkpoint load_checkpoint(const fs::path& path) {
    Checkpoint k;
    check(ctxprune_checkpoint_load(path.string().c_str(), &k.p), "checkpoint " + path.string());
    return k;
}

int num_tasks(const Config& c) {
    int k = 0;
    check(ctxprune_config_num_tasks(c.p, &k), "config");
    return k;
}

fs::path mask_path(const fs::path& out, int task) { return out / ("mask_task" + std::to_string(task) + ".json"); }

void progress(long step, int task, double value, void*) {
    std::fprintf(stderr, "step %ld  task %d  normalized return %.4f\n", step, task, value);
}

int cmd_train(const Options& o) {
    Config c = load_config(o);
    if (o.seed) check(ctxprune_config_set_seed(c.p, CTXPRUNE_SEED_DQN, *o.seed), "--seed");
    const fs::path out = output_dir(o, c);
    const fs::path ckpt_path = out / "checkpoint.json";
    const fs::path log_path = out / "train_log.csv";
    guard_outputs(o, {ckpt_path, log_path});

    Checkpoint k;
    Handle<ctxprune_train_log, ctxprune_train_log_free> log;
    check(ctxprune_train(c.p, &k.p, &log.p, progress, nullptr), "training");
    check(ctxprune_checkpoint_save(k.p, ckpt_path.string().c_str()), "writing checkpoint");
    check(ctxprune_train_log_save_csv(log.p, log_path.string().c_str()), "writing training log");

    const std::string id =
        read_string([&](char* b, std::size_t* n) { return ctxprune_checkpoint_id(k.p, b, n); }, "checkpoint id");
    std::cout << "checkpoint " << id << " -> " << ckpt_path.string() << '\n';
    for (int t = 0; t < num_tasks(c); ++t) {
        double r = 0.0;
        check(ctxprune_checkpoint_final_return(k.p, t, &r), "final return");
        std::printf("task %d  normalized return %.4f\n", t, r);
    }
    return kExitOk;
}

int cmd_prune(const Options& o) {
    Config c = load_config(o);
    if (o.seed) check(ctxprune_config_set_seed(c.p, CTXPRUNE_SEED_MASK, *o.seed), "--seed");
    const int k_tasks = num_tasks(c);
    std::vector<int> tasks;
    if (o.all_tasks) {
        if (o.task) usage_error("--task and --all-tasks are mutually exclusive");
        for (int t = 0; t < k_tasks; ++t) tasks.push_back(t);
    } else if (o.task) {
        if (*o.task < 0 || *o.task >= k_tasks) {
            usage_error("--task " + std::to_string(*o.task) + " is out of range; valid tasks are 0.." +
                        std::to_string(k_tasks - 1));
        }
        tasks.push_back(*o.task);
    } else {
        usage_error("prune needs --task <k> or --all-tasks");
    }

    const fs::path out = output_dir(o, c);
    std::vector<fs::path> outputs;
    for (int t : tasks) {
        outputs.push_back(mask_path(out, t));
        outputs.push_back(out / ("mask_log_task" + std::to_string(t) + ".csv"));
    }
    guard_outputs(o, outputs);

    Checkpoint k = load_checkpoint(checkpoint_path(o, out));
    for (int t : tasks) {
        Mask m;
        Handle<ctxprune_mask_log, ctxprune_mask_log_free> log;
        check(ctxprune_prune(c.p, k.p, t, &m.p, &log.p), "pruning task " + std::to_string(t));
        const fs::path mp = mask_path(out, t);
        check(ctxprune_mask_save(m.p, mp.string().c_str()), "writing mask");
        const fs::path lp = out / ("mask_log_task" + std::to_string(t) + ".csv");
        check(ctxprune_mask_log_save_csv(log.p, lp.string().c_str()), "writing mask log");
        double density = 0.0;
        check(ctxprune_mask_density(m.p, &density), "mask density");
        std::printf("task %d  density %.4f -> %s\n", t, density, mp.string().c_str());
    }
    return kExitOk;
}

std::vector<Mask> load_masks(const Options& o, const fs::path& out, int k_tasks) {
    std::vector<fs::path> paths(o.masks.begin(), o.masks.end());
    if (paths.empty()) {
        for (int t = 0; t < k_tasks; ++t) paths.push_back(mask_path(out, t));
    }
    std::vector<Mask> masks;
    for (const auto& p : paths) {
        Mask m;
        check(ctxprune_mask_load(p.string().c_str(), &m.p), "mask " + p.string());
        masks.push_back(std::move(m));
    }
    return masks;
}

int cmd_analyze(const Options& o) {
    Config c = load_config(o);
    if (o.seed) check(ctxprune_config_set_seed(c.p, CTXPRUNE_SEED_EVAL, *o.seed), "--seed");
    const fs::path out = output_dir(o, c);
    const fs::path report_path = out / "report.json";
    const fs::path matrix_path = out / "return_matrix.csv";
    guard_outputs(o, {report_path, matrix_path});

    Checkpoint k = load_checkpoint(checkpoint_path(o, out));
    std::vector<Mask> masks = load_masks(o, out, num_tasks(c));
    std::vector<const ctxprune_mask*> raw;
    for (const auto& m : masks) raw.push_back(m.p);

    Handle<ctxprune_report, ctxprune_report_free> report;
    check(ctxprune_analyze(c.p, k.p, raw.data(), raw.size(), &report.p), "analysis");
    check(ctxprune_report_save_json(report.p, report_path.string().c_str()), "writing report");
    check(ctxprune_report_save_matrix_csv(report.p, matrix_path.string().c_str()), "writing return matrix");
    std::cout << read_string([&](char* b, std::size_t* n) { return ctxprune_report_summary(report.p, b, n); },
                             "summary");
    std::cout << "\nreport -> " << report_path.string() << "\nreturn matrix -> " << matrix_path.string() << '\n';
    return kExitOk;
}

int cmd_eval(const Options& o) {
    Config c = load_config(o);
    if (o.seed) check(ctxprune_config_set_seed(c.p, CTXPRUNE_SEED_EVAL, *o.seed), "--seed");
    if (!o.task) usage_error("eval needs --task <k>");
    if (o.masks.size() > 1) usage_error("eval takes at most one --mask");
    const fs::path out = output_dir(o, c);
    Checkpoint k = load_checkpoint(checkpoint_path(o, out));
    Mask m;
    if (!o.masks.empty()) check(ctxprune_mask_load(o.masks.front().c_str(), &m.p), "mask " + o.masks.front());

    double normalized = 0.0;
    double mean = 0.0;
    check(ctxprune_evaluate(c.p, k.p, m.p, *o.task, &normalized, &mean), "evaluation");
    const std::string id =
        read_string([&](char* b, std::size_t* n) { return ctxprune_checkpoint_id(k.p, b, n); }, "checkpoint id");

    std::printf("normalized return %.6f\n", normalized);
    // One JSON object on the last line for scripts.
    std::printf("{\"checkpoint_id\":\"%s\",\"mask\":%s,\"task_index\":%d,\"mean_return\":%.17g,"
                "\"normalized_return\":%.17g}\n",
                id.c_str(), o.masks.empty() ? "null" : ("\"" + o.masks.front() + "\"").c_str(), *o.task, mean,
                normalized);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Context-conditioned DQN pruning: train, prune, analyze, eval"};
    app.require_subcommand(1);
    app.set_version_flag("--version", ctxprune_version());

    Options o;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", o.out, "output directory (default: config output_dir)");
    };

    CLI::App* train = app.add_subcommand("train", "train the multi-task Q-network");
    add_common(train);
    train->add_flag("--overwrite", o.overwrite, "replace existing outputs");
    train->add_option("--seed", o.seed, "training seed");

    CLI::App* prune = app.add_subcommand("prune", "learn per-task weight masks");
    add_common(prune);
    prune->add_option("--checkpoint", o.checkpoint, "trained checkpoint (default: <out>/checkpoint.json)");
    prune->add_option("--task", o.task, "task index");
    prune->add_flag("--all-tasks", o.all_tasks, "prune every task");
    prune->add_flag("--overwrite", o.overwrite, "replace existing outputs");
    prune->add_option("--seed", o.seed, "mask training seed");

    CLI::App* analyze = app.add_subcommand("analyze", "weight taxonomy, context statistics, return matrix");
    add_common(analyze);
    analyze->add_option("--checkpoint", o.checkpoint, "trained checkpoint (default: <out>/checkpoint.json)");
    analyze->add_option("--mask", o.masks, "mask file (repeatable; default: <out>/mask_task<k>.json for every task)");
    analyze->add_flag("--overwrite", o.overwrite, "replace existing outputs");
    analyze->add_option("--episodes", o.episodes, "evaluation episodes per task");
    analyze->add_option("--seed", o.seed, "evaluation seed");

    CLI::App* eval = app.add_subcommand("eval", "greedy evaluation of the full network or one subnetwork");
    add_common(eval);
    eval->add_option("--checkpoint", o.checkpoint, "trained checkpoint (default: <out>/checkpoint.json)");
    eval->add_option("--mask", o.masks, "mask file; omit to evaluate the full network");
    eval->add_option("--task", o.task, "task index")->required();
    eval->add_option("--episodes", o.episodes, "evaluation episodes");
    eval->add_option("--seed", o.seed, "evaluation seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (train->parsed()) return cmd_train(o);
        if (prune->parsed()) return cmd_prune(o);
        if (analyze->parsed()) return cmd_analyze(o);
        if (eval->parsed()) return cmd_eval(o);
    } catch (const Exit& e) {
        return e.code;
    } catch (const std::exception& e) {
        std::cerr << "ctxprune: " << e.what() << '\n';
        return kExitUsage;
    }
    return kExitUsage;
}
