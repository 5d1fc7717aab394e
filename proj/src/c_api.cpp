#include "ctxprune/ctxprune.h"

#include <cstring>
#include <iomanip>
#include <new>
#include <sstream>
#include <string>
#include <vector>

#include "ctxprune/analysis.hpp"
#include "ctxprune/dqn.hpp"
#include "ctxprune/error.hpp"
#include "ctxprune/io.hpp"
#include "ctxprune/masker.hpp"
#include "ctxprune/rng.hpp"

struct ctxprune_config {
    ctxprune::ExperimentConfig cfg;
};
struct ctxprune_checkpoint {
    ctxprune::Checkpoint ckpt;
};
struct ctxprune_train_log {
    ctxprune::TrainingLog log;
};
struct ctxprune_mask {
    ctxprune::MaskFile mask;
};
struct ctxprune_mask_log {
    ctxprune::MaskTrainLog log;
    int task_index = 0;
};
struct ctxprune_report {
    ctxprune::SubnetReport report;
};

namespace {

using namespace ctxprune;

thread_local std::string g_last_error;

// Stream tag for the states a mask is fitted on.
constexpr std::uint64_t kMaskStateStream = 0x7374617465ULL;

ctxprune_status status_of(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidArgument: return CTXPRUNE_INVALID_ARGUMENT;
        case ErrorKind::Config: return CTXPRUNE_CONFIG;
        case ErrorKind::Io: return CTXPRUNE_IO;
        case ErrorKind::Format: return CTXPRUNE_FORMAT;
        case ErrorKind::Mismatch: return CTXPRUNE_MISMATCH;
        case ErrorKind::Numeric: return CTXPRUNE_NUMERIC;
    }
    return CTXPRUNE_INTERNAL;
}

template <class F>
ctxprune_status guarded(F&& body) {
    g_last_error.clear();
    try {
        body();
        return CTXPRUNE_OK;
    } catch (const Error& e) {
        g_last_error = e.what();
        return status_of(e.kind());
    } catch (const std::bad_alloc&) {
        g_last_error = "out of memory";
    } catch (const std::exception& e) {
        g_last_error = e.what();
    } catch (...) {
        g_last_error = "unknown error";
    }
    return CTXPRUNE_INTERNAL;
}

template <class T>
void need(const T* p, const char* what) {
    if (p == nullptr) fail(ErrorKind::InvalidArgument, std::string(what) + " is NULL");
}

void copy_out(const std::string& s, char* buf, std::size_t* size) {
    need(size, "size");
    const std::size_t required = s.size() + 1;
    if (buf == nullptr) {
        *size = required;
        return;
    }
    if (*size < required) {
        *size = required;
        fail(ErrorKind::InvalidArgument, "buffer too small: " + std::to_string(required) + " bytes needed");
    }
    std::memcpy(buf, s.c_str(), required);
    *size = required;
}

void check_task(int task, int num_tasks) {
    if (task < 0 || task >= num_tasks) {
        fail(ErrorKind::InvalidArgument,
             "task index " + std::to_string(task) + " is outside [0, " + std::to_string(num_tasks) + ")");
    }
}

/// The checkpoint must come from the environment the config describes.
void check_same_env(const EnvConfig& cfg_env, const EnvConfig& ckpt_env) {
    EnvConfig a = cfg_env;
    EnvConfig b = ckpt_env;
    a.seed = b.seed = 0;
    if (!(a == b)) fail(ErrorKind::Mismatch, "checkpoint was trained on a different environment than the config");
}

std::string format_summary(const SubnetReport& r) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(3);
    const WeightTaxonomy& t = r.taxonomy;
    s << "checkpoint " << r.checkpoint_id << "  weights " << t.num_weights << "  masks " << t.num_masks << "\n\n";
    s << "mask densities:";
    for (const MaskSummary& m : r.masks) s << "  " << task_name(m.task_index, r.env.num_tasks) << ' ' << m.density;
    s << "\n\n";

    s << std::left << std::setw(18) << "category" << std::right << std::setw(8) << "count" << std::setw(10)
      << "of total" << std::setw(11) << "of active" << std::setw(10) << "context" << '\n';
    for (int c = 0; c < kNumCategories; ++c) {
        const auto cat = static_cast<WeightCategory>(c);
        s << std::left << std::setw(18) << category_name(cat) << std::right << std::setw(8) << t.count(cat)
          << std::setw(10) << t.fraction_of_total(cat);
        const auto fa = t.fraction_of_active(cat);
        if (fa) {
            s << std::setw(11) << *fa;
        } else {
            s << std::setw(11) << "-";
        }
        s << std::setw(10) << r.context.context_by_category[static_cast<std::size_t>(c)] << '\n';
    }
    s << "task-specific weights on context inputs: ";
    if (r.context.task_specific_context_share) {
        s << *r.context.task_specific_context_share << '\n';
    } else {
        s << "n/a\n";
    }
    s << "own-slot share of kept context weights:";
    for (std::size_t k = 0; k < r.context.mask_tasks.size(); ++k) {
        const auto v = r.context.own_slot_share(k);
        s << "  " << task_name(r.context.mask_tasks[k], r.env.num_tasks) << ' ';
        if (v) {
            s << *v;
        } else {
            s << "n/a";
        }
    }
    s << "\n\nnormalized return (rows: network, columns: evaluation task)\n";
    s << std::left << std::setw(16) << "network" << std::right;
    for (const auto& c : r.returns.column_names) s << std::setw(9) << c;
    s << '\n';
    for (std::size_t i = 0; i < r.returns.values.size(); ++i) {
        s << std::left << std::setw(16) << r.returns.row_names[i] << std::right;
        for (double v : r.returns.values[i]) s << std::setw(9) << v;
        s << '\n';
    }
    return s.str();
}

}  // namespace

extern "C" {

const char* ctxprune_last_error(void) { return g_last_error.c_str(); }

const char* ctxprune_version(void) { return "0.1.0"; }

const char* ctxprune_status_name(ctxprune_status status) {
    switch (status) {
        case CTXPRUNE_OK: return "ok";
        case CTXPRUNE_INVALID_ARGUMENT: return "invalid argument";
        case CTXPRUNE_CONFIG: return "config error";
        case CTXPRUNE_IO: return "i/o error";
        case CTXPRUNE_FORMAT: return "format error";
        case CTXPRUNE_MISMATCH: return "mismatch";
        case CTXPRUNE_NUMERIC: return "numeric error";
        case CTXPRUNE_INTERNAL: return "internal error";
    }
    return "unknown status";
}

// ---- config -----------------------------------------------------------------

ctxprune_status ctxprune_config_load(const char* path, ctxprune_config** out) {
    return guarded([&] {
        need(path, "path");
        need(out, "out");
        *out = new ctxprune_config{load_config(path)};
    });
}

ctxprune_status ctxprune_config_parse(const char* json_text, ctxprune_config** out) {
    return guarded([&] {
        need(json_text, "json_text");
        need(out, "out");
        *out = new ctxprune_config{parse_config(json_text)};
    });
}

ctxprune_status ctxprune_config_default(ctxprune_config** out) {
    return guarded([&] {
        need(out, "out");
        auto* c = new ctxprune_config{};
        c->cfg.finalize();
        *out = c;
    });
}

void ctxprune_config_free(ctxprune_config* cfg) { delete cfg; }

ctxprune_status ctxprune_config_num_tasks(const ctxprune_config* cfg, int* out) {
    return guarded([&] {
        need(cfg, "cfg");
        need(out, "out");
        *out = cfg->cfg.env.num_tasks;
    });
}

ctxprune_status ctxprune_config_output_dir(const ctxprune_config* cfg, char* buf, size_t* size) {
    return guarded([&] {
        need(cfg, "cfg");
        copy_out(cfg->cfg.output_dir, buf, size);
    });
}

ctxprune_status ctxprune_config_task_name(const ctxprune_config* cfg, int task, char* buf, size_t* size) {
    return guarded([&] {
        need(cfg, "cfg");
        check_task(task, cfg->cfg.env.num_tasks);
        copy_out(task_name(task, cfg->cfg.env.num_tasks), buf, size);
    });
}

ctxprune_status ctxprune_config_set_seed(ctxprune_config* cfg, ctxprune_seed_kind which, uint64_t seed) {
    return guarded([&] {
        need(cfg, "cfg");
        ExperimentConfig& c = cfg->cfg;
        switch (which) {
            case CTXPRUNE_SEED_ALL: c.env.seed = c.dqn.seed = c.mask.seed = c.eval.seed = seed; break;
            case CTXPRUNE_SEED_ENV: c.env.seed = seed; break;
            case CTXPRUNE_SEED_DQN: c.dqn.seed = seed; break;
            case CTXPRUNE_SEED_MASK: c.mask.seed = seed; break;
            case CTXPRUNE_SEED_EVAL: c.eval.seed = seed; break;
            default: fail(ErrorKind::InvalidArgument, "unknown seed kind");
        }
    });
}

ctxprune_status ctxprune_config_set_eval_episodes(ctxprune_config* cfg, int episodes) {
    return guarded([&] {
        need(cfg, "cfg");
        if (episodes < 1) fail(ErrorKind::Config, "eval.episodes: must be at least 1");
        cfg->cfg.eval.episodes = episodes;
    });
}

ctxprune_status ctxprune_config_dump(const ctxprune_config* cfg, char* buf, size_t* size) {
    return guarded([&] {
        need(cfg, "cfg");
        copy_out(dump_config(cfg->cfg), buf, size);
    });
}

// ---- training ---------------------------------------------------------------

ctxprune_status ctxprune_train(const ctxprune_config* cfg, ctxprune_checkpoint** out, ctxprune_train_log** log,
                               ctxprune_progress_fn progress, void* user) {
    return guarded([&] {
        need(cfg, "cfg");
        need(out, "out");
        const ExperimentConfig& c = cfg->cfg;
        TrainProgress cb;
        if (progress != nullptr) {
            cb = [progress, user](const TrainingLogEntry& e) {
                progress(e.step, e.task_index, e.normalized_return, user);
            };
        }
        TrainResult r = train_dqn(c.env, c.net, c.dqn, cb);
        auto* ckpt = new ctxprune_checkpoint{};
        ckpt->ckpt.weights = std::move(r.weights);
        ckpt->ckpt.env = c.env;
        ckpt->ckpt.dqn = c.dqn;
        ckpt->ckpt.final_returns = r.log.final_returns();
        ckpt->ckpt.id = checkpoint_id(ckpt->ckpt.weights);
        if (log != nullptr) *log = new ctxprune_train_log{std::move(r.log)};
        *out = ckpt;
    });
}

void ctxprune_train_log_free(ctxprune_train_log* log) { delete log; }

ctxprune_status ctxprune_train_log_save_csv(const ctxprune_train_log* log, const char* path) {
    return guarded([&] {
        need(log, "log");
        need(path, "path");
        std::ostringstream s;
        log->log.write_csv(s);
        write_text(path, s.str());
    });
}

// ---- checkpoints ------------------------------------------------------------

ctxprune_status ctxprune_checkpoint_load(const char* path, ctxprune_checkpoint** out) {
    return guarded([&] {
        need(path, "path");
        need(out, "out");
        *out = new ctxprune_checkpoint{load_checkpoint(path)};
    });
}

ctxprune_status ctxprune_checkpoint_save(const ctxprune_checkpoint* ckpt, const char* path) {
    return guarded([&] {
        need(ckpt, "ckpt");
        need(path, "path");
        save_checkpoint(ckpt->ckpt, path);
    });
}

void ctxprune_checkpoint_free(ctxprune_checkpoint* ckpt) { delete ckpt; }

ctxprune_status ctxprune_checkpoint_num_weights(const ctxprune_checkpoint* ckpt, size_t* out) {
    return guarded([&] {
        need(ckpt, "ckpt");
        need(out, "out");
        *out = ckpt->ckpt.weights.size();
    });
}

ctxprune_status ctxprune_checkpoint_num_tasks(const ctxprune_checkpoint* ckpt, int* out) {
    return guarded([&] {
        need(ckpt, "ckpt");
        need(out, "out");
        *out = ckpt->ckpt.env.num_tasks;
    });
}

ctxprune_status ctxprune_checkpoint_id(const ctxprune_checkpoint* ckpt, char* buf, size_t* size) {
    return guarded([&] {
        need(ckpt, "ckpt");
        copy_out(ckpt->ckpt.id, buf, size);
    });
}

ctxprune_status ctxprune_checkpoint_final_return(const ctxprune_checkpoint* ckpt, int task, double* out) {
    return guarded([&] {
        need(ckpt, "ckpt");
        need(out, "out");
        check_task(task, static_cast<int>(ckpt->ckpt.final_returns.size()));
        *out = ckpt->ckpt.final_returns[static_cast<std::size_t>(task)];
    });
}

// ---- masks ------------------------------------------------------------------

ctxprune_status ctxprune_prune(const ctxprune_config* cfg, const ctxprune_checkpoint* ckpt, int task,
                               ctxprune_mask** out, ctxprune_mask_log** log) {
    return guarded([&] {
        need(cfg, "cfg");
        need(ckpt, "ckpt");
        need(out, "out");
        const ExperimentConfig& c = cfg->cfg;
        const Checkpoint& k = ckpt->ckpt;
        check_same_env(c.env, k.env);
        check_task(task, k.env.num_tasks);
        const TaskContext ctx(task, k.env.num_tasks);
        const std::vector<Observation> states =
            collect_states(k.weights, k.env, ctx, c.mask.num_states, c.mask.state_epsilon,
                           derive_seed(c.mask.seed, kMaskStateStream, static_cast<std::uint64_t>(task)));
        MaskTrainResult r = learn_mask(k.weights, states, ctx, c.mask, k.id);

        auto* m = new ctxprune_mask{};
        m->mask.task_index = task;
        m->mask.num_tasks = k.env.num_tasks;
        m->mask.checkpoint_id = k.id;
        m->mask.logits = std::move(r.logits);
        m->mask.config = c.mask;
        m->mask.env = k.env;
        m->mask.final_entry = r.log.entries.back();
        if (log != nullptr) *log = new ctxprune_mask_log{std::move(r.log), task};
        *out = m;
    });
}

ctxprune_status ctxprune_mask_load(const char* path, ctxprune_mask** out) {
    return guarded([&] {
        need(path, "path");
        need(out, "out");
        *out = new ctxprune_mask{load_mask(path)};
    });
}

ctxprune_status ctxprune_mask_save(const ctxprune_mask* mask, const char* path) {
    return guarded([&] {
        need(mask, "mask");
        need(path, "path");
        save_mask(mask->mask, path);
    });
}

void ctxprune_mask_free(ctxprune_mask* mask) { delete mask; }

ctxprune_status ctxprune_mask_task(const ctxprune_mask* mask, int* out) {
    return guarded([&] {
        need(mask, "mask");
        need(out, "out");
        *out = mask->mask.task_index;
    });
}

ctxprune_status ctxprune_mask_density(const ctxprune_mask* mask, double* out) {
    return guarded([&] {
        need(mask, "mask");
        need(out, "out");
        *out = mask->mask.logits.density();
    });
}

void ctxprune_mask_log_free(ctxprune_mask_log* log) { delete log; }

ctxprune_status ctxprune_mask_log_save_csv(const ctxprune_mask_log* log, const char* path) {
    return guarded([&] {
        need(log, "log");
        need(path, "path");
        std::ostringstream s;
        log->log.write_csv(s, log->task_index);
        write_text(path, s.str());
    });
}

// ---- analysis ---------------------------------------------------------------

ctxprune_status ctxprune_analyze(const ctxprune_config* cfg, const ctxprune_checkpoint* ckpt,
                                 const ctxprune_mask* const* masks, size_t num_masks, ctxprune_report** out) {
    return guarded([&] {
        need(cfg, "cfg");
        need(ckpt, "ckpt");
        need(out, "out");
        if (num_masks > 0) need(masks, "masks");
        const ExperimentConfig& c = cfg->cfg;
        const Checkpoint& k = ckpt->ckpt;
        check_same_env(c.env, k.env);
        std::vector<Subnetwork> subnets;
        for (std::size_t i = 0; i < num_masks; ++i) {
            need(masks[i], "masks[i]");
            subnets.push_back(masks[i]->mask.subnetwork(k));
        }
        *out = new ctxprune_report{analyze(k.id, k.weights, subnets, k.env, c.eval.episodes, c.eval.seed)};
    });
}

void ctxprune_report_free(ctxprune_report* report) { delete report; }

ctxprune_status ctxprune_report_save_json(const ctxprune_report* report, const char* path) {
    return guarded([&] {
        need(report, "report");
        need(path, "path");
        write_text(path, encode_report(report->report));
    });
}

ctxprune_status ctxprune_report_save_matrix_csv(const ctxprune_report* report, const char* path) {
    return guarded([&] {
        need(report, "report");
        need(path, "path");
        std::ostringstream s;
        report->report.returns.write_csv(s);
        write_text(path, s.str());
    });
}

ctxprune_status ctxprune_report_summary(const ctxprune_report* report, char* buf, size_t* size) {
    return guarded([&] {
        need(report, "report");
        copy_out(format_summary(report->report), buf, size);
    });
}

// ---- evaluation -------------------------------------------------------------

ctxprune_status ctxprune_evaluate(const ctxprune_config* cfg, const ctxprune_checkpoint* ckpt,
                                  const ctxprune_mask* mask, int task, double* normalized_return,
                                  double* mean_return) {
    return guarded([&] {
        need(cfg, "cfg");
        need(ckpt, "ckpt");
        const ExperimentConfig& c = cfg->cfg;
        const Checkpoint& k = ckpt->ckpt;
        check_same_env(c.env, k.env);
        check_task(task, k.env.num_tasks);
        const TaskContext ctx(task, k.env.num_tasks);
        EvalResult r;
        if (mask != nullptr) {
            r = evaluate_greedy(mask->mask.subnetwork(k).masked_weights, k.env, ctx, c.eval.episodes, c.eval.seed);
        } else {
            r = evaluate_greedy(k.weights, k.env, ctx, c.eval.episodes, c.eval.seed);
        }
        if (normalized_return != nullptr) *normalized_return = r.normalized_return;
        if (mean_return != nullptr) *mean_return = r.mean_return;
    });
}

}  // extern "C"
