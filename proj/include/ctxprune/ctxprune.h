/* C interface to ctxprune: train a context-conditioned DQN on the coloured
 * grid world, learn one binary weight mask per task, and analyse how the
 * masks share weights.
 *
 * Every function returns a ctxprune_status. On failure the message is
 * available from ctxprune_last_error() on the same thread until the next
 * call. Handles are opaque and owned by the caller; free them with the
 * matching *_free function (NULL is accepted). */
#ifndef CTXPRUNE_H
#define CTXPRUNE_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(CTXPRUNE_BUILDING_LIBRARY)
#    define CTXPRUNE_API __declspec(dllexport)
#  else
#    define CTXPRUNE_API __declspec(dllimport)
#  endif
#else
#  define CTXPRUNE_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ctxprune_status {
    CTXPRUNE_OK = 0,
    CTXPRUNE_INVALID_ARGUMENT = 1,
    CTXPRUNE_CONFIG = 2,   /* config value missing, mistyped or out of range */
    CTXPRUNE_IO = 3,       /* file could not be read or written */
    CTXPRUNE_FORMAT = 4,   /* file is not a valid checkpoint/mask/report */
    CTXPRUNE_MISMATCH = 5, /* artifacts do not belong together */
    CTXPRUNE_NUMERIC = 6,  /* NaN/Inf during training */
    CTXPRUNE_INTERNAL = 7
} ctxprune_status;

typedef struct ctxprune_config ctxprune_config;
typedef struct ctxprune_checkpoint ctxprune_checkpoint;
typedef struct ctxprune_train_log ctxprune_train_log;
typedef struct ctxprune_mask ctxprune_mask;
typedef struct ctxprune_mask_log ctxprune_mask_log;
typedef struct ctxprune_report ctxprune_report;

/* Which seed ctxprune_config_set_seed overrides. */
typedef enum ctxprune_seed_kind {
    CTXPRUNE_SEED_ALL = 0,
    CTXPRUNE_SEED_ENV = 1,
    CTXPRUNE_SEED_DQN = 2,
    CTXPRUNE_SEED_MASK = 3,
    CTXPRUNE_SEED_EVAL = 4
} ctxprune_seed_kind;

/* Called after each logged evaluation during training. */
typedef void (*ctxprune_progress_fn)(long step, int task_index, double normalized_return, void* user);

CTXPRUNE_API const char* ctxprune_last_error(void);
CTXPRUNE_API const char* ctxprune_version(void);
CTXPRUNE_API const char* ctxprune_status_name(ctxprune_status status);

/* ---- config ---- */
CTXPRUNE_API ctxprune_status ctxprune_config_load(const char* path, ctxprune_config** out);
CTXPRUNE_API ctxprune_status ctxprune_config_parse(const char* json_text, ctxprune_config** out);
CTXPRUNE_API ctxprune_status ctxprune_config_default(ctxprune_config** out);
CTXPRUNE_API void ctxprune_config_free(ctxprune_config* cfg);
CTXPRUNE_API ctxprune_status ctxprune_config_num_tasks(const ctxprune_config* cfg, int* out);
/* Copies the NUL-terminated output_dir into buf. With buf == NULL only the
 * required size (including the terminator) is written to *size. */
CTXPRUNE_API ctxprune_status ctxprune_config_output_dir(const ctxprune_config* cfg, char* buf, size_t* size);
CTXPRUNE_API ctxprune_status ctxprune_config_task_name(const ctxprune_config* cfg, int task, char* buf,
                                                       size_t* size);
CTXPRUNE_API ctxprune_status ctxprune_config_set_seed(ctxprune_config* cfg, ctxprune_seed_kind which,
                                                      uint64_t seed);
CTXPRUNE_API ctxprune_status ctxprune_config_set_eval_episodes(ctxprune_config* cfg, int episodes);
/* Full config as JSON, defaults included. Same buffer protocol as above. */
CTXPRUNE_API ctxprune_status ctxprune_config_dump(const ctxprune_config* cfg, char* buf, size_t* size);

/* ---- training ---- */
CTXPRUNE_API ctxprune_status ctxprune_train(const ctxprune_config* cfg, ctxprune_checkpoint** out,
                                            ctxprune_train_log** log, ctxprune_progress_fn progress,
                                            void* user);
CTXPRUNE_API void ctxprune_train_log_free(ctxprune_train_log* log);
CTXPRUNE_API ctxprune_status ctxprune_train_log_save_csv(const ctxprune_train_log* log, const char* path);

/* ---- checkpoints ---- */
CTXPRUNE_API ctxprune_status ctxprune_checkpoint_load(const char* path, ctxprune_checkpoint** out);
CTXPRUNE_API ctxprune_status ctxprune_checkpoint_save(const ctxprune_checkpoint* ckpt, const char* path);
CTXPRUNE_API void ctxprune_checkpoint_free(ctxprune_checkpoint* ckpt);
CTXPRUNE_API ctxprune_status ctxprune_checkpoint_num_weights(const ctxprune_checkpoint* ckpt, size_t* out);
CTXPRUNE_API ctxprune_status ctxprune_checkpoint_num_tasks(const ctxprune_checkpoint* ckpt, int* out);
CTXPRUNE_API ctxprune_status ctxprune_checkpoint_id(const ctxprune_checkpoint* ckpt, char* buf, size_t* size);
/* Normalized return per task recorded at the end of training. */
CTXPRUNE_API ctxprune_status ctxprune_checkpoint_final_return(const ctxprune_checkpoint* ckpt, int task,
                                                              double* out);

/* ---- masks ---- */
/* Learns the mask for one task of the checkpoint. The checkpoint's
 * environment must match the config's. */
CTXPRUNE_API ctxprune_status ctxprune_prune(const ctxprune_config* cfg, const ctxprune_checkpoint* ckpt,
                                            int task, ctxprune_mask** out, ctxprune_mask_log** log);
CTXPRUNE_API ctxprune_status ctxprune_mask_load(const char* path, ctxprune_mask** out);
CTXPRUNE_API ctxprune_status ctxprune_mask_save(const ctxprune_mask* mask, const char* path);
CTXPRUNE_API void ctxprune_mask_free(ctxprune_mask* mask);
CTXPRUNE_API ctxprune_status ctxprune_mask_task(const ctxprune_mask* mask, int* out);
CTXPRUNE_API ctxprune_status ctxprune_mask_density(const ctxprune_mask* mask, double* out);
CTXPRUNE_API void ctxprune_mask_log_free(ctxprune_mask_log* log);
CTXPRUNE_API ctxprune_status ctxprune_mask_log_save_csv(const ctxprune_mask_log* log, const char* path);

/* ---- analysis ---- */
/* Fails with CTXPRUNE_MISMATCH if any mask was learned on another checkpoint. */
CTXPRUNE_API ctxprune_status ctxprune_analyze(const ctxprune_config* cfg, const ctxprune_checkpoint* ckpt,
                                              const ctxprune_mask* const* masks, size_t num_masks,
                                              ctxprune_report** out);
CTXPRUNE_API void ctxprune_report_free(ctxprune_report* report);
CTXPRUNE_API ctxprune_status ctxprune_report_save_json(const ctxprune_report* report, const char* path);
CTXPRUNE_API ctxprune_status ctxprune_report_save_matrix_csv(const ctxprune_report* report, const char* path);
/* Human-readable summary table. Same buffer protocol as above. */
CTXPRUNE_API ctxprune_status ctxprune_report_summary(const ctxprune_report* report, char* buf, size_t* size);

/* ---- evaluation ---- */
/* Greedy evaluation of the full network (mask == NULL) or of a subnetwork
 * on one task, using the config's eval episodes and seed. */
CTXPRUNE_API ctxprune_status ctxprune_evaluate(const ctxprune_config* cfg, const ctxprune_checkpoint* ckpt,
                                               const ctxprune_mask* mask, int task, double* normalized_return,
                                               double* mean_return);

#ifdef __cplusplus
}
#endif

#endif /* CTXPRUNE_H */
