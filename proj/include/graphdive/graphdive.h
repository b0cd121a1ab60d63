#ifndef GRAPHDIVE_H
#define GRAPHDIVE_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define GD_API __declspec(dllexport)
#else
#define GD_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum gd_status {
  GD_OK = 0,
  GD_ERR_INVALID_ARGUMENT = 1,
  GD_ERR_IO = 2,
  GD_ERR_FORMAT = 3,
  GD_ERR_NUMERIC = 4,
  GD_ERR_INTERNAL = 5
} gd_status;

typedef enum gd_split { GD_SPLIT_TRAIN = 0, GD_SPLIT_VALID = 1, GD_SPLIT_TEST = 2 } gd_split;

typedef struct gd_dataset gd_dataset;
typedef struct gd_config gd_config;
typedef struct gd_checkpoint gd_checkpoint;

/* Message of the last failed call on this thread; empty if none. */
GD_API const char* gd_last_error(void);
GD_API const char* gd_version(void);

/* Datasets */
GD_API gd_status gd_dataset_load(const char* path, gd_dataset** out);
GD_API gd_status gd_dataset_save(const gd_dataset* ds, const char* path);
/* spec_text is "key = value" lines; see the synth spec keys in the README. */
GD_API gd_status gd_dataset_synth(const char* spec_text, gd_dataset** out);
GD_API size_t gd_dataset_size(const gd_dataset* ds);
GD_API size_t gd_dataset_tasks(const gd_dataset* ds);
GD_API void gd_dataset_free(gd_dataset* ds);

/* Training configuration */
GD_API gd_config* gd_config_new(void);
GD_API gd_status gd_config_parse(const char* text, gd_config** out);
/* Applies one "key = value" assignment. */
GD_API gd_status gd_config_set(gd_config* cfg, const char* key, const char* value);
/* Writes the config text into buf (NUL-terminated, truncated to cap) and
 * stores the full length in *len. */
GD_API gd_status gd_config_text(const gd_config* cfg, char* buf, size_t cap, size_t* len);
GD_API size_t gd_config_epochs(const gd_config* cfg);
GD_API void gd_config_free(gd_config* cfg);

/* Called after every epoch; valid_auc is NaN when undefined. */
typedef void (*gd_epoch_fn)(size_t epoch, double train_loss, double valid_auc, double seconds,
                            void* user);

GD_API gd_status gd_train(const gd_config* cfg, const gd_dataset* ds, gd_epoch_fn cb, void* user,
                          gd_checkpoint** out);
GD_API gd_status gd_resume(const gd_checkpoint* from, const gd_dataset* ds, size_t total_epochs,
                           gd_epoch_fn cb, void* user, gd_checkpoint** out);

/* Checkpoints */
GD_API gd_status gd_checkpoint_save(const gd_checkpoint* ck, const char* path);
GD_API gd_status gd_checkpoint_load(const char* path, gd_checkpoint** out);
GD_API size_t gd_checkpoint_epoch(const gd_checkpoint* ck);
GD_API void gd_checkpoint_free(gd_checkpoint* ck);

/* Reports are written atomically to `path` as tab-separated text. The
 * optional *mean_auc receives the aggregate AUC (NaN if undefined). */
GD_API gd_status gd_evaluate(const gd_checkpoint* ck, const gd_dataset* ds, gd_split split,
                             const char* path, double* mean_auc);
GD_API gd_status gd_analyze_experts(const gd_checkpoint* ck, const gd_dataset* ds, gd_split split,
                                    const char* path);
GD_API gd_status gd_sweep(const gd_config* cfg, const gd_dataset* ds, size_t threads,
                          const char* path);

/* Runs the gradient-check suite. *passed is 1 when every case is within the
 * configured tolerance; *worst receives the largest relative error. */
GD_API gd_status gd_gradcheck(const gd_config* cfg, int* passed, double* worst);

#ifdef __cplusplus
}
#endif

#endif
