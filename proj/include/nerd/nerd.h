/* C interface to the NeRD segmentation toolkit.
 *
 * Every function returns a nerd_status. On failure a message is available
 * from nerd_last_error() on the calling thread until the next call.
 * Strings returned through char** are heap-allocated JSON documents and must
 * be released with nerd_free_string().
 */
#ifndef NERD_H
#define NERD_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define NERD_API __declspec(dllexport)
#else
#define NERD_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum nerd_status {
  NERD_OK = 0,
  NERD_E_INVALID_ARGUMENT = 1,
  NERD_E_SHAPE = 2,
  NERD_E_CONTRACT = 3,
  NERD_E_IO = 4,
  NERD_E_CONFIG = 5,
  NERD_E_GENERATION = 6,
  NERD_E_NUMERIC = 7,
  NERD_E_INTERNAL = 8
} nerd_status;

typedef struct nerd_model nerd_model;

/* Receives one progress line per call (e.g. per training epoch). */
typedef void (*nerd_log_fn)(const char* line, void* user);

NERD_API const char* nerd_version(void);
/* Short machine name such as "config" or "io". */
NERD_API const char* nerd_status_name(nerd_status status);
NERD_API const char* nerd_last_error(void);
NERD_API void nerd_free_string(char* s);
/* Process-wide; pass NULL to disable. */
NERD_API void nerd_set_log_callback(nerd_log_fn fn, void* user);

/* ---- commands; relative paths in requests resolve against base_dir ---- */

/* Reads a prepare manifest and writes the sample directory (idempotent). */
NERD_API nerd_status nerd_prepare(const char* manifest_path, const char* out_dir, char** result_json);
/* config_json may be NULL for the defaults. */
NERD_API nerd_status nerd_synth(const char* config_json, const char* out_dir, char** result_json);
/* Experiment config JSON. stop_after_epoch < 0 trains to completion;
 * otherwise each seed stops after that many epochs and can be resumed. */
NERD_API nerd_status nerd_train(const char* config_json, const char* base_dir, int stop_after_epoch,
                                char** result_json);
/* {"checkpoint" | "predictions", "dataset", "split", "evaluation", "out"} */
NERD_API nerd_status nerd_evaluate(const char* request_json, const char* base_dir, char** result_json);
/* {"checkpoint" | "model" + "seed", "dataset", "split", "band", "colormap", "out"} */
NERD_API nerd_status nerd_diagnose(const char* request_json, const char* base_dir, char** result_json);
/* {"runs": [dirs], "out", "slices"} */
NERD_API nerd_status nerd_report(const char* request_json, const char* base_dir, char** result_json);

/* ---- models ---- */

/* Model config JSON ({"preset" | "filters", "head", ...}). */
NERD_API nerd_status nerd_model_create(const char* config_json, uint64_t seed, nerd_model** out);
NERD_API nerd_status nerd_model_load(const char* path, nerd_model** out);
NERD_API nerd_status nerd_model_save(const nerd_model* model, const char* path);
NERD_API void nerd_model_free(nerd_model* model);
NERD_API nerd_status nerd_model_param_count(const nerd_model* model, size_t* out);
NERD_API nerd_status nerd_model_config(const nerd_model* model, char** config_json);
/* images: batch x channels x height x width floats; logits: batch x height x width. */
NERD_API nerd_status nerd_model_predict(nerd_model* model, const float* images, int batch, int channels,
                                        int height, int width, float* logits);

/* ---- metrics and schedule ---- */

/* Masks are depth x height x width bytes (non-zero = foreground). */
NERD_API nerd_status nerd_dice(const uint8_t* pred, const uint8_t* gt, int depth, int height, int width,
                               double* out);
/* Full per-volume metrics as JSON; spacing is (depth, height, width) in mm. */
NERD_API nerd_status nerd_evaluate_masks(const uint8_t* pred, const uint8_t* gt, int depth, int height, int width,
                                         const double spacing[3], int connectivity, int ldice_factor,
                                         char** result_json);
/* Learning rate of `epoch` under a train config JSON (NULL = defaults). */
NERD_API nerd_status nerd_lr_at(const char* train_config_json, int epoch, double* out);

#ifdef __cplusplus
}
#endif

#endif /* NERD_H */
