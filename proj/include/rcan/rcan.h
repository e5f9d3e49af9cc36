#ifndef RCAN_RCAN_H
#define RCAN_RCAN_H

/* C interface to the residual channel attention segmentation library.
 *
 * Every call returns an rcan_status. On failure a message describing the
 * last error on the calling thread is available from rcan_last_error().
 * Strings handed out through char** parameters are owned by the caller and
 * released with rcan_string_free. Configurations travel as JSON text with
 * the sections "model", "train" and "data". */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define RCAN_API __declspec(dllexport)
#else
#define RCAN_API __attribute__((visibility("default")))
#endif

typedef enum rcan_status {
  RCAN_OK = 0,
  RCAN_SHAPE_MISMATCH = 1,
  RCAN_EMPTY_SHAPE = 2,
  RCAN_BROADCAST_ERROR = 3,
  RCAN_NOT_SCALAR = 4,
  RCAN_DETACHED_TENSOR = 5,
  RCAN_NON_FINITE_OUTPUT = 6,
  RCAN_INVALID_ARGUMENT = 7,
  RCAN_OUTPUT_COLLAPSED = 8,
  RCAN_ODD_EXTENT = 9,
  RCAN_EVEN_KERNEL = 10,
  RCAN_INDIVISIBLE_GROUPS = 11,
  RCAN_BOTH_BRANCHES_DISABLED = 12,
  RCAN_CONFIG_INVALID = 13,
  RCAN_BAD_MAGIC = 14,
  RCAN_UNSUPPORTED_DATATYPE = 15,
  RCAN_TRUNCATED_FILE = 16,
  RCAN_IO_ERROR = 17,
  RCAN_EMPTY_BRAIN_MASK = 18,
  RCAN_PATCH_LARGER_THAN_VOLUME = 19,
  RCAN_TOO_FEW_CASES = 20,
  RCAN_EXTENT_TOO_SMALL = 21,
  RCAN_NON_FINITE_LOSS = 22,
  RCAN_INVALID_LABEL_VALUE = 23,
  RCAN_BAD_CHECKPOINT = 24,
  RCAN_BAD_HEADER = 25,
  RCAN_INTERNAL = 99
} rcan_status;

typedef struct rcan_model rcan_model;

RCAN_API const char* rcan_version(void);
RCAN_API const char* rcan_status_name(rcan_status status);
/* Message for the most recent failure on this thread, "" if none. */
RCAN_API const char* rcan_last_error(void);
RCAN_API void rcan_string_free(char* s);

/* Fully resolved configuration: base_json (may be NULL for defaults) with
 * each "dot.path=value" override applied in order. */
RCAN_API rcan_status rcan_config_resolve(const char* base_json, const char* const* overrides, size_t n_overrides,
                                         char** resolved_json);

/* Models. config_json may be a full run configuration or NULL. */
RCAN_API rcan_status rcan_model_create(const char* config_json, uint64_t seed, rcan_model** out);
RCAN_API rcan_status rcan_model_load(const char* checkpoint_path, rcan_model** out);
RCAN_API rcan_status rcan_model_save(const rcan_model* model, const char* checkpoint_path);
RCAN_API void rcan_model_destroy(rcan_model* model);
RCAN_API rcan_status rcan_model_parameter_count(const rcan_model* model, int64_t* count);
/* JSON with the model config, parameter names and shapes, and counts. */
RCAN_API rcan_status rcan_model_describe(const rcan_model* model, char** json);
/* input: 1 x in_channels x d x h x w floats; logits: 1 x classes x d x h x w. */
RCAN_API rcan_status rcan_model_forward(const rcan_model* model, const float* input, int64_t d, int64_t h, int64_t w,
                                        float* logits, size_t logits_len);

/* Writes cases synthetic NIfTI cases plus manifest.json into out_dir. */
RCAN_API rcan_status rcan_synth(const char* out_dir, int cases, int extent, uint64_t seed);

/* Trains on the manifest; writes config.json, history.csv, checkpoint.rcan
 * into out_dir. *out may be NULL when the trained model is not needed. */
RCAN_API rcan_status rcan_train(const char* config_json, const char* manifest_path, const char* out_dir,
                                rcan_model** out);

/* Evaluates every manifest case; writes metrics_csv (may be NULL) and
 * returns the aggregate as JSON (summary_json may be NULL). */
RCAN_API rcan_status rcan_eval(const rcan_model* model, const char* manifest_path, int normalize,
                               const char* metrics_csv, char** summary_json);

/* Predicts a label map from four modality files (t1, t1ce, t2, flair). */
RCAN_API rcan_status rcan_infer(const rcan_model* model, const char* const modality_paths[4], int normalize,
                                const char* out_label_path);

/* Finite-difference check of every differentiable op. report_json lists
 * {op, max_rel_error, coordinates, passed}; *all_passed is 1 or 0. */
RCAN_API rcan_status rcan_gradcheck(uint64_t seed, char** report_json, int* all_passed);

/* Trains and evaluates the full, no-max, no-avg and no-residual variants
 * under out_dir/<name>/ and writes out_dir/summary.csv. */
RCAN_API rcan_status rcan_ablate(const char* config_json, const char* manifest_path, const char* out_dir,
                                 char** summary_json);

/* Axial PGM slices per case; model may be NULL to skip predictions.
 * max_cases < 0 exports every case. */
RCAN_API rcan_status rcan_export_slices(const char* manifest_path, const rcan_model* model, int normalize,
                                        const char* out_dir, int64_t max_cases, int64_t* images_written);

#ifdef __cplusplus
}
#endif

#endif /* RCAN_RCAN_H */
