#ifndef PROTOMAP_PROTOMAP_H
#define PROTOMAP_PROTOMAP_H

/* C interface to the prototype-learning toolkit. All entry points return a
 * pm_status; on failure pm_last_error() describes what went wrong for the
 * calling thread. Handles are opaque and freed with their pm_*_free call. */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum pm_status {
    PM_OK = 0,
    PM_ERR_INVALID_ARGUMENT = 1,
    PM_ERR_DIMENSION = 2,
    PM_ERR_VALIDATION = 3,
    PM_ERR_USAGE = 4,
    PM_ERR_TRAINING = 5,
    PM_ERR_IO = 6,
    PM_ERR_PARSE = 7,
    PM_ERR_METRIC_UNDEFINED = 8,
    PM_ERR_INTERNAL = 9
} pm_status;

typedef struct pm_config pm_config;
typedef struct pm_cohort pm_cohort;
typedef struct pm_adpen pm_adpen;
typedef struct pm_estimator pm_estimator;

const char* pm_status_name(pm_status status);

/* thread-local message for the most recent failure */
const char* pm_last_error(void);

void pm_string_free(char* text);

/* ---- configuration ---- */

pm_status pm_config_default(pm_config** out);

/* parses the JSON config file and applies PROTOMAP_* environment overrides */
pm_status pm_config_load(const char* path, pm_config** out);

/* dotted key ("adpen.epochs") with a JSON-encoded or plain string value */
pm_status pm_config_set(pm_config* config, const char* dotted_key, const char* value);

const char* pm_config_schema(void);

void pm_config_free(pm_config* config);

/* ---- cohorts ---- */

/* generates from the config spec, or loads cohort.path when it is set */
pm_status pm_cohort_open(const pm_config* config, uint64_t seed, pm_cohort** out);

pm_status pm_cohort_load(const char* path, int num_stages, pm_cohort** out);
pm_status pm_cohort_save(const pm_cohort* cohort, const char* path);
size_t pm_cohort_size(const pm_cohort* cohort);
void pm_cohort_free(pm_cohort* cohort);

/* ---- prototype model ---- */

/* trains on every cohort row (library-level entry; the CLI workflow uses
 * pm_run_train_adpen, which holds out folds) */
pm_status pm_adpen_train(const pm_config* config, const pm_cohort* cohort, uint64_t seed,
                         pm_adpen** out);
pm_status pm_adpen_save(const pm_adpen* model, const char* path);
pm_status pm_adpen_load(const char* path, pm_adpen** out);

/* inference-mode latent of a composite clinical vector */
pm_status pm_adpen_encode(const pm_adpen* model, const double* clinical, size_t clinical_len,
                          double* latent_out, size_t latent_len);

/* pseudo-likelihood map of a composite clinical vector; map_out has K slots */
pm_status pm_adpen_pseudo_map(const pm_adpen* model, const double* clinical,
                              size_t clinical_len, double* map_out, size_t map_len);

size_t pm_adpen_num_prototypes(const pm_adpen* model);
void pm_adpen_free(pm_adpen* model);

/* ---- estimator ---- */

pm_status pm_estimator_load(const char* path, pm_estimator** out);

/* estimated likelihood map from imaging features; map_out has K slots */
pm_status pm_estimator_estimate(const pm_estimator* model, const double* features,
                                size_t features_len, double* map_out, size_t map_len);

size_t pm_estimator_map_len(const pm_estimator* model);
void pm_estimator_free(pm_estimator* model);

/* ---- command-level operations (the CLI subcommands) ---- */

/* writes the cohort NDJSON to out_path, or to the config's cohort.save_path
 * (default "<output_dir>/cohort.ndjson") when out_path is NULL */
pm_status pm_run_generate(const pm_config* config, uint64_t seed, const char* out_path);

/* trains on fold 0 of the configured stratified k-fold and writes adpen.json
 * plus curves_adpen.csv under out_dir (NULL uses the config output_dir) */
pm_status pm_run_train_adpen(const pm_config* config, uint64_t seed, const char* out_dir);

/* requires adpen.json in out_dir (refuses to start without it), reconstructs
 * that checkpoint's fold split, trains the estimator + consistency encoder,
 * writes estimator.json and curves_estimator.csv */
pm_status pm_run_train_estimator(const pm_config* config, uint64_t seed, const char* out_dir);

/* full cross-validated pipeline; writes per-fold artifacts and metrics files
 * under out_dir; when metrics_json is non-NULL it receives the report (free
 * with pm_string_free) */
pm_status pm_run_evaluate(const pm_config* config, uint64_t seed, const char* out_dir,
                          char** metrics_json);

/* requires adpen.json and estimator.json in out_dir; explains the configured
 * query subject and writes explainable_map.json, morph_diffs.csv,
 * selection.json */
pm_status pm_run_explain(const pm_config* config, uint64_t seed, const char* out_dir);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* PROTOMAP_PROTOMAP_H */
