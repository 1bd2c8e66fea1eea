#ifndef NGA_C_H
#define NGA_C_H

/*
 * C interface to the NGA auction library.
 *
 * Every fallible call returns an nga_status. On failure the thread-local
 * message from nga_last_error() describes the cause; it stays valid until the
 * next failing call on the same thread. Strings returned through `char**`
 * out-parameters are owned by the caller and released with nga_string_free().
 *
 * Handles are opaque. A config handle holds the full pipeline settings; a
 * model handle holds a generator and an evaluator loaded from checkpoints.
 * Handles are not thread-safe; use one per thread or synchronize externally.
 */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define NGA_API __declspec(dllexport)
#else
#define NGA_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum nga_status {
  NGA_OK = 0,
  NGA_ERR_ARGUMENT = 1,
  NGA_ERR_CONFIG = 2,
  NGA_ERR_INFEASIBLE = 3,
  NGA_ERR_NUMERIC = 4,
  NGA_ERR_CONTRACT = 5,
  NGA_ERR_IO = 6,
  NGA_ERR_RUNTIME = 7
} nga_status;

typedef struct nga_config nga_config;
typedef struct nga_models nga_models;

NGA_API const char* nga_version(void);
NGA_API const char* nga_last_error(void);
NGA_API const char* nga_status_name(nga_status status);
NGA_API void nga_string_free(char* text);

/* Defaults, optionally overlaid with a `key = value` file (path may be NULL). */
NGA_API nga_status nga_config_create(const char* path, nga_config** out);
NGA_API void nga_config_destroy(nga_config* config);
NGA_API nga_status nga_config_set(nga_config* config, const char* key, const char* value);
NGA_API nga_status nga_config_get(const nga_config* config, const char* key, char** out_value);
NGA_API nga_status nga_config_text(const nga_config* config, char** out_text);

/* Logged dataset (JSON lines) of data.train_requests records under the uGSP
 * logging policy with epsilon exploration. */
NGA_API nga_status nga_gen_data(const nga_config* config, const char* dataset_path);

/* Stage one. Writes the frozen evaluator checkpoint and the generator it was
 * trained against; `report_csv` may be NULL. */
NGA_API nga_status nga_train_evaluator(const nga_config* config, const char* dataset_path,
                                       const char* evaluator_out, const char* generator_out,
                                       const char* report_csv);

/* Stage two. Starts from `generator_in`, keeps the evaluator fixed. */
NGA_API nga_status nga_train_generator(const nga_config* config, const char* dataset_path,
                                       const char* generator_in, const char* evaluator_in,
                                       const char* generator_out, const char* report_csv);

NGA_API nga_status nga_models_load(const char* generator_path, const char* evaluator_path, nga_models** out);
NGA_API void nga_models_destroy(nga_models* models);

/* Request JSON in; out: every beam slate with its log-probability and reward,
 * plus the winner with payments. */
NGA_API nga_status nga_generate_json(const nga_models* models, const nga_config* config,
                                     const char* request_json, char** out_json);
/* Request plus {"slates": [[ids], ...]} (or a single {"slate": [ids]}) in;
 * out: per-slate tower outputs and rewards, and the winning index. */
NGA_API nga_status nga_evaluate_json(const nga_models* models, const char* request_json,
                                     const char* slates_json, char** out_json);

/* Serves `requests` fresh requests (seed exp.seed) with mechanism `name` and
 * returns a metrics JSON object. `models` may be NULL for model-free mechanisms.
 * `outcomes_path` (JSON lines) may be NULL. */
NGA_API nga_status nga_serve(const nga_config* config, const nga_models* models, const char* mechanism,
                             size_t requests, const char* outcomes_path, char** out_json);

/* IC regret (Psi, over the mech.grid misreports) and IR violations. Audits the
 * requests of `dataset_path` when given, else fresh requests; `requests` caps
 * the count (0 means the whole dataset). */
NGA_API nga_status nga_audit(const nga_config* config, const nga_models* models, const char* mechanism,
                             const char* dataset_path, size_t requests, char** out_json);

/* Non-autoregressive vs autoregressive decode timing. `models` may be NULL,
 * in which case a freshly initialised generator is timed. */
NGA_API nga_status nga_bench(const nga_config* config, const nga_models* models, size_t requests,
                             char** out_json);

/* Full pipeline; writes results.csv and manifest.json into `output_dir`. */
NGA_API nga_status nga_run_experiment(const nga_config* config, const char* output_dir, char** out_csv);
NGA_API nga_status nga_run_from_manifest(const char* manifest_path, const char* output_dir, char** out_csv);

/* Validates a results CSV and renders it as an aligned text table. */
NGA_API nga_status nga_report(const char* results_csv, char** out_text);

#ifdef __cplusplus
}
#endif

#endif
