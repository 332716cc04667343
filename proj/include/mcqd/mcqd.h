#ifndef MCQD_MCQD_H
#define MCQD_MCQD_H

#include <stddef.h>
#include <stdint.h>

#if defined(MCQD_BUILDING_LIBRARY)
#define MCQD_API __attribute__((visibility("default")))
#else
#define MCQD_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes. The first four double as CLI exit codes. */
typedef enum mcqd_status {
  MCQD_OK = 0,
  MCQD_ERR_USAGE = 1,
  MCQD_ERR_DATA = 2,
  MCQD_ERR_PROVIDER = 3,
  MCQD_ERR_NUMERICAL = 4,
  MCQD_ERR_INTERNAL = 5
} mcqd_status;

typedef struct mcqd_pipeline mcqd_pipeline;

typedef void (*mcqd_log_fn)(const char* message, void* user);

typedef struct mcqd_pipeline_options {
  const char* config_path; /* NULL: built-in defaults, paths relative to cwd */
  const char* out_dir;     /* required */
  int override_seed;       /* nonzero: use `seed` instead of the config value */
  uint64_t seed;
  mcqd_log_fn log; /* may be NULL */
  void* log_user;
} mcqd_pipeline_options;

MCQD_API const char* mcqd_version(void);

/* Message of the last failed call on this thread; "" if none. */
MCQD_API const char* mcqd_last_error(void);

/* Nonzero if `name` is a stage accepted by mcqd_pipeline_run. */
MCQD_API int mcqd_is_stage(const char* name);

/* Loads the config and locks out_dir. On success *out owns the lock until
   mcqd_pipeline_close. */
MCQD_API mcqd_status mcqd_pipeline_open(const mcqd_pipeline_options* options, mcqd_pipeline** out);

/* stage: ingest, fit-irt, fit-lca, profile, personas, simulate, features,
   evaluate, synth or all. */
MCQD_API mcqd_status mcqd_pipeline_run(mcqd_pipeline* pipeline, const char* stage);

MCQD_API void mcqd_pipeline_close(mcqd_pipeline* pipeline);

/* Writes the effective config as JSON into buf (NUL-terminated) and the full
   length, excluding the NUL, into *needed. Truncates when buf is too small. */
MCQD_API mcqd_status mcqd_pipeline_config_json(const mcqd_pipeline* pipeline, char* buf, size_t size, size_t* needed);

/* sigma(alpha * (theta - beta)) */
MCQD_API double mcqd_irt_probability(double theta, double alpha, double beta);

/* out[c] = accuracy[c] - mean(accuracy) for c < k. */
MCQD_API mcqd_status mcqd_deviation_scores(const double* accuracy, size_t k, double* out);

/* Divides four non-negative values by their sum. */
MCQD_API mcqd_status mcqd_normalize_row(const double raw[4], double out[4]);

/* Ridge with unpenalized intercept. x is n x p row-major; weights has p slots. */
MCQD_API mcqd_status mcqd_ridge_fit(const double* x, const double* y, size_t n, size_t p, double lambda,
                                    double* weights, double* intercept);

#ifdef __cplusplus
}
#endif

#endif
