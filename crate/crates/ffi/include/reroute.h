/* C interface for the rerouting attack workbench.
 *
 * Handle-based: load a configuration, run the pipeline, read metrics off the
 * result handle. Every call reports an rr_status; rr_last_error() describes
 * the most recent failure on the calling thread. Strings returned as char*
 * are owned by the caller and must be released with rr_string_free().
 */

#ifndef REROUTE_H
#define REROUTE_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum rr_status {
  RR_STATUS_OK = 0,
  RR_STATUS_ERROR = 1,
  RR_STATUS_INVALID_CONFIG = 2,
  RR_STATUS_BUDGET_EXHAUSTED = 3,
  RR_STATUS_NUMERIC = 4,
  RR_STATUS_NULL_ARGUMENT = 5,
  RR_STATUS_INVALID_UTF8 = 6,
  RR_STATUS_UNKNOWN_METRIC = 7,
} rr_status;

/* Opaque handles. */
typedef struct rr_config rr_config;
typedef struct rr_run_result rr_run_result;

/* Most recent failure message on this thread; valid until the next failing
 * call on the same thread. Never NULL. */
const char *rr_last_error(void);

/* Loads and fully validates a configuration file. */
rr_status rr_config_load(const char *path, rr_config **out);
void rr_config_free(rr_config *config);

rr_status rr_config_set_out_dir(rr_config *config, const char *out_dir);
rr_status rr_config_set_seed(rr_config *config, uint64_t seed);

/* Runs the full pipeline; on success *out holds a result handle. */
rr_status rr_run_pipeline(const rr_config *config, rr_run_result **out);
void rr_run_result_free(rr_run_result *result);

/* Scalar metrics: "eval_in.asr", "eval_in.clean_asr", "eval_in.delta",
 * "eval_ood.asr", "eval_ood.clean_asr", "eval_ood.delta", "cost_ratio". */
rr_status rr_run_result_metric(const rr_run_result *result, const char *name,
                               double *value);

/* Caller-owned strings; release with rr_string_free. */
char *rr_run_result_suffix(const rr_run_result *result);
char *rr_run_result_summary_json(const rr_run_result *result);
char *rr_run_result_dir(const rr_run_result *result);
void rr_string_free(char *text);

#ifdef __cplusplus
}
#endif

#endif /* REROUTE_H */
