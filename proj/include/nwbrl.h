/* C interface to the nwbrl library. All functions return an nwbrl_status;
 * on failure nwbrl_last_error() describes the problem (per thread). Matrices
 * are passed as row-major arrays of doubles. */
#ifndef NWBRL_H
#define NWBRL_H

#include <stddef.h>
#include <stdint.h>

#if defined(NWBRL_BUILDING_LIBRARY)
#define NWBRL_API __attribute__((visibility("default")))
#else
#define NWBRL_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum nwbrl_status {
  NWBRL_OK = 0,
  NWBRL_ERR_INVALID_ARGUMENT = 1,
  NWBRL_ERR_DIMENSION_MISMATCH = 2,
  NWBRL_ERR_NOT_POSITIVE_DEFINITE = 3,
  NWBRL_ERR_INVALID_DOF = 4,
  NWBRL_ERR_DEGENERATE_DENOMINATOR = 5,
  NWBRL_ERR_NON_FINITE = 6,
  NWBRL_ERR_EPISODE_EXHAUSTED = 7,
  NWBRL_ERR_NOT_ORACLE_FAMILY = 8,
  NWBRL_ERR_INSUFFICIENT_DATA = 9,
  NWBRL_ERR_CHECKSUM = 10,
  NWBRL_ERR_IO = 11,
  NWBRL_ERR_CONFIG = 12,
  NWBRL_ERR_BUFFER_TOO_SMALL = 13,
  NWBRL_ERR_INTERNAL = 14
} nwbrl_status;

typedef enum nwbrl_field {
  NWBRL_FIELD_M = 0,     /* D x P */
  NWBRL_FIELD_XI = 1,    /* D x D */
  NWBRL_FIELD_XI_INV = 2,
  NWBRL_FIELD_OMEGA = 3  /* P x P */
} nwbrl_field;

typedef struct nwbrl_belief nwbrl_belief;
typedef struct nwbrl_run nwbrl_run;

typedef void (*nwbrl_line_fn)(const char* line, void* user);

NWBRL_API const char* nwbrl_version(void);
NWBRL_API const char* nwbrl_last_error(void);
NWBRL_API const char* nwbrl_status_string(nwbrl_status status);
/* 1 for failures that indicate numerical breakdown, 0 otherwise. */
NWBRL_API int nwbrl_status_is_numerical(nwbrl_status status);

/* Normal-Wishart beliefs */
NWBRL_API nwbrl_status nwbrl_belief_create(size_t d, size_t p, double m0, double xi0,
                                           double omega0, double nu0, nwbrl_belief** out);
NWBRL_API nwbrl_status nwbrl_belief_clone(const nwbrl_belief* b, nwbrl_belief** out);
NWBRL_API void nwbrl_belief_destroy(nwbrl_belief* b);
NWBRL_API nwbrl_status nwbrl_belief_dims(const nwbrl_belief* b, size_t* d, size_t* p);
NWBRL_API nwbrl_status nwbrl_belief_nu(const nwbrl_belief* b, double* nu);
/* Copies a field; `capacity` is the number of doubles available at `out`. */
NWBRL_API nwbrl_status nwbrl_belief_get(const nwbrl_belief* b, nwbrl_field field, double* out,
                                        size_t capacity);
NWBRL_API nwbrl_status nwbrl_belief_online_update(nwbrl_belief* b, const double* c,
                                                  const double* y);
NWBRL_API nwbrl_status nwbrl_belief_batch_update(nwbrl_belief* b, size_t n, const double* c,
                                                 const double* y);
/* Marginal log-likelihood of (C, Y) under `prior`; full != 0 includes all
 * constants, otherwise the reduced training objective is returned. */
NWBRL_API nwbrl_status nwbrl_belief_marginal_ll(const nwbrl_belief* prior, size_t n,
                                                const double* c, const double* y, int full,
                                                double* out);
NWBRL_API nwbrl_status nwbrl_belief_predict(const nwbrl_belief* b, const double* c,
                                            double* mean_out);
NWBRL_API nwbrl_status nwbrl_belief_kl(const nwbrl_belief* q, const nwbrl_belief* p,
                                       double* out);
NWBRL_API nwbrl_status nwbrl_belief_save(const nwbrl_belief* b, const char* path);
NWBRL_API nwbrl_status nwbrl_belief_load(const char* path, nwbrl_belief** out);

/* Experiments. `config_json` may be NULL or "" for the defaults. */
NWBRL_API nwbrl_status nwbrl_run_create(const char* config_json, nwbrl_run** out);
NWBRL_API nwbrl_status nwbrl_run_create_from_file(const char* path, nwbrl_run** out);
NWBRL_API void nwbrl_run_destroy(nwbrl_run* run);
NWBRL_API nwbrl_status nwbrl_run_set_seed(nwbrl_run* run, uint64_t seed);
NWBRL_API nwbrl_status nwbrl_run_set_out_dir(nwbrl_run* run, const char* dir);
NWBRL_API nwbrl_status nwbrl_run_set_total_steps(nwbrl_run* run, long steps);
NWBRL_API nwbrl_status nwbrl_run_set_known_noise(nwbrl_run* run, int enabled);
NWBRL_API nwbrl_status nwbrl_run_set_regularization(nwbrl_run* run, int enabled);
NWBRL_API nwbrl_status nwbrl_run_set_task_dims(nwbrl_run* run, size_t d_t, size_t d_r);
NWBRL_API nwbrl_status nwbrl_run_get_task_dims(const nwbrl_run* run, size_t* d_t, size_t* d_r);
/* Writes the effective config as JSON. `needed` receives the size including
 * the terminating NUL. */
NWBRL_API nwbrl_status nwbrl_run_config_json(const nwbrl_run* run, char* buf, size_t cap,
                                             size_t* needed);
NWBRL_API nwbrl_status nwbrl_run_train(nwbrl_run* run);
/* Runs the full, known-noise and no-regularization arms; one summary line per arm. */
NWBRL_API nwbrl_status nwbrl_run_ablate(nwbrl_run* run, nwbrl_line_fn fn, void* user);
/* Runs the latent-dimension sweep; one summary line per grid point. */
NWBRL_API nwbrl_status nwbrl_run_sweep(nwbrl_run* run, nwbrl_line_fn fn, void* user);

typedef struct nwbrl_eval_summary {
  double success_rate;
  double mean_return;
  double transition_l1;
  double reward_l1;
} nwbrl_eval_summary;

/* Final zero-shot evaluation of the last nwbrl_run_train call. */
NWBRL_API nwbrl_status nwbrl_run_final_eval(const nwbrl_run* run, nwbrl_eval_summary* out);
NWBRL_API nwbrl_status nwbrl_eval_checkpoint(const char* path, int n_tasks, uint64_t seed,
                                             nwbrl_eval_summary* out);

/* Quick self checks; one line per check. */
NWBRL_API nwbrl_status nwbrl_verify(uint64_t seed, nwbrl_line_fn fn, void* user, int* failed);

#ifdef __cplusplus
}
#endif

#endif
