/* SPDX-License-Identifier: Apache-2.0 */
#ifndef REFA_REFA_H
#define REFA_REFA_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(REFA_BUILDING_LIBRARY)
#    define REFA_API __declspec(dllexport)
#  else
#    define REFA_API __declspec(dllimport)
#  endif
#else
#  define REFA_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum refa_status {
    REFA_OK = 0,
    REFA_ERR_VALIDATION = 1,
    REFA_ERR_PARSE = 2,
    REFA_ERR_DEGENERATE_GROUP = 3,
    REFA_ERR_INFINITE_PENALTY = 4,
    REFA_ERR_ORACLE = 5,
    REFA_ERR_IO = 6,
    REFA_ERR_CONFIG = 7,
    REFA_ERR_NULL_ARGUMENT = 8,
    REFA_ERR_BUFFER_TOO_SMALL = 9,
    REFA_ERR_INTERNAL = 10
} refa_status;

typedef struct refa_config refa_config;
typedef struct refa_policy refa_policy;

REFA_API const char* refa_version(void);
REFA_API const char* refa_status_string(refa_status status);

/* Message for the last failing call on this thread; "" after success. */
REFA_API const char* refa_last_error(void);

/* ---- configuration ---- */

REFA_API refa_status refa_config_create(refa_config** out);
REFA_API void refa_config_destroy(refa_config* config);
REFA_API refa_status refa_config_set(refa_config* config, const char* key,
                                     const char* value);
REFA_API refa_status refa_config_load_file(refa_config* config, const char* path);
/* *value stays valid until the key is set again or the config destroyed. */
REFA_API refa_status refa_config_get(const refa_config* config, const char* key,
                                     const char** value);

REFA_API size_t refa_config_key_count(void);
REFA_API refa_status refa_config_key_info(size_t index, const char** name,
                                          const char** default_value,
                                          const char** help);

REFA_API size_t refa_command_count(void);
REFA_API const char* refa_command_name(size_t index);

/* Runs a lab subcommand. exit_code follows 0 pass / 1 check failure /
 * 2 usage or config error. *summary (optional) is valid until the next call
 * to refa_run_command on this thread. Returns REFA_OK whenever the command
 * ran to a verdict, including exit codes 1 and 2. */
REFA_API refa_status refa_run_command(const char* name, const refa_config* config,
                                      int* exit_code, const char** summary);

/* ---- score-level losses ----
 * grads arguments are optional (may be NULL) and hold k entries. */

REFA_API refa_status refa_simpo_loss(double s_w, double s_l, double gamma_margin,
                                     double* loss);

/* positive_mask[i] != 0 marks Y+. */
REFA_API refa_status refa_dynamic_loss(const double* scores, const int* positive_mask,
                                       size_t k, double gamma, double* loss,
                                       double* grads);

/* ref_scores may be NULL for the reference-free form. */
REFA_API refa_status refa_infonca_loss(const double* scores, const double* rewards,
                                       size_t k, double alpha_target,
                                       const double* ref_scores, double* loss,
                                       double* grads);

/* eos_probs[t] is the EOS probability at 1-indexed position t+1. */
REFA_API refa_status refa_budgeted_reg(const double* eos_probs, size_t length,
                                       double lambda, int budget, double* value);

/* ---- toy policy ---- */

REFA_API refa_status refa_policy_create(int vocab_size, uint64_t seed, double scale,
                                        refa_policy** out);
REFA_API refa_status refa_policy_load(const char* path, refa_policy** out);
REFA_API refa_status refa_policy_save(const refa_policy* policy, const char* path);
REFA_API void refa_policy_destroy(refa_policy* policy);
REFA_API int refa_policy_vocab_size(const refa_policy* policy);

/* Samples until EOS (included) or max_len. *length receives the number of
 * tokens; REFA_ERR_BUFFER_TOO_SMALL when capacity < *length. */
REFA_API refa_status refa_policy_sample(const refa_policy* policy, int max_len,
                                        uint64_t seed, int32_t* tokens,
                                        size_t capacity, size_t* length);

/* Sum of token log-probabilities under the policy. */
REFA_API refa_status refa_policy_score(const refa_policy* policy, const int32_t* tokens,
                                       size_t length, double* seq_logprob);

#ifdef __cplusplus
}
#endif

#endif /* REFA_REFA_H */
