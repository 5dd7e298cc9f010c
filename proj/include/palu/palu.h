#ifndef PALU_PALU_H
#define PALU_PALU_H

/* C interface to the PALU lab. Every fallible call returns a palu_status;
 * on failure palu_last_error() describes the problem (thread-local, valid
 * until the next call on the same thread). Strings returned through char**
 * are owned by the caller and released with palu_string_free. */

#include <stddef.h>

#if defined(_WIN32)
#define PALU_API __declspec(dllexport)
#else
#define PALU_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum palu_status {
    PALU_OK = 0,
    PALU_ERR_INVALID_INPUT = 1,
    PALU_ERR_UNDEFINED = 2,
    PALU_ERR_ORACLE = 3,
    PALU_ERR_CAPACITY = 4,
    PALU_ERR_PARSE = 5,
    PALU_ERR_IO = 6,
    PALU_ERR_PRECONDITION = 7,
    PALU_ERR_INTERNAL = 8
} palu_status;

/* Budget value meaning "all" for K and N. */
#define PALU_ALL ((size_t)-1)

typedef struct palu_config palu_config;
typedef struct palu_corpus palu_corpus;
typedef struct palu_model palu_model;

PALU_API const char* palu_last_error(void);
PALU_API const char* palu_status_name(palu_status status);
PALU_API void palu_string_free(char* s);

/* configuration */
PALU_API palu_status palu_config_default(palu_config** out);
PALU_API palu_status palu_config_load(const char* path, palu_config** out);
PALU_API palu_status palu_config_from_json(const char* json, int require_seeds, palu_config** out);
/* value is a JSON scalar; bare words such as palu or all are accepted */
PALU_API palu_status palu_config_set(palu_config* cfg, const char* key, const char* value);
PALU_API palu_status palu_config_to_json(const palu_config* cfg, char** out);
PALU_API palu_status palu_config_hash(const palu_config* cfg, char** out_hex);
PALU_API void palu_config_free(palu_config* cfg);

/* corpus */
PALU_API palu_status palu_corpus_generate(const palu_config* cfg, palu_corpus** out);
PALU_API palu_status palu_corpus_load(const char* path, palu_corpus** out);
PALU_API palu_status palu_corpus_save(const palu_corpus* corpus, const char* path);
PALU_API palu_status palu_corpus_summary(const palu_corpus* corpus, char** out_json);
PALU_API void palu_corpus_free(palu_corpus* corpus);

/* models */
PALU_API palu_status palu_model_load(const char* path, palu_model** out);
PALU_API palu_status palu_model_save(const palu_model* model, const char* path);
PALU_API void palu_model_free(palu_model* model);

/* pipeline; report outputs may be NULL */
/* Returns PALU_ERR_PRECONDITION, with the model and report still set, when
 * the model misses the configured EM threshold on a split it trained on. */
PALU_API palu_status palu_pretrain(const palu_config* cfg, const palu_corpus* corpus, int retain_only,
                                   palu_model** out, char** report_json);
/* retain may be NULL (no forget quality) */
PALU_API palu_status palu_unlearn(const palu_config* cfg, const palu_corpus* corpus, const palu_model* original,
                                  const palu_model* retain, palu_model** out, char** report_json,
                                  char** timings_json);
/* retain and reference may be NULL; output is a JSON metric report plus a
 * CSV header and row */
PALU_API palu_status palu_evaluate(const palu_config* cfg, const palu_corpus* corpus, const palu_model* model,
                                   const palu_model* retain, const palu_model* reference, char** out_json,
                                   char** out_csv);
PALU_API palu_status palu_sweep(const char* grid_json, const char* out_dir, size_t jobs, char** summary_csv);
PALU_API palu_status palu_demo_theory(char** out_csv);

/* low-level primitives */
PALU_API palu_status palu_softmax(const double* z, size_t n, double* out);
/* writes min(k, n) sorted indices; out_count may be NULL */
PALU_API palu_status palu_top_k(const double* z, size_t n, size_t k, size_t* out_indices, size_t* out_count);
PALU_API palu_status palu_local_entropy_loss(const double* z, size_t n, const size_t* top, size_t k, double c,
                                             double* out_loss, double* out_grad);
/* roles: 0 common, 1 initiating, 2 redundant */
PALU_API palu_status palu_partition_tokens(const unsigned char* mask, size_t len, size_t n_budget, int* out_roles);
PALU_API palu_status palu_ks_two_sample(const double* a, size_t na, const double* b, size_t nb,
                                        double* out_statistic, double* out_p_value);

#ifdef __cplusplus
}
#endif

#endif
