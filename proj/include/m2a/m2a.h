/* SPDX-License-Identifier: Apache-2.0 */
#ifndef M2A_M2A_H
#define M2A_M2A_H

#include <stddef.h>
#include <stdint.h>

#if defined(M2A_BUILDING_LIBRARY)
#define M2A_API __attribute__((visibility("default")))
#else
#define M2A_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum m2a_status {
    M2A_OK = 0,
    M2A_ERR_INVALID_ARGUMENT = 1,
    M2A_ERR_SHAPE = 2,
    M2A_ERR_FACTORIZATION = 3,
    M2A_ERR_DATA = 4,
    M2A_ERR_STATE = 5,
    M2A_ERR_NUMERIC = 6,
    M2A_ERR_IO = 7,
    M2A_ERR_INTERNAL = 99
} m2a_status;

/* Run configuration (backbone, adapters, data generator, training). */
typedef struct m2a_config m2a_config;
/* A model restored from a checkpoint. */
typedef struct m2a_model m2a_model;

M2A_API const char* m2a_version(void);
/* Message of the last failed call on this thread; "" after success. */
M2A_API const char* m2a_last_error(void);
/* Stable snake_case name of a status code. */
M2A_API const char* m2a_status_name(m2a_status status);
/* Releases strings returned through char** out-parameters. */
M2A_API void m2a_string_free(char* s);

M2A_API m2a_status m2a_config_default(m2a_config** out);
M2A_API m2a_status m2a_config_load(const char* path, m2a_config** out);
M2A_API m2a_status m2a_config_from_json(const char* json, m2a_config** out);
/* Applies a JSON merge patch (RFC 7386) to the configuration. */
M2A_API m2a_status m2a_config_patch(m2a_config* config, const char* json_patch);
M2A_API m2a_status m2a_config_set_seed(m2a_config* config, uint64_t seed);
M2A_API m2a_status m2a_config_to_json(const m2a_config* config, char** out);
M2A_API void m2a_config_free(m2a_config* config);

/* Commands. `result`, when non-null, receives a JSON document. */
M2A_API m2a_status m2a_generate(const m2a_config* config, const char* out_dir, char** result);
M2A_API m2a_status m2a_pretrain(const m2a_config* config, const char* data_dir, const char* out_checkpoint,
                                char** result);
/* `log_path` may be null. */
M2A_API m2a_status m2a_train(const m2a_config* config, const char* data_dir, const char* base_checkpoint,
                             const char* out_checkpoint, const char* log_path, char** result);
/* `strategy` is one of fine|general|avg|rand|coarse; `report_path` and
   `table` may be null. */
M2A_API m2a_status m2a_eval(const char* data_dir, const char* split, const char* checkpoint, const char* strategy,
                            uint64_t seed, int ensemble, const char* report_path, char** result, char** table);
M2A_API m2a_status m2a_ablate(const m2a_config* config, const char* data_dir, const char* base_checkpoint,
                              const char* out_dir, char** result, char** table);
/* `args_json`: {"domains":[...], "d_in":n, "d_out":n, "rank":r, "krona_factor":k}. */
M2A_API m2a_status m2a_params(const char* args_json, char** result);

M2A_API m2a_status m2a_model_load(const char* checkpoint, m2a_model** out);
M2A_API void m2a_model_free(m2a_model* model);
M2A_API m2a_status m2a_model_num_classes(const m2a_model* model, size_t* out);
/* Class probabilities of one sample under `strategy`. `probs` holds
   num_classes entries; `fallbacks` (nullable) counts unseen domains. */
M2A_API m2a_status m2a_model_predict(const m2a_model* model, const int32_t* tokens, size_t n_tokens,
                                     const int32_t* domains, size_t n_domains, const char* strategy, uint64_t seed,
                                     double* probs, int* fallbacks);

#ifdef __cplusplus
}
#endif

#endif /* M2A_M2A_H */
