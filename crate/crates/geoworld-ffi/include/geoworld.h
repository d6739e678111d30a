#ifndef GEOWORLD_H
#define GEOWORLD_H

/* Generated by cbindgen; edit the Rust source instead. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code for every fallible call. `GW_OK` is zero; anything else
 * leaves a message retrievable via `gw_last_error`.
 */
typedef enum GwStatus {
  GW_OK = 0,
  GW_NULL_POINTER = 1,
  GW_INVALID_ARGUMENT = 2,
  GW_IO_ERROR = 3,
  GW_NUMERIC_ERROR = 4,
  GW_BAD_UTF8 = 5,
} GwStatus;

/**
 * Opaque run configuration.
 */
typedef struct GwConfig GwConfig;

/**
 * Opaque QA corpus.
 */
typedef struct GwCorpus GwCorpus;

/**
 * Opaque trained (or initialized) parameter set.
 */
typedef struct GwModel GwModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread. Valid until the
 * next failing call on the same thread; never NULL; do not free.
 */
const char *gw_last_error(void);

/**
 * Release a string returned by this library.
 */
void gw_string_free(char *s);

/**
 * Default configuration. Caller owns the handle.
 */
enum GwStatus gw_config_default(struct GwConfig **out);

/**
 * Parse a configuration from JSON (strict schema, unknown keys rejected).
 */
enum GwStatus gw_config_from_json(const char *json, struct GwConfig **out);

/**
 * Serialize a configuration to JSON.
 */
enum GwStatus gw_config_to_json(const struct GwConfig *cfg, char **out);

void gw_config_free(struct GwConfig *cfg);

/**
 * Generate `count` QA examples from successive scene seeds.
 */
enum GwStatus gw_corpus_generate(const struct GwConfig *cfg,
                                 uint64_t seed_start,
                                 uintptr_t count,
                                 struct GwCorpus **out);

enum GwStatus gw_corpus_len(const struct GwCorpus *corpus, uintptr_t *out);

enum GwStatus gw_corpus_write_jsonl(const struct GwCorpus *corpus, const char *path);

enum GwStatus gw_corpus_read_jsonl(const char *path, struct GwCorpus **out);

void gw_corpus_free(struct GwCorpus *corpus);

/**
 * Train one seed on an in-memory corpus. Teacher features (when the
 * configured method needs them) are computed in memory, no cache files.
 */
enum GwStatus gw_train(const struct GwConfig *cfg,
                       const struct GwCorpus *train_corpus,
                       uint64_t seed,
                       struct GwModel **out);

/**
 * Evaluate a model; writes the evaluation record as a JSON string.
 */
enum GwStatus gw_evaluate(const struct GwModel *model,
                          const struct GwCorpus *corpus,
                          uint64_t seed,
                          char **out_json);

/**
 * Save a model checkpoint (params.bin + manifest.json) into `dir`.
 */
enum GwStatus gw_model_save(const struct GwModel *model, const char *dir);

enum GwStatus gw_model_load(const char *dir, struct GwModel **out);

void gw_model_free(struct GwModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GEOWORLD_H */
