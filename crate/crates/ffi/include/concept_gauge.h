#ifndef CONCEPT_GAUGE_H
#define CONCEPT_GAUGE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CgStatus {
  CG_STATUS_OK = 0,
  CG_STATUS_NULL_POINTER = 1,
  CG_STATUS_INVALID_ARGUMENT = 2,
  /**
   * A statistic or score is undefined for these inputs (zero variance,
   * no activation weight).
   */
  CG_STATUS_UNDEFINED = 3,
  /**
   * Required cells are missing from a score table.
   */
  CG_STATUS_INCOMPLETE = 4,
  CG_STATUS_CONFIG = 5,
  CG_STATUS_BACKEND = 6,
  CG_STATUS_IO = 7,
  CG_STATUS_NOT_CONVERGED = 8,
  CG_STATUS_PANIC = 9,
} CgStatus;

typedef struct CgBackend CgBackend;

typedef struct CgConcept CgConcept;

typedef struct CgMtmm CgMtmm;

typedef struct CgScoreTable CgScoreTable;

typedef struct CgBackendInfo {
  size_t hidden_width;
  size_t vocab_size;
  size_t layer_index;
  size_t max_length;
} CgBackendInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *cg_version(void);

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next call into the library on this thread.
 */
const char *cg_last_error_message(void);

/**
 * Linear concept `a(h) = vᵀh + b` over `len`-dimensional hidden states.
 */
enum CgStatus cg_concept_linear(const char *id,
                                const double *v,
                                size_t len,
                                double b,
                                struct CgConcept **out);

/**
 * ReLU-linear concept `a(h) = max(0, vᵀh + b)`.
 */
enum CgStatus cg_concept_relu_linear(const char *id,
                                     const double *v,
                                     size_t len,
                                     double b,
                                     struct CgConcept **out);

/**
 * Single-neuron concept `a(h) = h[neuron]`.
 */
enum CgStatus cg_concept_one_hot(const char *id, size_t neuron, struct CgConcept **out);

void cg_concept_free(struct CgConcept *concept);

enum CgStatus cg_concept_activate(const struct CgConcept *concept,
                                  const double *h,
                                  size_t len,
                                  double *out);

/**
 * Writes the closest point to `h` with zero activation into `out[0..len]`.
 */
enum CgStatus cg_concept_ablate(const struct CgConcept *concept,
                                const double *h,
                                size_t len,
                                double *out);

/**
 * Writes `h` moved by `epsilon` along the direction of steepest
 * activation increase into `out[0..len]`.
 */
enum CgStatus cg_concept_epsilon_add(const struct CgConcept *concept,
                                     const double *h,
                                     size_t len,
                                     double epsilon,
                                     double *out);

/**
 * Opens `toy:<seed>`, `cmd:<argv>` or `tcp:<host:port>`.
 */
enum CgStatus cg_backend_open(const char *spec, struct CgBackend **out);

void cg_backend_free(struct CgBackend *backend);

enum CgStatus cg_backend_info(const struct CgBackend *backend, struct CgBackendInfo *out);

/**
 * Faithfulness measure `measure` (e.g. "ABL-Div") of `concept` on one
 * token sequence treated as a single batch, with default options.
 */
enum CgStatus cg_faithfulness(const struct CgBackend *backend,
                              const struct CgConcept *concept,
                              const char *measure,
                              const uint32_t *tokens,
                              size_t n_tokens,
                              double *out);

enum CgStatus cg_pearson(const double *x, const double *y, size_t n, double *out);

enum CgStatus cg_spearman(const double *x, const double *y, size_t n, double *out);

/**
 * Kendall's tau-a; ties contribute zero.
 */
enum CgStatus cg_kendall_tau(const double *x, const double *y, size_t n, double *out);

/**
 * Cronbach's alpha of `n_subsets` score vectors over `n_concepts`
 * concepts, stored row-major in `scores`.
 */
enum CgStatus cg_cronbach_alpha(const double *scores,
                                size_t n_subsets,
                                size_t n_concepts,
                                double *out);

enum CgStatus cg_scores_new(struct CgScoreTable **out);

/**
 * Reads a `concept_id,measure_id,batch_id,run_id,score` CSV file.
 */
enum CgStatus cg_scores_read_csv(const char *path, struct CgScoreTable **out);

void cg_scores_free(struct CgScoreTable *table);

/**
 * Adds one cell; duplicates and NaN are rejected.
 */
enum CgStatus cg_scores_insert(struct CgScoreTable *table,
                               const char *concept_id,
                               const char *measure_id,
                               size_t batch_id,
                               const char *run_id,
                               double score);

enum CgStatus cg_scores_len(const struct CgScoreTable *table, size_t *out);

/**
 * MTMM table of a single-run score table. `measures` is a comma-separated
 * list giving the row order, or NULL for every measure in the table.
 */
enum CgStatus cg_mtmm_build(const struct CgScoreTable *table,
                            const char *measures,
                            struct CgMtmm **out);

void cg_mtmm_free(struct CgMtmm *report);

enum CgStatus cg_mtmm_size(const struct CgMtmm *report, size_t *out);

/**
 * Cell (i, j). An undefined diagonal consistency yields `CG_STATUS_UNDEFINED`.
 */
enum CgStatus cg_mtmm_get(const struct CgMtmm *report, size_t i, size_t j, double *out);

/**
 * Runs the pipeline described by a TOML config file. `complete` receives
 * whether every cell was scored and the MTMM table was written.
 */
enum CgStatus cg_run_pipeline(const char *config_path, bool *complete);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONCEPT_GAUGE_H */
