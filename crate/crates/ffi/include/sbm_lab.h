/* C interface to the sbm-lab block-model library. */

#ifndef SBM_LAB_H
#define SBM_LAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

#define SBM_OK 0

// Malformed input: null pointer, bad UTF-8, unparseable JSON.
#define SBM_ERR_USAGE 2

// Structurally invalid parameters or out-of-range bounds.
#define SBM_ERR_VALIDATION 3

// Identification genuinely impossible (singular moments, coincident
// rates, indistinguishable classes).
#define SBM_ERR_DEGENERATE 4

// The request exceeds a hard size limit (e.g. enumeration space).
#define SBM_ERR_SIZE_LIMIT 5

// Opaque result of an iterative fit.
typedef struct SbmFitHandle SbmFitHandle;

// Opaque directed graph with its planted labels.
typedef struct SbmGraphHandle SbmGraphHandle;

// Opaque model parameters (class weights and edge probabilities).
typedef struct SbmParamsHandle SbmParamsHandle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread; empty string when no
// failure has been recorded. The pointer stays valid until the next
// failing call on the same thread.
const char *sbm_last_error(void);

// Release a string obtained from this library.
//
// # Safety
// `s` must come from this library and not be freed twice.
void sbm_string_free(char *s);

// Build parameters from `q` class weights and a row-major `q*q` matrix of
// edge probabilities.
//
// # Safety
// `alpha` must point to `q` doubles, `pi` to `q*q` doubles, `out` to a
// writable pointer slot.
int sbm_params_new(const double *alpha,
                   uintptr_t q,
                   const double *pi,
                   struct SbmParamsHandle **out);

// Parse parameters from their JSON form (`{"alpha": [...], "pi": [[...]]}`).
//
// # Safety
// `json` must be a NUL-terminated string, `out` a writable pointer slot.
int sbm_params_from_json(const char *json, struct SbmParamsHandle **out);

// Serialize parameters to JSON; release the string with `sbm_string_free`.
//
// # Safety
// `p` must be a live params handle, `out` a writable pointer slot.
int sbm_params_to_json(const struct SbmParamsHandle *p, char **out);

// Number of classes, 0 for a null handle.
//
// # Safety
// `p` must be null or a live params handle.
uintptr_t sbm_params_q(const struct SbmParamsHandle *p);

// # Safety
// `p` must come from this library and not be freed twice.
void sbm_params_free(struct SbmParamsHandle *p);

// Sample an `n`-vertex graph; deterministic in `seed`.
//
// # Safety
// `p` must be a live params handle, `out` a writable pointer slot.
int sbm_sample_graph(const struct SbmParamsHandle *p,
                     uintptr_t n,
                     uint64_t seed,
                     struct SbmGraphHandle **out);

// Number of vertices, 0 for a null handle.
//
// # Safety
// `g` must be null or a live graph handle.
uintptr_t sbm_graph_vertex_count(const struct SbmGraphHandle *g);

// 1 if the directed edge `i -> j` is present, 0 if absent, -1 on a null
// handle or out-of-range index.
//
// # Safety
// `g` must be null or a live graph handle.
int sbm_graph_edge(const struct SbmGraphHandle *g, uintptr_t i, uintptr_t j);

// Copy the planted labels (0-based classes) into `out`, which must hold
// exactly `len == n` entries.
//
// # Safety
// `g` must be a live graph handle and `out` point to `len` writable words.
int sbm_graph_labels(const struct SbmGraphHandle *g, uintptr_t *out, uintptr_t len);

// # Safety
// `g` must come from this library and not be freed twice.
void sbm_graph_free(struct SbmGraphHandle *g);

// Variational EM fit with `restarts` initializations; deterministic in
// `seed`.
//
// # Safety
// `g` must be a live graph handle, `out` a writable pointer slot.
int sbm_fit_vem(const struct SbmGraphHandle *g,
                uintptr_t q,
                uintptr_t restarts,
                uintptr_t max_iter,
                double tol,
                uint64_t seed,
                struct SbmFitHandle **out);

// Exact EM from an explicit starting point. Fails with
// `SBM_ERR_SIZE_LIMIT` when `q^n` exceeds the enumeration budget.
//
// # Safety
// `g` and `init` must be live handles, `out` a writable pointer slot.
int sbm_fit_exact_em(const struct SbmGraphHandle *g,
                     const struct SbmParamsHandle *init,
                     uintptr_t max_iter,
                     double tol,
                     struct SbmFitHandle **out);

// Final objective value (variational bound or marginal log-likelihood);
// NaN for a null handle.
//
// # Safety
// `f` must be null or a live fit handle.
double sbm_fit_objective(const struct SbmFitHandle *f);

// Copy the fitted parameters out of a fit.
//
// # Safety
// `f` must be a live fit handle, `out` a writable pointer slot.
int sbm_fit_params(const struct SbmFitHandle *f, struct SbmParamsHandle **out);

// Serialize a fit (parameters, objective trace, convergence flags) to
// JSON; release with `sbm_string_free`.
//
// # Safety
// `f` must be a live fit handle, `out` a writable pointer slot.
int sbm_fit_to_json(const struct SbmFitHandle *f, char **out);

// # Safety
// `f` must come from this library and not be freed twice.
void sbm_fit_free(struct SbmFitHandle *f);

// Check the standing regularity conditions (class distinguishability,
// edge probabilities off the 0/1 boundary by `zeta`, class weights off the
// boundary by `gamma`). Returns `SBM_OK` when all hold and
// `SBM_ERR_VALIDATION` when violated; either way, when `report_json` is
// non-null it receives the full report.
//
// # Safety
// `p` must be a live params handle; `report_json` null or a writable slot.
int sbm_check_assumptions(const struct SbmParamsHandle *p,
                          double zeta,
                          double gamma,
                          uintptr_t n0,
                          char **report_json);

// Identify parameters from the noise-free moments of `truth` — the
// round-trip the constructive identification theory promises. Fails with
// `SBM_ERR_DEGENERATE` when the moments do not pin the model down.
//
// # Safety
// `truth` must be a live params handle, `out` a writable pointer slot.
int sbm_recover_analytic(const struct SbmParamsHandle *truth, struct SbmParamsHandle **out);

// Smallest sup-norm distance between two parameter sets over all class
// relabelings; written to `err_pi` / `err_alpha` (either may be null).
//
// # Safety
// `a` and `b` must be live params handles; `err_pi`/`err_alpha` null or
// writable.
int sbm_param_distance(const struct SbmParamsHandle *a,
                       const struct SbmParamsHandle *b,
                       double *err_pi,
                       double *err_alpha);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SBM_LAB_H */
