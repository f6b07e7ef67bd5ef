#ifndef SYMTAYLOR_H
#define SYMTAYLOR_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes.
 */
typedef enum StStatus {
  ST_STATUS_OK = 0,
  ST_STATUS_NULL_POINTER = 1,
  ST_STATUS_INVALID_ARGUMENT = 2,
  ST_STATUS_DIMENSION_MISMATCH = 3,
  ST_STATUS_NUMERIC_FAILURE = 4,
  ST_STATUS_CONFIG = 5,
  ST_STATUS_IO = 6,
  ST_STATUS_PARSE = 7,
  ST_STATUS_PANIC = 8,
} StStatus;

/*
 A trained or initialized pair of gradient networks.
 */
typedef struct StModel StModel;

/*
 A built-in analytic Hamiltonian.
 */
typedef struct StSystem StSystem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread; empty after a success.
 The pointer stays valid until the next call on the same thread.
 */
const char *st_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *st_version(void);

/*
 Creates a freshly initialized model with Taylor-term activations.

 # Safety
 `out` must be a valid pointer to writable storage for one handle.
 */
enum StStatus st_model_init(size_t dim,
                            size_t hidden,
                            size_t terms,
                            uint64_t seed,
                            struct StModel **out);

/*
 Loads a model from a checkpoint file written by `symtaylor train`.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid handle slot.
 */
enum StStatus st_model_load(const char *path, struct StModel **out);

/*
 Parses a model from checkpoint JSON text.

 # Safety
 `json` must be a NUL-terminated string and `out` a valid handle slot.
 */
enum StStatus st_model_from_json(const char *json, struct StModel **out);

/*
 Trains a model from a run configuration (JSON text, `NULL` for the
 defaults) and returns it with its final training loss.

 # Safety
 `config_json` must be `NULL` or a NUL-terminated string; `out` must be a
 valid handle slot and `final_loss` `NULL` or writable.
 */
enum StStatus st_train(const char *config_json, struct StModel **out, double *final_loss);

/*
 Releases a model. `NULL` is ignored.

 # Safety
 `model` must come from this library and not be used afterwards.
 */
void st_model_free(struct StModel *model);

/*
 Phase-space half dimension `N` of the model, or 0 for `NULL`.

 # Safety
 `model` must be `NULL` or a live handle.
 */
size_t st_model_dim(const struct StModel *model);

/*
 Evaluates the kinetic gradient network `T_p` at `p`.

 # Safety
 `p` and `out` must each hold `dim` doubles.
 */
enum StStatus st_model_grad_t(const struct StModel *model,
                              const double *p,
                              size_t dim,
                              double *out);

/*
 Evaluates the potential gradient network `V_q` at `q`.

 # Safety
 `q` and `out` must each hold `dim` doubles.
 */
enum StStatus st_model_grad_v(const struct StModel *model,
                              const double *q,
                              size_t dim,
                              double *out);

/*
 Advances `(q, p)` in place by `steps` symplectic steps of size `dt`.

 # Safety
 `q` and `p` must each hold `dim` writable doubles.
 */
enum StStatus st_model_step(const struct StModel *model,
                            double *q,
                            double *p,
                            size_t dim,
                            double dt,
                            size_t steps);

/*
 Looks up a built-in system by name: `pendulum`, `lotka_volterra`,
 `kepler` or `henon_heiles`.

 # Safety
 `name` must be a NUL-terminated string and `out` a valid handle slot.
 */
enum StStatus st_system_new(const char *name, struct StSystem **out);

/*
 Releases a system. `NULL` is ignored.

 # Safety
 `system` must come from this library and not be used afterwards.
 */
void st_system_free(struct StSystem *system);

/*
 Half dimension `N` of the system, or 0 for `NULL`.

 # Safety
 `system` must be `NULL` or a live handle.
 */
size_t st_system_dim(const struct StSystem *system);

/*
 Total energy `H(q, p)`.

 # Safety
 `q` and `p` must each hold `dim` doubles and `energy` must be writable.
 */
enum StStatus st_system_energy(const struct StSystem *system,
                               const double *q,
                               const double *p,
                               size_t dim,
                               double *energy);

/*
 Advances `(q, p)` in place along the analytic flow by `steps` steps.

 # Safety
 `q` and `p` must each hold `dim` writable doubles.
 */
enum StStatus st_system_step(const struct StSystem *system,
                             double *q,
                             double *p,
                             size_t dim,
                             double dt,
                             size_t steps);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SYMTAYLOR_H */
