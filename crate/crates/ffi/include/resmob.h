#ifndef RESMOB_H
#define RESMOB_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ResmobFitMethod {
  // σ² by maximum likelihood with the error variance held fixed.
  RESMOB_FIT_METHOD_HORNE_FIXED_DELTA = 0,
  // σ² and δ² jointly from the increment likelihood.
  RESMOB_FIT_METHOD_BMME_JOINT = 1,
} ResmobFitMethod;

typedef enum ResmobMetric {
  RESMOB_METRIC_EUCLIDEAN = 0,
  RESMOB_METRIC_MANHATTAN = 1,
  // Uses the `p` argument.
  RESMOB_METRIC_MINKOWSKI = 2,
} ResmobMetric;

// Result of every fallible call.
typedef enum ResmobStatus {
  RESMOB_STATUS_OK = 0,
  RESMOB_STATUS_NULL_POINTER = 1,
  RESMOB_STATUS_INVALID_ARGUMENT = 2,
  RESMOB_STATUS_IO = 3,
  RESMOB_STATUS_PARSE = 4,
  RESMOB_STATUS_DOMAIN = 5,
  RESMOB_STATUS_PATCH = 6,
  RESMOB_STATUS_GRID_TOO_LARGE = 7,
  RESMOB_STATUS_INSUFFICIENT_DATA = 8,
  RESMOB_STATUS_NON_CONVERGENCE = 9,
  RESMOB_STATUS_SHAPE_MISMATCH = 10,
  RESMOB_STATUS_INVARIANT = 11,
  RESMOB_STATUS_INTEGRATION = 12,
  RESMOB_STATUS_MISSING_ARTIFACT = 13,
  RESMOB_STATUS_CONFIG = 14,
  RESMOB_STATUS_PANIC = 99,
} ResmobStatus;

typedef struct ResmobGrid ResmobGrid;

typedef struct ResmobPatchMap ResmobPatchMap;

typedef struct ResmobPipeline ResmobPipeline;

typedef struct ResmobSeirsParams ResmobSeirsParams;

typedef struct ResmobSeirsRun ResmobSeirsRun;

typedef struct ResmobTrajectory ResmobTrajectory;

// Bridge parameters of one trajectory.
typedef struct ResmobFit {
  enum ResmobFitMethod method;
  double sigma2;
  double delta2;
  double loglik;
  // Bit 0/1: σ² at lower/upper bound; bit 2/3: δ² at lower/upper bound;
  // bit 4: final point dropped.
  uint32_t flags;
} ResmobFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, static NUL-terminated string.
const char *resmob_version(void);

// Message of the last failed call on this thread, or NULL. Valid until the next
// failing call on the same thread.
const char *resmob_last_error(void);

// Trajectory from `n` fixes; times in seconds (increasing), positions in projected meters.
//
// # Safety
// `t`, `x`, `y` must point to `n` doubles; `out` must be writable.
enum ResmobStatus resmob_trajectory_new(const double *t,
                                        const double *x,
                                        const double *y,
                                        size_t n,
                                        struct ResmobTrajectory **out);

// # Safety
// `p` must come from [`resmob_trajectory_new`] or be NULL.
void resmob_trajectory_free(struct ResmobTrajectory *p);

// Fits bridge parameters. `delta2` is the fixed error variance for
// `HorneFixedDelta` and ignored for `BmmeJoint`.
//
// # Safety
// `traj` must be a live handle; `out` must be writable.
enum ResmobStatus resmob_fit(const struct ResmobTrajectory *traj,
                             enum ResmobFitMethod method,
                             double delta2,
                             struct ResmobFit *out);

// Loads a patch GeoJSON file; degree coordinates are projected to UTM `zone`.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum ResmobStatus resmob_patch_map_load(const char *path,
                                        uint8_t zone,
                                        struct ResmobPatchMap **out);

// # Safety
// `map` must be a live handle.
size_t resmob_patch_map_len(const struct ResmobPatchMap *map);

// Index of the patch containing `(x, y)`, or -1 when outside every patch (or `map` is NULL).
//
// # Safety
// `map` must be a live handle.
int64_t resmob_patch_map_locate(const struct ResmobPatchMap *map, double x, double y);

// # Safety
// `p` must come from [`resmob_patch_map_load`] or be NULL.
void resmob_patch_map_free(struct ResmobPatchMap *p);

// Occupancy grid over the map's bounding box plus `margin` meters.
//
// # Safety
// `map` must be a live handle; `out` must be writable.
enum ResmobStatus resmob_grid_new(const struct ResmobPatchMap *map,
                                  double cell_size,
                                  double margin,
                                  struct ResmobGrid **out);

// # Safety
// `p` must come from [`resmob_grid_new`] or be NULL.
void resmob_grid_free(struct ResmobGrid *p);

// Share of the trajectory's span spent in each patch, OUTSIDE last:
// `out_row` receives `resmob_patch_map_len(map) + 1` values.
//
// # Safety
// Handles must be live; `out_row` must hold `len` doubles.
enum ResmobStatus resmob_occupation_row(const struct ResmobTrajectory *traj,
                                        const struct ResmobFit *fit,
                                        const struct ResmobGrid *grid,
                                        double time_step,
                                        double *out_row,
                                        size_t len);

// Entrywise distance between two `rows × cols` row-major matrices.
//
// # Safety
// `a` and `b` must hold `rows * cols` doubles; `out` must be writable.
enum ResmobStatus resmob_distance(const double *a,
                                  const double *b,
                                  size_t rows,
                                  size_t cols,
                                  enum ResmobMetric metric,
                                  double p,
                                  double *out);

// SEIRS parameters for `n` patches: every rate zero, `alpha` zero, `p` zero.
// Fill them with [`resmob_seirs_params_set`].
//
// # Safety
// `out` must be writable.
enum ResmobStatus resmob_seirs_params_new(size_t n, struct ResmobSeirsParams **out);

// Sets one parameter vector by name: `lambda`, `beta`, `mu`, `gamma`, `tau`,
// `psi`, `kappa`, `alpha`, `population` (`n` values) or `p` (`n*n`, row-major).
//
// # Safety
// `params` must be a live handle; `name` NUL-terminated; `values` must hold `len` doubles.
enum ResmobStatus resmob_seirs_params_set(struct ResmobSeirsParams *params,
                                          const char *name,
                                          const double *values,
                                          size_t len);

// # Safety
// `p` must come from [`resmob_seirs_params_new`] or be NULL.
void resmob_seirs_params_free(struct ResmobSeirsParams *p);

// Integrates from `init` (`4n` values: S, E, I, R blocks of `n`) to `t_end` with RK4 step `dt`.
//
// # Safety
// `params` must be a live handle; `init` must hold `len` doubles; `out` must be writable.
enum ResmobStatus resmob_seirs_integrate(const struct ResmobSeirsParams *params,
                                         const double *init,
                                         size_t len,
                                         double t_end,
                                         double dt,
                                         struct ResmobSeirsRun **out);

// Number of recorded time nodes (steps + 1), or 0 for NULL.
//
// # Safety
// `run` must be a live handle or NULL.
size_t resmob_seirs_run_len(const struct ResmobSeirsRun *run);

// Time and state at node `k`; `state` receives `4n` values in S, E, I, R blocks.
//
// # Safety
// `run` must be a live handle; `time` writable; `state` must hold `len` doubles.
enum ResmobStatus resmob_seirs_run_node(const struct ResmobSeirsRun *run,
                                        size_t k,
                                        double *time,
                                        double *state,
                                        size_t len);

// # Safety
// `p` must come from [`resmob_seirs_integrate`] or be NULL.
void resmob_seirs_run_free(struct ResmobSeirsRun *p);

// Opens a pipeline from a JSON config file (relative paths resolve against it).
//
// # Safety
// `config_path` must be NUL-terminated; `out` must be writable.
enum ResmobStatus resmob_pipeline_open(const char *config_path, struct ResmobPipeline **out);

// Runs one command: `synth`, `ingest`, `residence`, `fit`, `matrix`,
// `simulate`, `distance`, `diff` or `run`. `window` may be NULL for every
// configured window.
//
// # Safety
// `pipeline` must be a live handle; strings NUL-terminated.
enum ResmobStatus resmob_pipeline_command(const struct ResmobPipeline *pipeline,
                                          const char *command,
                                          const char *window);

// # Safety
// `p` must come from [`resmob_pipeline_open`] or be NULL.
void resmob_pipeline_free(struct ResmobPipeline *p);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RESMOB_H */
