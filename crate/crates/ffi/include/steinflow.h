#ifndef STEINFLOW_H
#define STEINFLOW_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SfPotentialKind {
  // `V = x²/2 + x⁴/4`
  SF_POTENTIAL_KIND_QUARTIC = 0,
  // `V = x²/2`
  SF_POTENTIAL_KIND_GAUSSIAN = 1,
} SfPotentialKind;

typedef enum SfStatus {
  SF_STATUS_OK = 0,
  SF_STATUS_NULL_POINTER = 1,
  SF_STATUS_INVALID_ARGUMENT = 2,
  // grid construction or grid/array size mismatch
  SF_STATUS_GRID = 3,
  // kernel under-resolved or singular
  SF_STATUS_KERNEL = 4,
  SF_STATUS_POSITIVITY = 5,
  // non-finite values, weight overflow, support violations
  SF_STATUS_NUMERIC = 6,
  SF_STATUS_IO = 7,
  SF_STATUS_PANIC = 8,
} SfStatus;

typedef enum SfVariant {
  SF_VARIANT_NONLOCAL_PLAIN = 0,
  SF_VARIANT_NONLOCAL_WEIGHTED = 1,
  SF_VARIANT_LOCAL_PLAIN = 2,
  SF_VARIANT_LOCAL_WEIGHTED = 3,
} SfVariant;

typedef struct SfGrid SfGrid;

typedef struct SfPotential SfPotential;

typedef struct SfSolver SfSolver;

// Summary of a solver run.
typedef struct SfRunSummary {
  uint64_t steps;
  uint64_t samples;
  double final_kl;
  double max_mass_drift;
  double min_pre_clamp;
} SfRunSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer stays
// valid until the next call into this library on the same thread.
const char *sf_last_error(void);

// Library version as a static NUL-terminated string.
const char *sf_version(void);

// Uniform box `[-half_width, half_width]^dim` with `cells` cells per axis.
//
// # Safety
// `out` must be valid for writing a pointer.
enum SfStatus sf_grid_new(size_t dim, double half_width, size_t cells, struct SfGrid **out);

// # Safety
// `grid` must come from [`sf_grid_new`] and not be used afterwards. Null is ignored.
void sf_grid_free(struct SfGrid *grid);

// Number of cells, or 0 for a null handle.
//
// # Safety
// `grid` must be null or a live handle.
size_t sf_grid_len(const struct SfGrid *grid);

// # Safety
// `grid` must be null or a live handle.
double sf_grid_spacing(const struct SfGrid *grid);

// Cell centres along the first axis (`cells` values).
//
// # Safety
// `out` must hold `len` doubles.
enum SfStatus sf_grid_centres(const struct SfGrid *grid, double *out, size_t len);

// # Safety
// `out` must be valid for writing a pointer.
enum SfStatus sf_potential_new(enum SfPotentialKind kind, struct SfPotential **out);

// # Safety
// `potential` must come from [`sf_potential_new`]. Null is ignored.
void sf_potential_free(struct SfPotential *potential);

// Discrete equilibrium `∝ e^{-V}` on the grid.
//
// # Safety
// `out` must hold `len` doubles.
enum SfStatus sf_equilibrium(const struct SfGrid *grid,
                             const struct SfPotential *potential,
                             double *out,
                             size_t len);

// Solver for one equation with the Bessel kernel of bandwidth `sigma`
// (ignored by local variants). The grid and potential are copied.
//
// # Safety
// Handles must be live; `out` must be valid for writing a pointer.
enum SfStatus sf_solver_new(const struct SfGrid *grid,
                            const struct SfPotential *potential,
                            enum SfVariant kind,
                            double sigma,
                            double cfl,
                            struct SfSolver **out);

// # Safety
// `solver` must come from [`sf_solver_new`]. Null is ignored.
void sf_solver_free(struct SfSolver *solver);

// Evolves `rho0` to `t_end` and writes the final density to `rho_out`.
// `summary` may be null.
//
// # Safety
// `rho0` and `rho_out` must each hold `len` doubles; they may alias.
enum SfStatus sf_solver_run(const struct SfSolver *solver,
                            const double *rho0,
                            double *rho_out,
                            size_t len,
                            double t_end,
                            struct SfRunSummary *summary);

// `KL(ρ ‖ ρ∞)` against the discrete equilibrium of `potential`.
//
// # Safety
// `rho` must hold `len` doubles; `out` must be writable.
enum SfStatus sf_kl_divergence(const struct SfGrid *grid,
                               const struct SfPotential *potential,
                               const double *rho,
                               size_t len,
                               double *out);

// Dissipation of `rho` for the selected equation.
//
// # Safety
// `rho` must hold `len` doubles; `out` must be writable.
enum SfStatus sf_dissipation(const struct SfGrid *grid,
                             const struct SfPotential *potential,
                             enum SfVariant kind,
                             double sigma,
                             const double *rho,
                             size_t len,
                             double *out);

// W₁ distance between two one-dimensional densities.
//
// # Safety
// `a` and `b` must hold `len` doubles; `out` must be writable.
enum SfStatus sf_w1_distance(const struct SfGrid *grid,
                             const double *a,
                             const double *b,
                             size_t len,
                             double *out);

// Modified Bessel function of the second kind `K_ν(x)`, for integer and
// half-integer `ν`.
//
// # Safety
// `out` must be writable.
enum SfStatus sf_bessel_k(double nu, double x, double *out);

// Plain SVGD velocities of `n` particles on the line with the Bessel kernel.
//
// # Safety
// `x` and `v_out` must each hold `n` doubles.
enum SfStatus sf_svgd_velocity(const struct SfPotential *potential,
                               double sigma,
                               const double *x,
                               size_t n,
                               double *v_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STEINFLOW_H */
