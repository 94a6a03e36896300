#ifndef DELAYPRED_H
#define DELAYPRED_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum DpStatus {
  DP_STATUS_OK = 0,
  DP_STATUS_NULL_POINTER = 1,
  DP_STATUS_INVALID_ARGUMENT = 2,
  DP_STATUS_DIMENSION_MISMATCH = 3,
  // A state or intermediate value became non-finite or overflowed, or an
  // iteration failed to converge.
  DP_STATUS_NUMERIC = 4,
  // The required Euler grid count exceeds the cap.
  DP_STATUS_GRID_COUNT_EXCEEDED = 5,
  // `A + BK` is not Hurwitz.
  DP_STATUS_NOT_HURWITZ = 6,
  // A history query or append fell outside the recorded span.
  DP_STATUS_COVERAGE = 7,
  DP_STATUS_CONFIG = 8,
  DP_STATUS_IO = 9,
  DP_STATUS_PANIC = 10,
} DpStatus;

// Sampling schedule families for [`dp_linear_simulate`].
typedef enum DpSchedule {
  DP_SCHEDULE_UNIFORM = 0,
  DP_SCHEDULE_JITTERED = 1,
  DP_SCHEDULE_SEEDED_RANDOM = 2,
} DpSchedule;

// A recorded input signal with a sliding window of length `tau`.
typedef struct DpHistory DpHistory;

// A linear plant `x' = A x + B u(t - tau)` with nominal feedback `u = K x`.
typedef struct DpLinearSystem DpLinearSystem;

// A simulated closed-loop run.
typedef struct DpTrajectory DpTrajectory;

// Exponential fit `m(t) ~ prefactor * exp(-rate * t)` of a run's tail.
typedef struct DpDecayFit {
  double rate;
  double prefactor;
  // Largest ratio of `m(t)` to the fitted curve over the fit window.
  double envelope_ratio;
  // Nonzero when `m` fell below the fit floor everywhere.
  int32_t degenerate;
} DpDecayFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message into `buf` as a
// NUL-terminated string, truncating to `len` bytes. Returns the buffer size
// needed for the full message including the terminator.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t dp_last_error_message(char *buf, size_t len);

// Largest singular value of the `rows x cols` matrix `data`.
//
// # Safety
// `data` must point to `rows * cols` doubles and `out` must be writable.
enum DpStatus dp_spectral_norm(const double *data, size_t rows, size_t cols, double *out);

// Creates a linear plant from `A` (`n x n`), `B` (`n x m`) and `K` (`m x n`).
//
// # Safety
// The matrix pointers must hold the stated number of doubles and `out` must
// be writable. Release the handle with [`dp_linear_system_free`].
enum DpStatus dp_linear_system_new(const double *a,
                                   const double *b,
                                   const double *k,
                                   size_t n,
                                   size_t m,
                                   double tau,
                                   struct DpLinearSystem **out);

// Releases a plant. Null is ignored.
//
// # Safety
// `sys` must come from [`dp_linear_system_new`] and not be used afterwards.
void dp_linear_system_free(struct DpLinearSystem *sys);

// State and input dimensions of a plant.
//
// # Safety
// `sys` must be a live handle; `n` and `m` must be writable.
enum DpStatus dp_linear_system_dims(const struct DpLinearSystem *sys, size_t *n, size_t *m);

// Certified gain `gamma` of the closed loop `A + BK`: `margin` (> 1) times
// the infimum admissible gain of its quadratic certificate.
//
// # Safety
// `sys` must be a live handle; `gamma` must be writable.
enum DpStatus dp_iss_gain(const struct DpLinearSystem *sys, double margin, double *gamma);

// Smallest Euler grid count that keeps the sampled loop stable for
// sampling gaps up to `r` and gain `gamma`.
//
// # Safety
// `sys` must be a live handle; `n_grid` must be writable.
enum DpStatus dp_min_grid_count(const struct DpLinearSystem *sys,
                                double r,
                                double gamma,
                                uint64_t *n_grid);

// The scalar design objective `f(p)` for sampling period `r`.
//
// # Safety
// `out` must be writable.
enum DpStatus dp_f_value(double r, double p, double *out);

// A-priori bound on the linear predictor error, with `a = |A|`, `b = |B|`,
// `x0_norm = |x0|` and `u_sup` the sup norm of the input window.
double dp_linear_error_bound(double a,
                             double b,
                             double tau,
                             uint64_t n_grid,
                             double x0_norm,
                             double u_sup);

// Creates a history holding the constant input `c` (length `m`) on
// `[-window, 0]`, recorded every `dt_rec`.
//
// # Safety
// `c` must hold `m` doubles and `out` must be writable. Release the handle
// with [`dp_history_free`].
enum DpStatus dp_history_constant_initial(double window,
                                          double dt_rec,
                                          const double *c,
                                          size_t m,
                                          struct DpHistory **out);

// Releases a history. Null is ignored.
//
// # Safety
// `hist` must come from this library and not be used afterwards.
void dp_history_free(struct DpHistory *hist);

// Appends `u` at time `t`, at most one recording step past the end.
//
// # Safety
// `hist` must be a live handle and `u` must hold `m` doubles.
enum DpStatus dp_history_push(struct DpHistory *hist, double t, const double *u, size_t m);

// Sets a new right value at the current end, producing a jump there.
//
// # Safety
// `hist` must be a live handle and `u` must hold `m` doubles.
enum DpStatus dp_history_set_jump(struct DpHistory *hist, const double *u, size_t m);

// Right-continuous value of the recorded input at `t`, written to `u`.
//
// # Safety
// `hist` must be a live handle and `u` must have room for `m` doubles.
enum DpStatus dp_history_value_at(const struct DpHistory *hist, double t, double *u, size_t m);

// Sup norm of the recorded input over `[t - window, t)`.
//
// # Safety
// `hist` must be a live handle and `out` must be writable.
enum DpStatus dp_history_sup_norm_window(const struct DpHistory *hist, double t, double *out);

// Euler prediction `z_N` of `x(t + tau)` from the state `x` (length `n`)
// and the input recorded on `[t - tau, t)`, written to `z`.
//
// # Safety
// Handles must be live; `x` and `z` must hold `n` doubles.
enum DpStatus dp_linear_predict(const struct DpLinearSystem *sys,
                                const struct DpHistory *hist,
                                const double *x,
                                size_t n,
                                double t,
                                uint64_t n_grid,
                                double *z);

// Simulates the sampled closed loop with the linear predictor at grid
// count `n_grid`, from state `x0` (length `n`) and constant initial input
// `u0` (length `m`), up to `t_end`. `plant_steps_per_unit` of 0 selects the
// default.
//
// # Safety
// `sys` must be live, `x0`/`u0` must hold `n`/`m` doubles and `out` must be
// writable. Release the run with [`dp_trajectory_free`].
enum DpStatus dp_linear_simulate(const struct DpLinearSystem *sys,
                                 uint64_t n_grid,
                                 enum DpSchedule schedule,
                                 double r,
                                 uint64_t seed,
                                 const double *x0,
                                 size_t n,
                                 const double *u0,
                                 size_t m,
                                 double t_end,
                                 uint32_t plant_steps_per_unit,
                                 struct DpTrajectory **out);

// Releases a run. Null is ignored.
//
// # Safety
// `traj` must come from this library and not be used afterwards.
void dp_trajectory_free(struct DpTrajectory *traj);

// Number of logged points; 0 for a null handle.
//
// # Safety
// `traj` must be null or a live handle.
size_t dp_trajectory_len(const struct DpTrajectory *traj);

// Time and state (length `n`) of logged point `i`.
//
// # Safety
// `traj` must be live, `t` writable and `x` must have room for `n` doubles.
enum DpStatus dp_trajectory_point(const struct DpTrajectory *traj,
                                  size_t i,
                                  double *t,
                                  double *x,
                                  size_t n);

// Exponential fit of `|x(t)| + sup_{[t - tau, t)} |u|` over the run's tail.
//
// # Safety
// `traj` must be live and `fit` writable.
enum DpStatus dp_trajectory_decay_fit(const struct DpTrajectory *traj, struct DpDecayFit *fit);

// Runs a JSON config file as the command-line tool would and returns its
// exit code: 0 success, 1 bound violations, 2 invalid config, 3 numeric
// failure. `out_dir` may be null to keep the config's `output_dir`. On a
// nonzero code the message is available from [`dp_last_error_message`].
//
// # Safety
// `config_path` must be a NUL-terminated string; `out_dir` must be null or
// NUL-terminated.
int32_t dp_run_config(const char *config_path, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DELAYPRED_H */
