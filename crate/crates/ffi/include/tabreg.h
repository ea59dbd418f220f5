#ifndef TABREG_H
#define TABREG_H

/* Generated by cbindgen from the tabreg-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Regularization methods exposed over the C ABI.
typedef enum TabregMethod {
  // Plan with the MLE at discount `param` (the planning discount).
  TABREG_METHOD_DISCOUNT_REG = 0,
  // `(1-param) * T_mle + param * T_zeros` at the template's discount.
  TABREG_METHOD_ZEROS_AVERAGE = 1,
  // Uniform Dirichlet prior with fixed magnitude `param` (sum of row
  // parameters) for all pairs.
  TABREG_METHOD_UNIFORM_PRIOR_MAGNITUDE = 2,
  // Uniform prior weighted per pair by the analytic eps*.
  TABREG_METHOD_STATE_ACTION_SPECIFIC_UNIFORM = 3,
  // Epsilon-greedy regularization with weight `param`.
  TABREG_METHOD_EPS_GREEDY = 4,
} TabregMethod;

// Sampling modes for `tabreg_sample_dataset`.
typedef enum TabregSampling {
  // Each tuple draws (s, a) uniformly at random.
  TABREG_SAMPLING_UNIFORM_RANDOM_SA = 0,
  // Exactly n_tuples / (N * |A|) tuples per pair.
  TABREG_SAMPLING_EQUAL_PER_SA = 1,
} TabregSampling;

// Status codes returned by every fallible function.
typedef enum TabregStatus {
  TABREG_STATUS_OK = 0,
  // A required pointer argument was null.
  TABREG_STATUS_NULL_ARGUMENT = 1,
  // An argument was out of range or inconsistent.
  TABREG_STATUS_INVALID_ARGUMENT = 2,
  // An MDP or tensor violated a structural invariant.
  TABREG_STATUS_INVALID_MODEL = 3,
  // A linear solve or iteration failed.
  TABREG_STATUS_NUMERICAL_FAILURE = 4,
  // File I/O or config parsing failed.
  TABREG_STATUS_IO_ERROR = 5,
  // The library caught a panic at the boundary.
  TABREG_STATUS_PANIC = 6,
} TabregStatus;

// Opaque transition-counts handle.
typedef struct TabregCounts TabregCounts;

// Opaque MDP handle.
typedef struct TabregMdp TabregMdp;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the most recent error on this thread. The pointer is
// valid until the next failing call on the same thread.
const char *tabreg_last_error_message(void);

// Library version string (static storage).
const char *tabreg_version(void);

// Builds an MDP from row-major `rewards[s*n_actions + a]` and
// `transitions[(s*n_actions + a)*n_states + s_next]`.
//
// # Safety
// `rewards` must point to `n_states * n_actions` doubles and `transitions`
// to `n_states * n_actions * n_states` doubles; `out` must be valid.
enum TabregStatus tabreg_mdp_new(size_t n_states,
                                 size_t n_actions,
                                 const double *rewards,
                                 const double *transitions,
                                 double gamma,
                                 struct TabregMdp **out);

// # Safety
// `mdp` must come from this library and not already be freed.
void tabreg_mdp_free(struct TabregMdp *mdp);

// # Safety
// `mdp` must be a live handle.
size_t tabreg_mdp_n_states(const struct TabregMdp *mdp);

// # Safety
// `mdp` must be a live handle.
size_t tabreg_mdp_n_actions(const struct TabregMdp *mdp);

// # Safety
// `mdp` must be a live handle.
double tabreg_mdp_gamma(const struct TabregMdp *mdp);

// Six-state River Swim with the default parameterization.
struct TabregMdp *tabreg_env_river_swim(double gamma);

// Ten-state random chain drawn from the given seed.
struct TabregMdp *tabreg_env_random_chain(uint64_t seed, double gamma);

// Nine-state two-loop environment with the given slip probability.
struct TabregMdp *tabreg_env_strens_loop(double slip, double gamma);

// Ten-state stay/leave loop with stochasticity `kappa` and action
// similarity `lambda`.
struct TabregMdp *tabreg_env_controlled_loop(double kappa, double lambda, double gamma);

// Value iteration. Writes one value per state to `values_out` and one
// greedy action index per state to `policy_out`.
//
// # Safety
// `values_out` and `policy_out` must each point to `n_states` elements.
enum TabregStatus tabreg_value_iteration(const struct TabregMdp *mdp,
                                         double tol,
                                         size_t max_iters,
                                         double *values_out,
                                         size_t *policy_out);

// Exact policy evaluation by direct linear solve.
//
// # Safety
// `policy` and `values_out` must each point to `n_states` elements.
enum TabregStatus tabreg_evaluate_policy(const struct TabregMdp *mdp,
                                         const size_t *policy,
                                         double *values_out);

// Mean value gap of `policy` against the optimal policy, both evaluated
// exactly in `true_mdp`.
//
// # Safety
// `policy` must point to `n_states` action indices; `loss_out` must be valid.
enum TabregStatus tabreg_compute_loss(const struct TabregMdp *true_mdp,
                                      const size_t *policy,
                                      double *loss_out);

// Empty counts for an `n_states` x `n_actions` model.
struct TabregCounts *tabreg_counts_new(size_t n_states, size_t n_actions);

// # Safety
// `counts` must come from this library and not already be freed.
void tabreg_counts_free(struct TabregCounts *counts);

// Adds `k` observations of the transition `(s, a) -> s_next`.
//
// # Safety
// `counts` must be a live handle.
enum TabregStatus tabreg_counts_add(struct TabregCounts *counts,
                                    size_t s,
                                    size_t a,
                                    size_t s_next,
                                    uint64_t k);

// Draws a batch dataset from the model and returns its counts.
//
// # Safety
// `mdp` must be live; `out` must be valid.
enum TabregStatus tabreg_sample_dataset(const struct TabregMdp *mdp,
                                        size_t n_tuples,
                                        enum TabregSampling mode,
                                        uint64_t seed,
                                        struct TabregCounts **out);

// Builds the planning MDP for a method: transitions estimated from
// `counts`, regularized, with rewards copied from `template`. The meaning
// of `param` depends on the method; it is ignored for the state-action-
// specific method.
//
// # Safety
// `counts` and `template` must be live handles; `out` must be valid.
enum TabregStatus tabreg_apply_regularizer(enum TabregMethod method,
                                           double param,
                                           const struct TabregCounts *counts,
                                           const struct TabregMdp *template_,
                                           struct TabregMdp **out);

// Per-pair MSE-minimizing weights (analytic, MLE plug-in), written row-major
// to `eps_out[s * n_actions + a]`.
//
// # Safety
// `eps_out` must point to `n_states * n_actions` doubles.
enum TabregStatus tabreg_eps_star_uniform(const struct TabregCounts *counts, double *eps_out);

// The weighted-average weight equivalent to planning with `gamma_p`:
// `(gamma - gamma_p) / gamma`.
//
// # Safety
// `eps_out` must be valid.
enum TabregStatus tabreg_discount_to_eps(double gamma, double gamma_p, double *eps_out);

// Runs the sweep described by a TOML config file (the CLI's `sweep`
// command) and writes results to `out_path` as CSV or JSON.
//
// # Safety
// `config_path` and `out_path` must be NUL-terminated strings.
enum TabregStatus tabreg_run_sweep_file(const char *config_path, const char *out_path, bool json);

// Runs Q-learning from a TOML config (the CLI's `qlearn` command) and
// writes per-episode reward traces to `out_path` as CSV.
//
// # Safety
// `config_path` and `out_path` must be NUL-terminated strings.
enum TabregStatus tabreg_run_qlearn_file(const char *config_path, const char *out_path);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* TABREG_H */
