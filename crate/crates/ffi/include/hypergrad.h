#ifndef HYPERGRAD_H
#define HYPERGRAD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HgStatus {
  HG_STATUS_OK = 0,
  HG_STATUS_NULL_POINTER = 1,
  HG_STATUS_DIMENSION = 2,
  HG_STATUS_VALIDATION = 3,
  HG_STATUS_NUMERIC = 4,
  HG_STATUS_CAPACITY = 5,
  HG_STATUS_PANIC = 6,
  HG_STATUS_OTHER = 7,
} HgStatus;

typedef enum HgStrategyKind {
  HG_STRATEGY_KIND_IDENTITY = 0,
  HG_STRATEGY_KIND_NEUMANN = 1,
  HG_STRATEGY_KIND_CG = 2,
  HG_STRATEGY_KIND_EXACT_DENSE = 3,
  HG_STRATEGY_KIND_UNROLLED = 4,
  HG_STRATEGY_KIND_TRUNCATED_UNROLLED = 5,
} HgStrategyKind;

// Opaque problem handle.
typedef struct HgProblem HgProblem;

// Inverse-Hessian strategy. Fields a kind does not use are ignored:
// `steps` is the Neumann term count, CG iteration cap or unrolled step
// count; `kept` is only read for truncated unrolling.
typedef struct HgStrategy {
  enum HgStrategyKind kind;
  uintptr_t steps;
  uintptr_t kept;
  double alpha;
  double tol;
} HgStrategy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Quadratic problem `L_T = ½wᵀAw + wᵀ(Bλ + c)`, `L_V = ½‖w − t‖²` with `A`
// `m×m` symmetric positive definite, `B` `m×n`, and `c`, `t` of length `m`.
// Writes the new handle to `out`.
//
// # Safety
// Input pointers must reference arrays of the stated sizes and `out` must
// be a valid pointer.
enum HgStatus hg_quadratic_new(const double *a,
                               const double *b,
                               const double *c,
                               const double *t,
                               uintptr_t m,
                               uintptr_t n,
                               struct HgProblem **out);

// Seeded random quadratic problem with `m` weights and `n` hyperparameters.
//
// # Safety
// `out` must be a valid pointer.
enum HgStatus hg_quadratic_random(uintptr_t m, uintptr_t n, uint64_t seed, struct HgProblem **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `problem` must come from this library and not be used afterwards.
void hg_problem_free(struct HgProblem *problem);

// Number of weights, or 0 for a null handle.
//
// # Safety
// `problem` must be null or a live handle.
uintptr_t hg_problem_weights_dim(const struct HgProblem *problem);

// Number of hyperparameters, or 0 for a null handle.
//
// # Safety
// `problem` must be null or a live handle.
uintptr_t hg_problem_lambda_dim(const struct HgProblem *problem);

// Hypergradient at `(λ, w)`. `total`, `direct` and `indirect` receive
// `lambda_dim` doubles each; `direct` and `indirect` may be null.
//
// # Safety
// `lambda` and `w` must hold `lambda_dim` and `weights_dim` doubles.
enum HgStatus hg_hypergradient(const struct HgProblem *problem,
                               const double *lambda,
                               const double *w,
                               struct HgStrategy strategy,
                               uint64_t seed,
                               double *total,
                               double *direct,
                               double *indirect);

// `steps` plain SGD steps on `L_T` from `w0` at fixed `λ`; the result goes
// to `w_out` (`weights_dim` doubles, may alias `w0`).
//
// # Safety
// Pointers must reference arrays of the stated sizes.
enum HgStatus hg_inner_sgd(const struct HgProblem *problem,
                           const double *lambda,
                           const double *w0,
                           uintptr_t steps,
                           double lr,
                           uint64_t seed,
                           double *w_out);

// Closed-form best response `w*(λ)` (`weights_dim` doubles, may be null)
// and exact hypergradient (`lambda_dim` doubles).
//
// # Safety
// Pointers must reference arrays of the stated sizes.
enum HgStatus hg_quadratic_exact_hypergradient(const struct HgProblem *problem,
                                               const double *lambda,
                                               double *hypergrad,
                                               double *w_star);

// Copies the calling thread's last error message into `buf` as a
// nul-terminated string, truncating to `len - 1` bytes. Returns the full
// message length in bytes, excluding the terminator, or 0 when there is no
// error.
//
// # Safety
// `buf` must be null or hold `len` bytes.
uintptr_t hg_last_error_message(char *buf, uintptr_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HYPERGRAD_H */
