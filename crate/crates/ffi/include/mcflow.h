#ifndef MCFLOW_H
#define MCFLOW_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result code of every fallible call.
typedef enum McflowStatus {
  MCFLOW_STATUS_OK = 0,
  MCFLOW_STATUS_NULL_POINTER = 1,
  MCFLOW_STATUS_INVALID_ARGUMENT = 2,
  MCFLOW_STATUS_INVALID_DOMAIN = 3,
  MCFLOW_STATUS_OUTSIDE_DOMAIN = 4,
  MCFLOW_STATUS_ILL_CONDITIONED = 5,
  MCFLOW_STATUS_INDEX_MISMATCH = 6,
  MCFLOW_STATUS_BUFFER_TOO_SMALL = 7,
  MCFLOW_STATUS_UNSUPPORTED = 8,
  MCFLOW_STATUS_PANIC = 9,
} McflowStatus;

// Circular domain: unit disc minus disjoint closed discs.
typedef struct McflowDomain McflowDomain;

// Neumann function evaluator bound to a domain.
typedef struct McflowGreen McflowGreen;

// Harmonic function in log-source plus Laurent form.
typedef struct McflowHarmonic McflowHarmonic;

// Message of the last failure on this thread; empty after a success. The
// pointer stays valid until the next call into the library on this thread.
const char *mcflow_last_error(void);

// Library version as a static NUL-terminated string.
const char *mcflow_version(void);

// Builds a domain from `n_holes` hole centres (`centers_xy`, interleaved
// x, y) and radii. `n_holes = 0` gives the unit disc.
//
// # Safety
// `centers_xy` must hold `2 n_holes` doubles and `radii` `n_holes` doubles
// (either may be null when `n_holes = 0`); `out` must be writable.
enum McflowStatus mcflow_domain_new(const double *centers_xy,
                                    const double *radii,
                                    size_t n_holes,
                                    struct McflowDomain **out);

// Concentric annulus `r < |z| < 1`.
//
// # Safety
// `out` must be writable.
enum McflowStatus mcflow_domain_annulus(double r, struct McflowDomain **out);

// Parses a TOML domain description; only all-circle domains are accepted.
//
// # Safety
// `text` must be a NUL-terminated string; `out` must be writable.
enum McflowStatus mcflow_domain_parse(const char *text, struct McflowDomain **out);

// Number of boundary components `k` (0 for a null handle).
//
// # Safety
// `d` must be null or a live domain handle.
size_t mcflow_domain_components(const struct McflowDomain *d);

// Whether `(x, y)` lies in the open fluid region.
//
// # Safety
// `d` must be a live domain handle; `out` must be writable.
enum McflowStatus mcflow_domain_contains(const struct McflowDomain *d,
                                         double x,
                                         double y,
                                         bool *out);

// # Safety
// `d` must be null or a handle not yet freed.
void mcflow_domain_free(struct McflowDomain *d);

// Harmonic measure of component `j` (0 = outer circle) with `modes`
// Laurent modes per circle.
//
// # Safety
// `d` must be a live domain handle; `out` must be writable.
enum McflowStatus mcflow_harmonic_measure(const struct McflowDomain *d,
                                          size_t j,
                                          size_t modes,
                                          struct McflowHarmonic **out);

// Value and gradient at `(x, y)`; `grad` may be null, otherwise it receives
// two doubles.
//
// # Safety
// `h` must be a live handle; `value` writable; `grad` null or writable for 2.
enum McflowStatus mcflow_harmonic_eval(const struct McflowHarmonic *h,
                                       double x,
                                       double y,
                                       double *value,
                                       double *grad);

// # Safety
// `h` must be null or a handle not yet freed.
void mcflow_harmonic_free(struct McflowHarmonic *h);

// Critical points of `h` in `d`. Writes up to `capacity` points as
// interleaved `xy` pairs and their multiplicities; `count` always receives
// the total found. Returns `MCFLOW_STATUS_BUFFER_TOO_SMALL` when
// `capacity < count` and `MCFLOW_STATUS_INDEX_MISMATCH` when the weighted
// count differs from `k - 2` (the points are still written).
//
// # Safety
// `xy` must hold `2 capacity` doubles and `multiplicity` `capacity` ints
// (null allowed when `capacity = 0`); `count` must be writable.
enum McflowStatus mcflow_critical_points(const struct McflowDomain *d,
                                         const struct McflowHarmonic *h,
                                         double *xy,
                                         int32_t *multiplicity,
                                         size_t capacity,
                                         size_t *count);

// Neumann function evaluator with `modes` Laurent modes per circle.
//
// # Safety
// `d` must be a live domain handle; `out` must be writable.
enum McflowStatus mcflow_green_new(const struct McflowDomain *d,
                                   size_t modes,
                                   struct McflowGreen **out);

// `N(z, w)` and, when `grad` is non-null, its gradient in `z`.
//
// # Safety
// `g` must be a live handle; `value` writable; `grad` null or writable for 2.
enum McflowStatus mcflow_green_eval(const struct McflowGreen *g,
                                    double zx,
                                    double zy,
                                    double wx,
                                    double wy,
                                    double *value,
                                    double *grad);

// # Safety
// `g` must be null or a handle not yet freed.
void mcflow_green_free(struct McflowGreen *g);

#endif  /* MCFLOW_H */
