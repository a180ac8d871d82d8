#ifndef RDENSE_H
#define RDENSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. Zero is success.
typedef enum RdenseStatus {
  RDENSE_STATUS_OK = 0,
  RDENSE_STATUS_NULL_ARGUMENT = 1,
  RDENSE_STATUS_INVALID_UTF8 = 2,
  RDENSE_STATUS_DIMENSION = 3,
  RDENSE_STATUS_CONFIG = 4,
  RDENSE_STATUS_USAGE = 5,
  RDENSE_STATUS_INPUT = 6,
  RDENSE_STATUS_FORMAT = 7,
  RDENSE_STATUS_MISSING_FILES = 8,
  RDENSE_STATUS_CHECKPOINT = 9,
  RDENSE_STATUS_NON_FINITE = 10,
  RDENSE_STATUS_IO = 11,
  RDENSE_STATUS_BUFFER_TOO_SMALL = 12,
  RDENSE_STATUS_PANIC = 13,
} RdenseStatus;

// A built network in double precision.
typedef struct RdenseNetwork RdenseNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer stays
// valid until the next library call on the same thread.
const char *rdense_last_error(void);

// Library version as a static string.
const char *rdense_version(void);

// Release a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void rdense_string_free(char *s);

// Exact parameter and FLOP (multiply-accumulate) totals for `spec`.
//
// # Safety
// `spec` must be a nul-terminated string; the out pointers must be writable.
enum RdenseStatus rdense_analyze(const char *spec, uint64_t *params_out, uint64_t *flops_out);

// Per-layer cost report as JSON with keys `spec`, `rows`, `total_params`,
// `total_flops`. Free the result with [`rdense_string_free`].
//
// # Safety
// `spec` must be a nul-terminated string; `json_out` must be writable.
enum RdenseStatus rdense_report_json(const char *spec, char **json_out);

// Build and initialise a network from `spec` with weights drawn from `seed`.
//
// # Safety
// `spec` must be a nul-terminated string; `net_out` must be writable.
enum RdenseStatus rdense_network_new(const char *spec,
                                     uint64_t seed,
                                     struct RdenseNetwork **net_out);

// Release a network. Null is ignored.
//
// # Safety
// `net` must come from this library and not have been freed.
void rdense_network_free(struct RdenseNetwork *net);

// Number of scalar parameters in the network.
//
// # Safety
// `net` must be a live handle; `out` must be writable.
enum RdenseStatus rdense_network_num_params(const struct RdenseNetwork *net, uint64_t *out);

// Expected input geometry `[channels, height, width]` and class count.
//
// # Safety
// `net` must be a live handle; `chw_out` must hold 3 values; `classes_out` must be writable.
enum RdenseStatus rdense_network_geometry(const struct RdenseNetwork *net,
                                          size_t *chw_out,
                                          size_t *classes_out);

// The network's architecture as JSON. Free with [`rdense_string_free`].
//
// # Safety
// `net` must be a live handle; `json_out` must be writable.
enum RdenseStatus rdense_network_spec_json(const struct RdenseNetwork *net, char **json_out);

// Eval-mode logits for `batch` images laid out as NCHW doubles.
//
// `input_len` must equal `batch * C * H * W` and `logits_len` must be at
// least `batch * classes`.
//
// # Safety
// `net` must be a live handle; `input` and `logits_out` must point to at
// least `input_len` and `logits_len` doubles.
enum RdenseStatus rdense_network_predict(const struct RdenseNetwork *net,
                                         const double *input,
                                         size_t batch,
                                         size_t input_len,
                                         double *logits_out,
                                         size_t logits_len);

// Write the network (weights, running statistics, velocities) to `path`.
//
// # Safety
// `net` must be a live handle; `path` must be a nul-terminated string.
enum RdenseStatus rdense_network_save(const struct RdenseNetwork *net, const char *path);

// Load a double-precision checkpoint. When `spec` is non-null the embedded
// architecture must equal it.
//
// # Safety
// `path` must be a nul-terminated string; `spec` null or nul-terminated;
// `net_out` must be writable.
enum RdenseStatus rdense_network_load(const char *path,
                                      const char *spec,
                                      struct RdenseNetwork **net_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RDENSE_H */
