#ifndef DIFFAIL_H
#define DIFFAIL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes.
typedef enum DiffailStatus {
  DIFFAIL_STATUS_OK = 0,
  DIFFAIL_STATUS_NULL_POINTER = 1,
  DIFFAIL_STATUS_INVALID_ARGUMENT = 2,
  DIFFAIL_STATUS_IO = 3,
  DIFFAIL_STATUS_FORMAT = 4,
  DIFFAIL_STATUS_NON_FINITE = 5,
  DIFFAIL_STATUS_FAILED = 6,
  DIFFAIL_STATUS_PANIC = 7,
} DiffailStatus;

// Expert demonstrations.
typedef struct DiffailDataset DiffailDataset;

// A trained policy and discriminator loaded from a checkpoint.
typedef struct DiffailModel DiffailModel;

// Diffusion noise schedule.
typedef struct DiffailSchedule DiffailSchedule;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL. Valid until the
// next call into this library from the same thread.
const char *diffail_last_error(void);

// Library version as a static NUL-terminated string.
const char *diffail_version(void);

// Linear β schedule with `steps` diffusion steps.
//
// # Safety
// `out` must be a valid pointer to write a handle to.
enum DiffailStatus diffail_schedule_new(size_t steps,
                                        double beta_start,
                                        double beta_end,
                                        struct DiffailSchedule **out);

// # Safety
// `sched` must come from [`diffail_schedule_new`] and not be used again.
void diffail_schedule_free(struct DiffailSchedule *sched);

// # Safety
// `sched` must be a live schedule handle.
size_t diffail_schedule_steps(const struct DiffailSchedule *sched);

// `ᾱ_t` for `t` in `1..=T`.
//
// # Safety
// `sched` must be a live schedule handle and `out` writable.
enum DiffailStatus diffail_schedule_alpha_bar(const struct DiffailSchedule *sched,
                                              size_t t,
                                              double *out);

// Generates an expert dataset. `method` is "lqr" or "sac"; the SAC path
// uses the default training budget and may take a long time.
//
// # Safety
// `env` and `method` must be NUL-terminated strings; `out` writable.
enum DiffailStatus diffail_dataset_generate(const char *env,
                                            const char *method,
                                            size_t n_traj,
                                            uint64_t seed,
                                            struct DiffailDataset **out);

// # Safety
// `path` must be a NUL-terminated string; `out` writable.
enum DiffailStatus diffail_dataset_load(const char *path, struct DiffailDataset **out);

// # Safety
// `data` must be a live dataset handle and `path` a NUL-terminated string.
enum DiffailStatus diffail_dataset_save(const struct DiffailDataset *data, const char *path);

// # Safety
// `data` must come from this library and not be used again.
void diffail_dataset_free(struct DiffailDataset *data);

// Number of trajectories; 0 for NULL.
//
// # Safety
// `data` must be NULL or a live dataset handle.
size_t diffail_dataset_len(const struct DiffailDataset *data);

// Writes observation and action dimensions and the horizon.
//
// # Safety
// `data` must be a live dataset handle; the outputs writable.
enum DiffailStatus diffail_dataset_dims(const struct DiffailDataset *data,
                                        size_t *obs_dim,
                                        size_t *act_dim,
                                        size_t *horizon);

// Mean true return over all trajectories.
//
// # Safety
// `data` must be a live dataset handle and `out` writable.
enum DiffailStatus diffail_dataset_mean_return(const struct DiffailDataset *data, double *out);

// # Safety
// `path` must be a NUL-terminated string; `out` writable.
enum DiffailStatus diffail_model_load(const char *path, struct DiffailModel **out);

// # Safety
// `model` must come from this library and not be used again.
void diffail_model_free(struct DiffailModel *model);

// Width of a discriminator input row; 0 for NULL.
//
// # Safety
// `model` must be NULL or a live model handle.
size_t diffail_model_pair_dim(const struct DiffailModel *model);

// Deterministic actions for `rows` observations stored row-major in `obs`
// (`rows × obs_dim`), written to `actions` (`rows × act_dim`).
//
// # Safety
// The buffers must hold the stated number of doubles.
enum DiffailStatus diffail_model_act(const struct DiffailModel *model,
                                     const double *obs,
                                     size_t rows,
                                     size_t obs_dim,
                                     double *actions,
                                     size_t act_dim);

// Mean discriminator output `D` per pair, averaged over `draws` noise
// samples seeded from `seed` and the pair contents.
//
// # Safety
// `pairs` must hold `rows × dim` doubles and `out` `rows` doubles.
enum DiffailStatus diffail_model_discriminate(const struct DiffailModel *model,
                                              const double *pairs,
                                              size_t rows,
                                              size_t dim,
                                              size_t draws,
                                              uint64_t seed,
                                              double *out);

// Pearson correlation of two length-`n` series.
//
// # Safety
// `x` and `y` must hold `n` doubles; `out` writable.
enum DiffailStatus diffail_pearson(const double *x, const double *y, size_t n, double *out);

// Runs the command-line interface with `argc` arguments (including the
// program name). Returns its exit code, or -1 for bad arguments.
//
// # Safety
// `argv` must point to `argc` NUL-terminated strings.
int diffail_run(int argc, const char *const *argv);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DIFFAIL_H */
