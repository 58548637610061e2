#ifndef TVCAST_H
#define TVCAST_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

// Status codes returned by every fallible function.
typedef enum TvcStatus {
  TVC_OK = 0,
  // A required pointer argument was null.
  TVC_NULL_ARGUMENT = 1,
  // Invalid data, configuration or arguments.
  TVC_INVALID_INPUT = 2,
  // The sampler or filter hit a numerical failure.
  TVC_NUMERICAL = 3,
  // File system or parse failure.
  TVC_IO = 4,
  // A panic was caught at the boundary.
  TVC_PANIC = 5,
} TvcStatus;

// Validated observations.
typedef struct TvcDataset TvcDataset;

// Posterior draws plus their summaries.
typedef struct TvcFit TvcFit;

// Predictions for a test set.
typedef struct TvcForecast TvcForecast;

// Sampler settings for [`tvc_fit`]. Obtain defaults from
// [`tvc_fit_options_default`].
typedef struct TvcFitOptions {
  size_t n_chains;
  size_t n_warmup;
  size_t n_keep;
  uint64_t master_seed;
  // Nonzero enables the slope component.
  int32_t include_trend;
  // Worker thread cap; 0 reads `TVCAST_THREADS`, 1 runs chains in order.
  size_t threads;
} TvcFitOptions;

// Posterior summary of one parameter. Undefined diagnostics are NaN.
typedef struct TvcSummary {
  double mean;
  double sd;
  double q_low;
  double q_high;
  double rhat;
  double ess;
} TvcSummary;

// Predictive summary of one test row.
typedef struct TvcPrediction {
  size_t t;
  double y_true;
  double mean;
  double sd;
  double q_low;
  double q_high;
} TvcPrediction;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *tvc_version(void);

// Message of the last failed call on this thread, empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *tvc_last_error(void);

// Loads an observation CSV (`t,id,y,x1,..,xP`).
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum TvcStatus tvc_dataset_from_csv(const char *path,
                                    int32_t add_intercept,
                                    int32_t binary,
                                    struct TvcDataset **out);

// Builds a dataset from `n` rows: time indices `t`, outcomes `y` and a
// row-major `n × p` predictor matrix `x` (which may be null when `p` is 0).
//
// # Safety
// The arrays must hold at least `n` (`t`, `y`) and `n * p` (`x`) elements.
enum TvcStatus tvc_dataset_from_arrays(const int64_t *t,
                                       const double *y,
                                       const double *x,
                                       size_t n,
                                       size_t p,
                                       int32_t add_intercept,
                                       int32_t binary,
                                       struct TvcDataset **out);

// Number of rows, or 0 for a null handle.
//
// # Safety
// `ds` must be null or a live dataset handle.
size_t tvc_dataset_len(const struct TvcDataset *ds);

// Largest time index, or 0 for a null handle.
//
// # Safety
// `ds` must be null or a live dataset handle.
size_t tvc_dataset_n_times(const struct TvcDataset *ds);

// Predictor count including the intercept, or 0 for a null handle.
//
// # Safety
// `ds` must be null or a live dataset handle.
size_t tvc_dataset_n_predictors(const struct TvcDataset *ds);

// # Safety
// `ds` must be null or a handle not freed before.
void tvc_dataset_free(struct TvcDataset *ds);

struct TvcFitOptions tvc_fit_options_default(void);

// Fits the model to `ds`. `options` may be null for defaults.
//
// # Safety
// `ds` must be a live dataset handle, `options` null or valid, `out` valid.
enum TvcStatus tvc_fit(const struct TvcDataset *ds,
                       const struct TvcFitOptions *options,
                       struct TvcFit **out);

// Kept draws per parameter across chains, or 0 for a null handle.
//
// # Safety
// `fit` must be null or a live fit handle.
size_t tvc_fit_n_draws(const struct TvcFit *fit);

// 1 when every parameter passed the R-hat check, 0 otherwise.
//
// # Safety
// `fit` must be null or a live fit handle.
int32_t tvc_fit_converged(const struct TvcFit *fit);

// Summary of a parameter named like the draws file, e.g. `beta[3,1]` or
// `var_y`.
//
// # Safety
// `fit` must be a live fit handle, `name` NUL-terminated, `out` valid.
enum TvcStatus tvc_fit_summary(const struct TvcFit *fit, const char *name, struct TvcSummary *out);

// Writes the long-format draws CSV.
//
// # Safety
// `fit` must be a live fit handle and `path` NUL-terminated.
enum TvcStatus tvc_fit_write_draws(const struct TvcFit *fit, const char *path);

// # Safety
// `fit` must be null or a handle not freed before.
void tvc_fit_free(struct TvcFit *fit);

// Forecasts `horizon` steps past the fitted range and predicts every row of
// `test`.
//
// # Safety
// `fit` and `test` must be live handles and `out` valid.
enum TvcStatus tvc_forecast(const struct TvcFit *fit,
                            const struct TvcDataset *test,
                            size_t horizon,
                            uint64_t seed,
                            struct TvcForecast **out);

// Number of predicted rows, or 0 for a null handle.
//
// # Safety
// `fc` must be null or a live forecast handle.
size_t tvc_forecast_len(const struct TvcForecast *fc);

// Prediction for row `index` in test-set order.
//
// # Safety
// `fc` must be a live forecast handle and `out` valid.
enum TvcStatus tvc_forecast_prediction(const struct TvcForecast *fc,
                                       size_t index,
                                       struct TvcPrediction *out);

// Fraction of test outcomes inside their predictive intervals.
//
// # Safety
// `fc` must be a live forecast handle and `out` valid.
enum TvcStatus tvc_forecast_coverage(const struct TvcForecast *fc, double *out);

// # Safety
// `fc` must be null or a handle not freed before.
void tvc_forecast_free(struct TvcForecast *fc);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TVCAST_H */
