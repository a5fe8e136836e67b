#ifndef EVIDENTIAL_H
#define EVIDENTIAL_H

/* Generated by cbindgen from the evidential-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Uncertainty components selectable in `ev_prediction_uncertainty`.
typedef enum EvComponent {
  EV_ALEATORIC = 0,
  EV_EPISTEMIC = 1,
  EV_TOTAL = 2,
} EvComponent;

// Status codes returned by every fallible FFI call.
//
// Nonzero codes group failures the same way the CLI exit codes do:
// configuration problems, data/IO problems, and numerical failures.
typedef enum EvStatus {
  // The call succeeded.
  EV_OK = 0,
  // A required pointer argument was null.
  EV_NULL_POINTER = 1,
  // Invalid configuration, parameter, or dimension mismatch.
  EV_INVALID_ARGUMENT = 2,
  // Data, file IO, CSV, or JSON failure.
  EV_DATA_ERROR = 3,
  // Numerical or domain failure.
  EV_NUMERICAL_ERROR = 4,
  // A string argument was not valid UTF-8.
  EV_UTF8_ERROR = 5,
  // A panic was caught at the FFI boundary.
  EV_INTERNAL_ERROR = 6,
} EvStatus;

// Opaque handle to a trained network.
typedef struct EvModel EvModel;

// Opaque handle to the predictions for one batch of inputs.
typedef struct EvPrediction EvPrediction;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Returns the message for the most recent error on this thread.
//
// The pointer is owned by the library and is valid until the next failing
// call on the same thread. Never null; empty string if no error occurred.
const char *ev_last_error_message(void);

// Returns the library version as a static string.
const char *ev_version(void);

// Loads a model from a JSON file written by `ev_model_save` or the CLI.
//
// On success writes a new handle to `out`; release it with `ev_model_free`.
enum EvStatus ev_model_load(const char *path, struct EvModel **out);

// Deserializes a model from a JSON string.
enum EvStatus ev_model_from_json(const char *json, struct EvModel **out);

// Serializes the model to a JSON file.
enum EvStatus ev_model_save(const struct EvModel *model, const char *path);

// Releases a model handle. Passing null is a no-op.
void ev_model_free(struct EvModel *model);

// Number of input features the model expects.
size_t ev_model_input_dim(const struct EvModel *model);

// Number of classes (classifier) or target columns (regressor).
size_t ev_model_output_count(const struct EvModel *model);

// Returns 1 for classification heads, 0 for regression heads (or null).
int32_t ev_model_is_classifier(const struct EvModel *model);

// Trains a model from an experiment configuration given as a JSON string.
//
// The configuration uses the same schema as the CLI `--config` file. The
// dataset it references is loaded, split, and the model trained exactly as
// `evidential train` would, but nothing is written to disk.
enum EvStatus ev_train_json(const char *config_json, struct EvModel **out);

// Runs the model on a row-major feature matrix of shape `n_rows x n_cols`.
//
// On success writes a prediction handle to `out`; release it with
// `ev_prediction_free`.
enum EvStatus ev_model_predict(const struct EvModel *model,
                               const double *features,
                               size_t n_rows,
                               size_t n_cols,
                               struct EvPrediction **out);

// Releases a prediction handle. Passing null is a no-op.
void ev_prediction_free(struct EvPrediction *pred);

// Number of rows (samples) in the prediction.
size_t ev_prediction_rows(const struct EvPrediction *pred);

// Number of columns per row: classes for classifiers, targets for regressors.
size_t ev_prediction_cols(const struct EvPrediction *pred);

// Copies the point predictions into `values` (row-major, `rows * cols`).
//
// For classifiers these are expected class probabilities; for regressors the
// predictive means in original target units.
enum EvStatus ev_prediction_values(const struct EvPrediction *pred, double *values, size_t len);

// Copies one per-sample uncertainty component into `values` (length `rows`).
//
// Classifier components are summed over classes; regressor components are
// summed over target columns (in variance units). Fails with
// `EvInvalidArgument` for deterministic heads, which carry no decomposition.
enum EvStatus ev_prediction_uncertainty(const struct EvPrediction *pred,
                                        enum EvComponent component,
                                        double *values,
                                        size_t len);

// Copies the predictive entropy per sample into `values` (length `rows`).
//
// Classifier heads only; fails with `EvInvalidArgument` for regressors.
enum EvStatus ev_prediction_entropy(const struct EvPrediction *pred, double *values, size_t len);

// Copies the belief-theoretic vacuity mass per sample into `values`
// (length `rows`). Evidential classifiers only.
enum EvStatus ev_prediction_vacuity(const struct EvPrediction *pred, double *values, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EVIDENTIAL_H */
