//! C ABI for the evidential uncertainty library.
//!
//! All functions are `extern "C"` and panic-safe. Objects cross the boundary
//! as opaque handles (`EvModel`, `EvPrediction`) that must be released with
//! the matching `*_free` function. Every fallible call returns an `EvStatus`
//! code; on failure a human-readable message is stored in thread-local state
//! and can be read with `ev_last_error_message`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use evidential::experiment::{self, ExperimentConfig, Predictions};
use evidential::nn::{Head, Network};
use evidential::Error;
use ndarray::Array2;

/// Status codes returned by every fallible FFI call.
///
/// Nonzero codes group failures the same way the CLI exit codes do:
/// configuration problems, data/IO problems, and numerical failures.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvStatus {
    /// The call succeeded.
    EvOk = 0,
    /// A required pointer argument was null.
    EvNullPointer = 1,
    /// Invalid configuration, parameter, or dimension mismatch.
    EvInvalidArgument = 2,
    /// Data, file IO, CSV, or JSON failure.
    EvDataError = 3,
    /// Numerical or domain failure.
    EvNumericalError = 4,
    /// A string argument was not valid UTF-8.
    EvUtf8Error = 5,
    /// A panic was caught at the FFI boundary.
    EvInternalError = 6,
}

/// Uncertainty components selectable in `ev_prediction_uncertainty`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvComponent {
    EvAleatoric = 0,
    EvEpistemic = 1,
    EvTotal = 2,
}

/// Opaque handle to a trained network.
pub struct EvModel {
    net: Network,
}

/// Opaque handle to the predictions for one batch of inputs.
pub struct EvPrediction {
    inner: Predictions,
    rows: usize,
    cols: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let cleaned: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(cleaned).unwrap());
}

/// Classes for classifiers, target columns for regressors, recovered from
/// the raw output width of the head.
fn classes_or_targets(net: &Network) -> usize {
    let w = net.output_dim();
    match net.head {
        Head::EvidentialRegressor => w / 4,
        Head::GaussianRegressor => w / 2,
        _ => w,
    }
}

fn status_for(err: &Error) -> EvStatus {
    match err {
        Error::Config(_) | Error::InvalidParam(_) | Error::Dimension(_) => {
            EvStatus::EvInvalidArgument
        }
        Error::Data(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_) => EvStatus::EvDataError,
        Error::Numerical(_) | Error::Domain(_) => EvStatus::EvNumericalError,
    }
}

fn fail(err: &Error) -> EvStatus {
    set_error(&err.to_string());
    status_for(err)
}

fn invalid(msg: &str) -> EvStatus {
    set_error(msg);
    EvStatus::EvInvalidArgument
}

/// Runs `body` with panics converted to `EvInternalError`.
fn guarded<F: FnOnce() -> EvStatus>(body: F) -> EvStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic caught at FFI boundary");
            EvStatus::EvInternalError
        }
    }
}

unsafe fn read_str<'a>(ptr: *const c_char) -> Result<&'a str, EvStatus> {
    if ptr.is_null() {
        set_error("null string argument");
        return Err(EvStatus::EvNullPointer);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        EvStatus::EvUtf8Error
    })
}

/// Returns the message for the most recent error on this thread.
///
/// The pointer is owned by the library and is valid until the next failing
/// call on the same thread. Never null; empty string if no error occurred.
#[no_mangle]
pub extern "C" fn ev_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Returns the library version as a static string.
#[no_mangle]
pub extern "C" fn ev_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// Loads a model from a JSON file written by `ev_model_save` or the CLI.
///
/// On success writes a new handle to `out`; release it with `ev_model_free`.
#[no_mangle]
pub unsafe extern "C" fn ev_model_load(path: *const c_char, out: *mut *mut EvModel) -> EvStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null output pointer");
            return EvStatus::EvNullPointer;
        }
        let path = match read_str(path) {
            Ok(s) => s,
            Err(st) => return st,
        };
        match Network::load(Path::new(path)) {
            Ok(net) => {
                *out = Box::into_raw(Box::new(EvModel { net }));
                EvStatus::EvOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// Deserializes a model from a JSON string.
#[no_mangle]
pub unsafe extern "C" fn ev_model_from_json(
    json: *const c_char,
    out: *mut *mut EvModel,
) -> EvStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null output pointer");
            return EvStatus::EvNullPointer;
        }
        let text = match read_str(json) {
            Ok(s) => s,
            Err(st) => return st,
        };
        match Network::from_json(text) {
            Ok(net) => {
                *out = Box::into_raw(Box::new(EvModel { net }));
                EvStatus::EvOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// Serializes the model to a JSON file.
#[no_mangle]
pub unsafe extern "C" fn ev_model_save(model: *const EvModel, path: *const c_char) -> EvStatus {
    guarded(|| {
        let Some(model) = model.as_ref() else {
            set_error("null model handle");
            return EvStatus::EvNullPointer;
        };
        let path = match read_str(path) {
            Ok(s) => s,
            Err(st) => return st,
        };
        match model.net.save(Path::new(path)) {
            Ok(()) => EvStatus::EvOk,
            Err(e) => fail(&e),
        }
    })
}

/// Releases a model handle. Passing null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn ev_model_free(model: *mut EvModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of input features the model expects.
#[no_mangle]
pub unsafe extern "C" fn ev_model_input_dim(model: *const EvModel) -> usize {
    model.as_ref().map_or(0, |m| m.net.input_dim())
}

/// Number of classes (classifier) or target columns (regressor).
#[no_mangle]
pub unsafe extern "C" fn ev_model_output_count(model: *const EvModel) -> usize {
    model.as_ref().map_or(0, |m| classes_or_targets(&m.net))
}

/// Returns 1 for classification heads, 0 for regression heads (or null).
#[no_mangle]
pub unsafe extern "C" fn ev_model_is_classifier(model: *const EvModel) -> i32 {
    model.as_ref().map_or(0, |m| i32::from(m.net.head.is_classifier()))
}

/// Trains a model from an experiment configuration given as a JSON string.
///
/// The configuration uses the same schema as the CLI `--config` file. The
/// dataset it references is loaded, split, and the model trained exactly as
/// `evidential train` would, but nothing is written to disk.
#[no_mangle]
pub unsafe extern "C" fn ev_train_json(
    config_json: *const c_char,
    out: *mut *mut EvModel,
) -> EvStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null output pointer");
            return EvStatus::EvNullPointer;
        }
        let text = match read_str(config_json) {
            Ok(s) => s,
            Err(st) => return st,
        };
        let run = || -> evidential::Result<Network> {
            let cfg = ExperimentConfig::from_json(text, &[])?;
            let data = experiment::load_dataset(&cfg)?;
            let trained = experiment::run_train(&cfg, &data)?;
            Ok(trained.network)
        };
        match run() {
            Ok(net) => {
                *out = Box::into_raw(Box::new(EvModel { net }));
                EvStatus::EvOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// Runs the model on a row-major feature matrix of shape `n_rows x n_cols`.
///
/// On success writes a prediction handle to `out`; release it with
/// `ev_prediction_free`.
#[no_mangle]
pub unsafe extern "C" fn ev_model_predict(
    model: *const EvModel,
    features: *const f64,
    n_rows: usize,
    n_cols: usize,
    out: *mut *mut EvPrediction,
) -> EvStatus {
    guarded(|| {
        let Some(model) = model.as_ref() else {
            set_error("null model handle");
            return EvStatus::EvNullPointer;
        };
        if features.is_null() || out.is_null() {
            set_error("null features or output pointer");
            return EvStatus::EvNullPointer;
        }
        if n_rows == 0 || n_cols == 0 {
            return invalid("feature matrix must be non-empty");
        }
        if n_cols != model.net.input_dim() {
            return invalid(&format!(
                "feature matrix has {} columns but the model expects {}",
                n_cols,
                model.net.input_dim()
            ));
        }
        let slice = std::slice::from_raw_parts(features, n_rows * n_cols);
        let inputs = match Array2::from_shape_vec((n_rows, n_cols), slice.to_vec()) {
            Ok(a) => a,
            Err(e) => return invalid(&e.to_string()),
        };
        match experiment::predict(&model.net, &inputs, None) {
            Ok(inner) => {
                let cols = classes_or_targets(&model.net);
                *out = Box::into_raw(Box::new(EvPrediction { inner, rows: n_rows, cols }));
                EvStatus::EvOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// Releases a prediction handle. Passing null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn ev_prediction_free(pred: *mut EvPrediction) {
    if !pred.is_null() {
        drop(Box::from_raw(pred));
    }
}

/// Number of rows (samples) in the prediction.
#[no_mangle]
pub unsafe extern "C" fn ev_prediction_rows(pred: *const EvPrediction) -> usize {
    pred.as_ref().map_or(0, |p| p.rows)
}

/// Number of columns per row: classes for classifiers, targets for regressors.
#[no_mangle]
pub unsafe extern "C" fn ev_prediction_cols(pred: *const EvPrediction) -> usize {
    pred.as_ref().map_or(0, |p| p.cols)
}

unsafe fn copy_out(src: &[f64], dst: *mut f64, len: usize, what: &str) -> EvStatus {
    if dst.is_null() {
        set_error("null output buffer");
        return EvStatus::EvNullPointer;
    }
    if len != src.len() {
        return invalid(&format!("{what} needs a buffer of length {}, got {len}", src.len()));
    }
    std::slice::from_raw_parts_mut(dst, len).copy_from_slice(src);
    EvStatus::EvOk
}

/// Copies the point predictions into `values` (row-major, `rows * cols`).
///
/// For classifiers these are expected class probabilities; for regressors the
/// predictive means in original target units.
#[no_mangle]
pub unsafe extern "C" fn ev_prediction_values(
    pred: *const EvPrediction,
    values: *mut f64,
    len: usize,
) -> EvStatus {
    guarded(|| {
        let Some(pred) = pred.as_ref() else {
            set_error("null prediction handle");
            return EvStatus::EvNullPointer;
        };
        let flat: Vec<f64> = match &pred.inner {
            Predictions::Classifier { probs, .. } => probs.iter().cloned().collect(),
            Predictions::Regressor { prediction, .. } => prediction.iter().cloned().collect(),
        };
        copy_out(&flat, values, len, "values")
    })
}

/// Copies one per-sample uncertainty component into `values` (length `rows`).
///
/// Classifier components are summed over classes; regressor components are
/// summed over target columns (in variance units). Fails with
/// `EvInvalidArgument` for deterministic heads, which carry no decomposition.
#[no_mangle]
pub unsafe extern "C" fn ev_prediction_uncertainty(
    pred: *const EvPrediction,
    component: EvComponent,
    values: *mut f64,
    len: usize,
) -> EvStatus {
    guarded(|| {
        let Some(pred) = pred.as_ref() else {
            set_error("null prediction handle");
            return EvStatus::EvNullPointer;
        };
        let per_row: Vec<f64> = match &pred.inner {
            Predictions::Classifier { uncertainty: Some(u), .. } => {
                let arr = match component {
                    EvComponent::EvAleatoric => &u.summed_aleatoric,
                    EvComponent::EvEpistemic => &u.summed_epistemic,
                    EvComponent::EvTotal => &u.summed_total,
                };
                arr.iter().cloned().collect()
            }
            Predictions::Regressor { uncertainty: Some(u), .. } => {
                let arr = match component {
                    EvComponent::EvAleatoric => &u.aleatoric,
                    EvComponent::EvEpistemic => &u.epistemic,
                    EvComponent::EvTotal => &u.total,
                };
                arr.rows().into_iter().map(|r| r.sum()).collect()
            }
            _ => {
                return invalid("this head does not provide an uncertainty decomposition");
            }
        };
        copy_out(&per_row, values, len, "uncertainty")
    })
}

/// Copies the predictive entropy per sample into `values` (length `rows`).
///
/// Classifier heads only; fails with `EvInvalidArgument` for regressors.
#[no_mangle]
pub unsafe extern "C" fn ev_prediction_entropy(
    pred: *const EvPrediction,
    values: *mut f64,
    len: usize,
) -> EvStatus {
    guarded(|| {
        let Some(pred) = pred.as_ref() else {
            set_error("null prediction handle");
            return EvStatus::EvNullPointer;
        };
        match &pred.inner {
            Predictions::Classifier { entropy, .. } => {
                let flat: Vec<f64> = entropy.iter().cloned().collect();
                copy_out(&flat, values, len, "entropy")
            }
            Predictions::Regressor { .. } => {
                invalid("entropy is only defined for classification heads")
            }
        }
    })
}

/// Copies the belief-theoretic vacuity mass per sample into `values`
/// (length `rows`). Evidential classifiers only.
#[no_mangle]
pub unsafe extern "C" fn ev_prediction_vacuity(
    pred: *const EvPrediction,
    values: *mut f64,
    len: usize,
) -> EvStatus {
    guarded(|| {
        let Some(pred) = pred.as_ref() else {
            set_error("null prediction handle");
            return EvStatus::EvNullPointer;
        };
        match &pred.inner {
            Predictions::Classifier { dst_u: Some(u), .. } => {
                let flat: Vec<f64> = u.iter().cloned().collect();
                copy_out(&flat, values, len, "vacuity")
            }
            _ => invalid("vacuity mass is only defined for evidential classifiers"),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;
    use std::ptr;

    fn train_synthetic() -> *mut EvModel {
        let cfg = r#"{
            "dataset": {"kind": "synth_categorical", "n": 600, "k": 3, "noise_level": 0.5},
            "model": {"hidden": [16], "activation": "relu", "head": "evidential_classifier"},
            "train": {"epochs": 20, "batch_size": 64, "learning_rate": 0.005},
            "output_dir": "/tmp/evidential_ffi_out",
            "seed": 7
        }"#;
        let cfg = CString::new(cfg).unwrap();
        let mut model: *mut EvModel = ptr::null_mut();
        let status = unsafe { ev_train_json(cfg.as_ptr(), &mut model) };
        assert_eq!(status, EvStatus::EvOk, "{}", last_error());
        assert!(!model.is_null());
        model
    }

    fn last_error() -> String {
        unsafe { CStr::from_ptr(ev_last_error_message()).to_string_lossy().into_owned() }
    }

    #[test]
    fn train_predict_roundtrip() {
        let model = train_synthetic();
        unsafe {
            assert_eq!(ev_model_input_dim(model), 2);
            assert_eq!(ev_model_output_count(model), 3);
            assert_eq!(ev_model_is_classifier(model), 1);

            let features = [0.0, 3.0, -2.5, -1.2];
            let mut pred: *mut EvPrediction = ptr::null_mut();
            let status = ev_model_predict(model, features.as_ptr(), 2, 2, &mut pred);
            assert_eq!(status, EvStatus::EvOk, "{}", last_error());
            assert_eq!(ev_prediction_rows(pred), 2);
            assert_eq!(ev_prediction_cols(pred), 3);

            let mut probs = [0.0; 6];
            assert_eq!(ev_prediction_values(pred, probs.as_mut_ptr(), 6), EvStatus::EvOk);
            for row in probs.chunks(3) {
                let s: f64 = row.iter().sum();
                assert!((s - 1.0).abs() < 1e-9, "row sums to {s}");
            }

            for comp in [EvComponent::EvAleatoric, EvComponent::EvEpistemic, EvComponent::EvTotal]
            {
                let mut u = [0.0; 2];
                assert_eq!(
                    ev_prediction_uncertainty(pred, comp, u.as_mut_ptr(), 2),
                    EvStatus::EvOk
                );
                assert!(u.iter().all(|v| v.is_finite() && *v >= 0.0));
            }
            let mut ent = [0.0; 2];
            assert_eq!(ev_prediction_entropy(pred, ent.as_mut_ptr(), 2), EvStatus::EvOk);
            let mut vac = [0.0; 2];
            assert_eq!(ev_prediction_vacuity(pred, vac.as_mut_ptr(), 2), EvStatus::EvOk);
            assert!(vac.iter().all(|v| (0.0..=1.0).contains(v)));

            ev_prediction_free(pred);
            ev_model_free(model);
        }
    }

    #[test]
    fn save_load_roundtrip() {
        let model = train_synthetic();
        let dir = std::env::temp_dir().join("evidential_ffi_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.json");
        let cpath = CString::new(path.to_str().unwrap()).unwrap();
        unsafe {
            assert_eq!(ev_model_save(model, cpath.as_ptr()), EvStatus::EvOk);
            let mut back: *mut EvModel = ptr::null_mut();
            assert_eq!(ev_model_load(cpath.as_ptr(), &mut back), EvStatus::EvOk);
            assert_eq!(ev_model_input_dim(back), ev_model_input_dim(model));
            ev_model_free(back);
            ev_model_free(model);
        }
    }

    #[test]
    fn error_paths() {
        unsafe {
            let mut model: *mut EvModel = ptr::null_mut();
            // Missing file -> data error.
            let bad = CString::new("/nonexistent/model.json").unwrap();
            assert_eq!(ev_model_load(bad.as_ptr(), &mut model), EvStatus::EvDataError);
            assert!(!last_error().is_empty());
            // Null pointers.
            assert_eq!(ev_model_load(ptr::null(), &mut model), EvStatus::EvNullPointer);
            assert_eq!(ev_model_load(bad.as_ptr(), ptr::null_mut()), EvStatus::EvNullPointer);
            // Bad config -> invalid argument.
            let cfg = CString::new("{\"dataset\": {\"kind\": \"synth_categorical\", \"n\": 0}}")
                .unwrap();
            let status = ev_train_json(cfg.as_ptr(), &mut model);
            assert!(
                status == EvStatus::EvInvalidArgument || status == EvStatus::EvDataError,
                "unexpected status {status:?}: {}",
                last_error()
            );
            // Wrong feature width.
            let trained = train_synthetic();
            let features = [0.0; 3];
            let mut pred: *mut EvPrediction = ptr::null_mut();
            assert_eq!(
                ev_model_predict(trained, features.as_ptr(), 1, 3, &mut pred),
                EvStatus::EvInvalidArgument
            );
            ev_model_free(trained);
        }
    }
}
