//! C ABI for tvcast.
//!
//! Objects cross the boundary as opaque handles returned through `out`
//! pointers and released with the matching `tvc_*_free`. Every fallible call
//! returns a [`TvcStatus`]; on failure [`tvc_last_error`] describes the
//! problem for the calling thread. Panics are caught and reported as
//! `TVC_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use tvcast::diagnostics::{convergence_report, find_row, summarize, SummaryRow, DEFAULT_RHAT_THRESHOLD};
use tvcast::forecast::{evaluate, forecast_states, predict_outcomes, ForecastResult, Metrics};
use tvcast::io::read_observations;
use tvcast::sampler::{run, run_binary};
use tvcast::{validate_dataset, Dataset, DrawStore, Error, ModelConfig, OutcomeKind, ParamId, Parallelism, RawRecord};

/// Status codes returned by every fallible function.
#[repr(C)]
#[allow(non_camel_case_types)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TvcStatus {
    TVC_OK = 0,
    /// A required pointer argument was null.
    TVC_NULL_ARGUMENT = 1,
    /// Invalid data, configuration or arguments.
    TVC_INVALID_INPUT = 2,
    /// The sampler or filter hit a numerical failure.
    TVC_NUMERICAL = 3,
    /// File system or parse failure.
    TVC_IO = 4,
    /// A panic was caught at the boundary.
    TVC_PANIC = 5,
}

/// Validated observations.
pub struct TvcDataset {
    inner: Dataset,
    config: ModelConfig,
}

/// Posterior draws plus their summaries.
pub struct TvcFit {
    store: DrawStore,
    summary: Vec<SummaryRow>,
    config: ModelConfig,
    converged: bool,
}

/// Predictions for a test set.
pub struct TvcForecast {
    result: ForecastResult,
    metrics: Metrics,
}

/// Sampler settings for [`tvc_fit`]. Obtain defaults from
/// [`tvc_fit_options_default`].
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct TvcFitOptions {
    pub n_chains: usize,
    pub n_warmup: usize,
    pub n_keep: usize,
    pub master_seed: u64,
    /// Nonzero enables the slope component.
    pub include_trend: i32,
    /// Worker thread cap; 0 reads `TVCAST_THREADS`, 1 runs chains in order.
    pub threads: usize,
}

/// Posterior summary of one parameter. Undefined diagnostics are NaN.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct TvcSummary {
    pub mean: f64,
    pub sd: f64,
    pub q_low: f64,
    pub q_high: f64,
    pub rhat: f64,
    pub ess: f64,
}

/// Predictive summary of one test row.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct TvcPrediction {
    pub t: usize,
    pub y_true: f64,
    pub mean: f64,
    pub sd: f64,
    pub q_low: f64,
    pub q_high: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> TvcStatus {
    match err {
        Error::Io { .. } | Error::Csv { .. } | Error::Json { .. } => TvcStatus::TVC_IO,
        e if e.is_numerical() => TvcStatus::TVC_NUMERICAL,
        _ => TvcStatus::TVC_INVALID_INPUT,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Runs `f` behind the panic guard and translates its outcome.
fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> TvcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            TvcStatus::TVC_OK
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(&format!("null pointer passed as {what}"));
            TvcStatus::TVC_NULL_ARGUMENT
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {msg}"));
            TvcStatus::TVC_PANIC
        }
    }
}

unsafe fn non_null<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn c_str(p: *const c_char, what: &'static str) -> Result<String, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Failure::Lib(Error::Input(format!("{what} is not valid UTF-8"))))
}

fn dataset_config(add_intercept: i32, binary: i32) -> ModelConfig {
    ModelConfig {
        add_intercept: add_intercept != 0,
        outcome_kind: if binary != 0 { OutcomeKind::Binary } else { OutcomeKind::Continuous },
        ..ModelConfig::default()
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tvc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn tvc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads an observation CSV (`t,id,y,x1,..,xP`).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tvc_dataset_from_csv(
    path: *const c_char,
    add_intercept: i32,
    binary: i32,
    out: *mut *mut TvcDataset,
) -> TvcStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let path = PathBuf::from(c_str(path, "path")?);
        let config = dataset_config(add_intercept, binary);
        let inner = validate_dataset(&read_observations(&path)?, &config)?;
        *out = Box::into_raw(Box::new(TvcDataset { inner, config }));
        Ok(())
    })
}

/// Builds a dataset from `n` rows: time indices `t`, outcomes `y` and a
/// row-major `n × p` predictor matrix `x` (which may be null when `p` is 0).
///
/// # Safety
/// The arrays must hold at least `n` (`t`, `y`) and `n * p` (`x`) elements.
#[no_mangle]
pub unsafe extern "C" fn tvc_dataset_from_arrays(
    t: *const i64,
    y: *const f64,
    x: *const f64,
    n: usize,
    p: usize,
    add_intercept: i32,
    binary: i32,
    out: *mut *mut TvcDataset,
) -> TvcStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        non_null(t, "t")?;
        non_null(y, "y")?;
        if p > 0 {
            non_null(x, "x")?;
        }
        let ts = std::slice::from_raw_parts(t, n);
        let ys = std::slice::from_raw_parts(y, n);
        let xs: &[f64] = if p > 0 { std::slice::from_raw_parts(x, n * p) } else { &[] };
        let raw: Vec<RawRecord> = (0..n)
            .map(|i| RawRecord {
                t: ts[i],
                id: (i + 1).to_string(),
                y: ys[i],
                x: xs[i * p..(i + 1) * p].to_vec(),
            })
            .collect();
        let config = dataset_config(add_intercept, binary);
        let inner = validate_dataset(&raw, &config)?;
        *out = Box::into_raw(Box::new(TvcDataset { inner, config }));
        Ok(())
    })
}

/// Number of rows, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn tvc_dataset_len(ds: *const TvcDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.len())
}

/// Largest time index, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn tvc_dataset_n_times(ds: *const TvcDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.n_times())
}

/// Predictor count including the intercept, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn tvc_dataset_n_predictors(ds: *const TvcDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.n_predictors())
}

/// # Safety
/// `ds` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn tvc_dataset_free(ds: *mut TvcDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

#[no_mangle]
pub extern "C" fn tvc_fit_options_default() -> TvcFitOptions {
    let c = ModelConfig::default();
    TvcFitOptions {
        n_chains: c.n_chains,
        n_warmup: c.n_warmup,
        n_keep: c.n_keep,
        master_seed: c.master_seed,
        include_trend: i32::from(c.include_trend),
        threads: 0,
    }
}

/// Fits the model to `ds`. `options` may be null for defaults.
///
/// # Safety
/// `ds` must be a live dataset handle, `options` null or valid, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn tvc_fit(
    ds: *const TvcDataset,
    options: *const TvcFitOptions,
    out: *mut *mut TvcFit,
) -> TvcStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let ds = non_null(ds, "dataset")?;
        let opts = options.as_ref().copied().unwrap_or_else(|| tvc_fit_options_default());
        let config = ModelConfig {
            n_chains: opts.n_chains,
            n_warmup: opts.n_warmup,
            n_keep: opts.n_keep,
            master_seed: opts.master_seed,
            include_trend: opts.include_trend != 0,
            ..ds.config.clone()
        };
        let parallelism = match opts.threads {
            0 => Parallelism::from_env(),
            1 => Parallelism::Sequential,
            n => Parallelism::Threads(n),
        };
        let store = match config.outcome_kind {
            OutcomeKind::Continuous => run(&ds.inner, &config, parallelism)?,
            OutcomeKind::Binary => run_binary(&ds.inner, &config, parallelism)?,
        };
        let summary = summarize(&store, config.interval_mass)?;
        let converged = convergence_report(&summary, DEFAULT_RHAT_THRESHOLD).converged;
        *out = Box::into_raw(Box::new(TvcFit { store, summary, config, converged }));
        Ok(())
    })
}

/// Kept draws per parameter across chains, or 0 for a null handle.
///
/// # Safety
/// `fit` must be null or a live fit handle.
#[no_mangle]
pub unsafe extern "C" fn tvc_fit_n_draws(fit: *const TvcFit) -> usize {
    fit.as_ref().map_or(0, |f| f.store.n_draws())
}

/// 1 when every parameter passed the R-hat check, 0 otherwise.
///
/// # Safety
/// `fit` must be null or a live fit handle.
#[no_mangle]
pub unsafe extern "C" fn tvc_fit_converged(fit: *const TvcFit) -> i32 {
    fit.as_ref().map_or(0, |f| i32::from(f.converged))
}

/// Summary of a parameter named like the draws file, e.g. `beta[3,1]` or
/// `var_y`.
///
/// # Safety
/// `fit` must be a live fit handle, `name` NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn tvc_fit_summary(
    fit: *const TvcFit,
    name: *const c_char,
    out: *mut TvcSummary,
) -> TvcStatus {
    guard(|| {
        let fit = non_null(fit, "fit")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let name = c_str(name, "name")?;
        let id: ParamId = name.parse()?;
        let row = find_row(&fit.summary, id)
            .ok_or_else(|| Error::Input(format!("fit has no parameter {name}")))?;
        *out = TvcSummary {
            mean: row.mean,
            sd: row.sd,
            q_low: row.q_low,
            q_high: row.q_high,
            rhat: row.rhat.unwrap_or(f64::NAN),
            ess: row.ess.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

/// Writes the long-format draws CSV.
///
/// # Safety
/// `fit` must be a live fit handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tvc_fit_write_draws(fit: *const TvcFit, path: *const c_char) -> TvcStatus {
    guard(|| {
        let fit = non_null(fit, "fit")?;
        let path = PathBuf::from(c_str(path, "path")?);
        fit.store.write_csv(&path)?;
        Ok(())
    })
}

/// # Safety
/// `fit` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn tvc_fit_free(fit: *mut TvcFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Forecasts `horizon` steps past the fitted range and predicts every row of
/// `test`.
///
/// # Safety
/// `fit` and `test` must be live handles and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn tvc_forecast(
    fit: *const TvcFit,
    test: *const TvcDataset,
    horizon: usize,
    seed: u64,
    out: *mut *mut TvcForecast,
) -> TvcStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let fit = non_null(fit, "fit")?;
        let test = non_null(test, "test")?;
        let states = forecast_states(&fit.store, horizon, seed)?;
        let result = predict_outcomes(
            &states,
            &test.inner,
            fit.config.outcome_kind,
            fit.config.interval_mass,
            seed,
        )?;
        let metrics = evaluate(&result, &test.inner, None, Some(&fit.summary))?;
        *out = Box::into_raw(Box::new(TvcForecast { result, metrics }));
        Ok(())
    })
}

/// Number of predicted rows, or 0 for a null handle.
///
/// # Safety
/// `fc` must be null or a live forecast handle.
#[no_mangle]
pub unsafe extern "C" fn tvc_forecast_len(fc: *const TvcForecast) -> usize {
    fc.as_ref().map_or(0, |f| f.result.predictions.len())
}

/// Prediction for row `index` in test-set order.
///
/// # Safety
/// `fc` must be a live forecast handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn tvc_forecast_prediction(
    fc: *const TvcForecast,
    index: usize,
    out: *mut TvcPrediction,
) -> TvcStatus {
    guard(|| {
        let fc = non_null(fc, "forecast")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let p = fc.result.predictions.get(index).ok_or_else(|| {
            Error::Input(format!("index {index} out of range for {} rows", fc.result.predictions.len()))
        })?;
        *out = TvcPrediction {
            t: p.t,
            y_true: p.y_true,
            mean: p.mean,
            sd: p.sd,
            q_low: p.q_low,
            q_high: p.q_high,
        };
        Ok(())
    })
}

/// Fraction of test outcomes inside their predictive intervals.
///
/// # Safety
/// `fc` must be a live forecast handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn tvc_forecast_coverage(fc: *const TvcForecast, out: *mut f64) -> TvcStatus {
    guard(|| {
        let fc = non_null(fc, "forecast")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        *out = fc.metrics.coverage;
        Ok(())
    })
}

/// # Safety
/// `fc` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn tvc_forecast_free(fc: *mut TvcForecast) {
    if !fc.is_null() {
        drop(Box::from_raw(fc));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    #[test]
    fn errors_map_to_status_codes() {
        assert_eq!(status_of(&Error::Numerical("x".into())), TvcStatus::TVC_NUMERICAL);
        assert_eq!(status_of(&Error::EmptyDataset), TvcStatus::TVC_INVALID_INPUT);
        let io = Error::Io { path: "p".into(), source: std::io::Error::other("x") };
        assert_eq!(status_of(&io), TvcStatus::TVC_IO);
    }

    #[test]
    fn panics_are_caught() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, TvcStatus::TVC_PANIC);
        let msg = unsafe { CStr::from_ptr(tvc_last_error()) }.to_str().unwrap().to_owned();
        assert!(msg.contains("boom"));
        assert_eq!(guard(|| Ok(())), TvcStatus::TVC_OK);
        assert!(unsafe { CStr::from_ptr(tvc_last_error()) }.to_bytes().is_empty());
    }

    #[test]
    fn null_handles_are_harmless() {
        unsafe {
            assert_eq!(tvc_dataset_len(ptr::null()), 0);
            assert_eq!(tvc_fit_n_draws(ptr::null()), 0);
            tvc_dataset_free(ptr::null_mut());
            tvc_fit_free(ptr::null_mut());
            tvc_forecast_free(ptr::null_mut());
            let mut out = ptr::null_mut();
            assert_eq!(tvc_fit(ptr::null(), ptr::null(), &mut out), TvcStatus::TVC_NULL_ARGUMENT);
        }
    }
}
