//! C interface to `wright-core`.
//!
//! Objects cross the boundary as opaque pointers released by the matching
//! `wright_*_free`. Every fallible function returns a
//! [`WrightStatus`]; on failure `wright_last_error()` describes the problem
//! (per thread, valid until the next failing call on that thread). Strings
//! returned through out-parameters must be freed with
//! `wright_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use wright_core::counterfactual::{apply_tariff, TariffScenario};
use wright_core::dag::{build_wright_dag, d_separated, Dag, SeparationQuery};
use wright_core::error::{Error, ErrorClass};
use wright_core::gmm::{cue_objective, GmmFit, MomentSystem, OmegaKind, Theta};
use wright_core::harness::{self, EstimatorConfig, ExperimentConfig};
use wright_core::partialing::partial_out;
use wright_core::Dataset;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WrightStatus {
    Ok = 0,
    NullPointer = 1,
    /// Bad argument, configuration or schema.
    InvalidArgument = 2,
    /// Rank deficiency, singular covariance, degenerate system.
    Numerical = 3,
    Io = 4,
    /// A Rust panic was caught at the boundary.
    Internal = 5,
}

/// A market dataset.
pub struct WrightDataset(Dataset);

/// A fitted GMM or CUE model.
pub struct WrightFit(GmmFit);

/// A causal graph.
pub struct WrightDag(Dag);

/// Tariff counterfactual outcome; welfare terms are ratios to base revenue.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WrightTariffOutcome {
    pub pass_through_c: f64,
    pub delta_p: f64,
    pub delta_y: f64,
    pub p_star: f64,
    pub y_star: f64,
    pub cs_change_ratio: f64,
    pub revenue_ratio: f64,
    pub welfare_sum: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> WrightStatus {
    match e.class() {
        ErrorClass::Config => WrightStatus::InvalidArgument,
        ErrorClass::Numerical => WrightStatus::Numerical,
        ErrorClass::Io => WrightStatus::Io,
    }
}

struct Fail(WrightStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(WrightStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> WrightStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => WrightStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            WrightStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(WrightStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("nul bytes removed").into_raw()
}

/// Message for the most recent failure on this thread, or NULL. Owned by
/// the library.
#[no_mangle]
pub extern "C" fn wright_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn wright_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Simulates `n` markets from a JSON experiment config (`"{}"` gives the
/// defaults) with the given seed.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wright_dataset_simulate(
    config_json: *const c_char,
    n: usize,
    seed: u64,
    out: *mut *mut WrightDataset,
) -> WrightStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let mut cfg = ExperimentConfig::from_json(str_arg(config_json, "config_json")?)?;
        cfg.dgp.n = n;
        cfg.validate()?;
        let data = harness::simulate(&cfg, seed)?;
        *out = Box::into_raw(Box::new(WrightDataset(data)));
        Ok(())
    })
}

/// Reads a dataset CSV (`P,Y,ZD1..,ZS1..,W1..`).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wright_dataset_read_csv(
    path: *const c_char,
    add_constant: bool,
    out: *mut *mut WrightDataset,
) -> WrightStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let data = harness::load_dataset(Path::new(str_arg(path, "path")?), add_constant)?;
        *out = Box::into_raw(Box::new(WrightDataset(data)));
        Ok(())
    })
}

/// Number of observations, or 0 for NULL.
///
/// # Safety
/// `data` must be NULL or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn wright_dataset_len(data: *const WrightDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.len())
}

/// # Safety
/// `data` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn wright_dataset_free(data: *mut WrightDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Estimates the elasticities. `estimator_json` is an estimator config
/// object (NULL or `"{}"` for the defaults: two-step GMM, centered
/// covariance, least-squares partialing).
///
/// # Safety
/// `data` must be a live handle; `estimator_json` NULL or NUL-terminated;
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wright_estimate(
    data: *const WrightDataset,
    estimator_json: *const c_char,
    out: *mut *mut WrightFit,
) -> WrightStatus {
    guard(|| {
        let data = handle(data, "data")?;
        let out = out_arg(out, "out")?;
        let cfg: EstimatorConfig = if estimator_json.is_null() {
            EstimatorConfig::default()
        } else {
            let text = format!(r#"{{"estimator": {}}}"#, str_arg(estimator_json, "estimator_json")?);
            ExperimentConfig::from_json(&text)?.estimator
        };
        let fit = harness::estimate(&data.0, &cfg)?;
        *out = Box::into_raw(Box::new(WrightFit(fit)));
        Ok(())
    })
}

/// # Safety
/// `fit` must be a live handle; `a` and `b` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn wright_fit_theta(fit: *const WrightFit, a: *mut f64, b: *mut f64) -> WrightStatus {
    guard(|| {
        let t = handle(fit, "fit")?.0.theta_hat;
        *out_arg(a, "a")? = t.a;
        *out_arg(b, "b")? = t.b;
        Ok(())
    })
}

/// # Safety
/// `fit` must be a live handle; `se_a` and `se_b` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn wright_fit_std_errors(fit: *const WrightFit, se_a: *mut f64, se_b: *mut f64) -> WrightStatus {
    guard(|| {
        let t = handle(fit, "fit")?.0.std_errors;
        *out_arg(se_a, "se_a")? = t.a;
        *out_arg(se_b, "se_b")? = t.b;
        Ok(())
    })
}

/// Full fit as JSON; free the result with `wright_string_free`.
///
/// # Safety
/// `fit` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wright_fit_to_json(fit: *const WrightFit, out: *mut *mut c_char) -> WrightStatus {
    guard(|| {
        let fit = handle(fit, "fit")?;
        let out = out_arg(out, "out")?;
        *out = to_c_string(fit.0.to_json()?);
        Ok(())
    })
}

/// # Safety
/// `fit` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn wright_fit_free(fit: *mut WrightFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Anderson-Rubin statistic `S(a, b)` on least-squares partialed data with
/// the centered covariance.
///
/// # Safety
/// `data` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wright_ar_statistic(data: *const WrightDataset, a: f64, b: f64, out: *mut f64) -> WrightStatus {
    guard(|| {
        let data = handle(data, "data")?;
        let out = out_arg(out, "out")?;
        let ms = MomentSystem::build(&partial_out(&data.0)?)?;
        *out = ms.n() as f64 * cue_objective(&ms, Theta::new(a, b), OmegaKind::IidCentered)?;
        Ok(())
    })
}

/// Equilibrium and welfare effects of a tariff `tau` from a zero baseline.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wright_apply_tariff(
    alpha1: f64,
    beta1: f64,
    tau: f64,
    out: *mut WrightTariffOutcome,
) -> WrightStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let o = apply_tariff(&TariffScenario::new(alpha1, beta1, tau))?;
        *out = WrightTariffOutcome {
            pass_through_c: o.pass_through_c,
            delta_p: o.delta_p,
            delta_y: o.delta_y,
            p_star: o.p_star,
            y_star: o.y_star,
            cs_change_ratio: o.cs_change_ratio,
            revenue_ratio: o.revenue_ratio,
            welfare_sum: o.welfare_sum,
        };
        Ok(())
    })
}

/// The built-in demand/supply graph, optionally with the control node `W`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wright_dag_builtin(include_w: bool, out: *mut *mut WrightDag) -> WrightStatus {
    guard(|| {
        *out_arg(out, "out")? = Box::into_raw(Box::new(WrightDag(build_wright_dag(include_w))));
        Ok(())
    })
}

/// Parses the edge-list text format (`parent -> child`, `latent: A, B`).
///
/// # Safety
/// `text` must be NUL-terminated; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wright_dag_parse(text: *const c_char, out: *mut *mut WrightDag) -> WrightStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let dag = Dag::parse(str_arg(text, "text")?)?;
        *out = Box::into_raw(Box::new(WrightDag(dag)));
        Ok(())
    })
}

/// # Safety
/// `dag` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn wright_dag_free(dag: *mut WrightDag) {
    if !dag.is_null() {
        drop(Box::from_raw(dag));
    }
}

fn labels(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(String::from).collect()
}

/// Whether `x` and `y` are d-separated given `z`. Each set is a
/// comma-separated list of node labels; `z` may be NULL or empty.
///
/// # Safety
/// `dag` must be a live handle; `x`, `y` NUL-terminated; `z` NULL or
/// NUL-terminated; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wright_dag_d_separated(
    dag: *const WrightDag,
    x: *const c_char,
    y: *const c_char,
    z: *const c_char,
    out: *mut bool,
) -> WrightStatus {
    guard(|| {
        let dag = handle(dag, "dag")?;
        let out = out_arg(out, "out")?;
        let q = SeparationQuery {
            x: labels(str_arg(x, "x")?),
            y: labels(str_arg(y, "y")?),
            z: if z.is_null() { vec![] } else { labels(str_arg(z, "z")?) },
        };
        *out = d_separated(&dag.0, &q)?;
        Ok(())
    })
}
