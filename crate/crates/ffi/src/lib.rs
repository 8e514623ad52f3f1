//! C interface to the tsa toolkit.
//!
//! Objects cross the boundary as opaque handles created by `*_load` (or
//! `tsa_case_wscc9`) and released with the matching `*_free`. Every fallible
//! call returns a [`TsaStatus`]; on failure a message describing the error is
//! available from [`tsa_last_error_message`] on the same thread until the next
//! failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use tsa_core::dispatch::{solve_acopf, DispatchOptions};
use tsa_core::ml::{load_model, TrainedModels};
use tsa_core::netcase::NetworkCase;
use tsa_core::pipeline;
use tsa_core::scenario::{apply_scenario, LoadScenario};
use tsa_core::tdsim::{assess, DynamicSystem, FaultScan, SimConfig};
use tsa_core::Error;

/// Result of every fallible call. Values 2–5 follow the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsaStatus {
    Ok = 0,
    /// A required pointer argument was null, or a string was not UTF-8.
    InvalidArgument = 1,
    /// Invalid configuration or parameter value.
    Config = 2,
    /// Malformed or inconsistent input data (including I/O failures).
    Schema = 3,
    /// A numerical procedure failed.
    Numerical = 4,
    /// The requested operating point has no feasible solution.
    Infeasible = 5,
    /// An internal invariant broke; the handle involved should be freed.
    Internal = 6,
}

/// Loaded network case.
pub struct TsaCase(NetworkCase);

/// Loaded classifier model.
pub struct TsaModel(TrainedModels);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsaPrediction {
    /// 1 when predicted stable, 0 otherwise.
    pub stable: i32,
    /// Confidence of the stability flag, 2·|score − 0.5| in [0, 1].
    pub confidence: f64,
    /// Predicted time of instability in seconds; NaN when predicted stable
    /// or when the model has no time classifier.
    pub time_class_seconds: f64,
    /// 1 safe, 0 unsafe, -1 when no response delay was given.
    pub safe: i32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsaAssessment {
    /// 1 when the dispatch met every operating limit.
    pub feasible: i32,
    /// 1 when the machines stay in synchronism.
    pub stable: i32,
    /// First time the angle criterion is violated; -1 when stable.
    pub t_instab: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> TsaStatus {
    match e.exit_code() {
        2 => TsaStatus::Config,
        3 => TsaStatus::Schema,
        4 => TsaStatus::Numerical,
        5 => TsaStatus::Infeasible,
        _ => TsaStatus::Internal,
    }
}

/// Runs `f`, converting errors and panics into a status and stored message.
fn guard(f: impl FnOnce() -> Result<(), (TsaStatus, String)>) -> TsaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TsaStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            TsaStatus::Internal
        }
    }
}

fn core(e: Error) -> (TsaStatus, String) {
    (status_of(&e), e.to_string())
}

fn invalid(msg: &str) -> (TsaStatus, String) {
    (TsaStatus::InvalidArgument, msg.to_string())
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, (TsaStatus, String)> {
    if p.is_null() {
        return Err(invalid(&format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(&format!("{name} is not valid UTF-8")))
}

/// Message of the last failed call on this thread, or null if none. The
/// pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn tsa_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tsa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a handle to the bundled nine-bus case.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn tsa_case_wscc9(out: *mut *mut TsaCase) -> TsaStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        *out = Box::into_raw(Box::new(TsaCase(NetworkCase::wscc9())));
        Ok(())
    })
}

/// Loads and validates a case file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tsa_case_load(path: *const c_char, out: *mut *mut TsaCase) -> TsaStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        let case = NetworkCase::from_file(Path::new(path)).map_err(core)?;
        *out = Box::into_raw(Box::new(TsaCase(case)));
        Ok(())
    })
}

/// Number of loads, i.e. the coefficient count expected by [`tsa_assess`].
///
/// # Safety
/// `case` must be a live handle or null (null yields 0).
#[no_mangle]
pub unsafe extern "C" fn tsa_case_n_loads(case: *const TsaCase) -> usize {
    case.as_ref().map_or(0, |c| c.0.loads.len())
}

/// Releases a case handle. Null is ignored.
///
/// # Safety
/// `case` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tsa_case_free(case: *mut TsaCase) {
    if !case.is_null() {
        drop(Box::from_raw(case));
    }
}

/// Dispatches the case with every load scaled by its coefficient, applies a
/// three-phase fault on `branch_id` cleared after `t_clear` seconds by
/// tripping the branch, and labels the outcome with default simulation
/// settings.
///
/// # Safety
/// `case` must be a live handle; `coeffs` must point to `n_coeffs` doubles;
/// `branch_id` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tsa_assess(
    case: *const TsaCase,
    coeffs: *const f64,
    n_coeffs: usize,
    branch_id: *const c_char,
    t_clear: f64,
    out: *mut TsaAssessment,
) -> TsaStatus {
    guard(|| {
        let case = &case.as_ref().ok_or_else(|| invalid("case is null"))?.0;
        if coeffs.is_null() || out.is_null() {
            return Err(invalid("coeffs or out is null"));
        }
        let branch = str_arg(branch_id, "branch_id")?;
        let scenario = LoadScenario {
            id: 0,
            coeffs: std::slice::from_raw_parts(coeffs, n_coeffs).to_vec(),
        };
        let loads = apply_scenario(case, &scenario).map_err(core)?;
        let dispatch = solve_acopf(case, &loads, &DispatchOptions::default()).map_err(core)?;
        let scan = FaultScan {
            branches: vec![branch.to_string()],
            t_clear,
            ..FaultScan::default()
        };
        let fault = scan.faults(case).map_err(core)?.remove(0);
        let sys = DynamicSystem::new(case, &dispatch.solution).map_err(core)?;
        let label = assess(&sys, 0, &fault, &SimConfig::default()).map_err(core)?;
        *out = TsaAssessment {
            feasible: dispatch.feasible as i32,
            stable: label.stable as i32,
            t_instab: label.t_instab,
        };
        Ok(())
    })
}

/// Loads a model file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tsa_model_load(path: *const c_char, out: *mut *mut TsaModel) -> TsaStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        let m = load_model(Path::new(path)).map_err(core)?;
        *out = Box::into_raw(Box::new(TsaModel(m)));
        Ok(())
    })
}

/// Length of the raw feature row expected by [`tsa_predict`].
///
/// # Safety
/// `model` must be a live handle or null (null yields 0).
#[no_mangle]
pub unsafe extern "C" fn tsa_model_n_features(model: *const TsaModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.feature_names.len())
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tsa_model_free(model: *mut TsaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Predicts from one raw (unstandardized) feature row. Pass NaN as `tau` to
/// skip the safety flag.
///
/// # Safety
/// `model` must be a live handle; `features` must point to `n_features`
/// doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tsa_predict(
    model: *const TsaModel,
    features: *const f64,
    n_features: usize,
    tau: f64,
    out: *mut TsaPrediction,
) -> TsaStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| invalid("model is null"))?.0;
        if features.is_null() || out.is_null() {
            return Err(invalid("features or out is null"));
        }
        let x = std::slice::from_raw_parts(features, n_features);
        let tau = (!tau.is_nan()).then_some(tau);
        let p = pipeline::predict(m, x, tau).map_err(core)?;
        let secs = match &p.time_class {
            Some(c) => tsa_core::features::label_seconds(c).map_err(core)?,
            None => f64::NAN,
        };
        *out = TsaPrediction {
            stable: p.stable as i32,
            confidence: p.confidence,
            time_class_seconds: secs,
            safe: p.safe.map_or(-1, |s| s as i32),
        };
        Ok(())
    })
}
