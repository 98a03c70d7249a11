//! C ABI over `revpref`.
//!
//! Datasets live behind an opaque handle. Every call returns a
//! [`RevprefStatus`]; on failure [`revpref_last_error`] holds a message for the
//! calling thread. Strings handed out by the library are released with
//! [`revpref_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use revpref::afriat::{coordination_test, proximity};
use revpref::eval::hausdorff;
use revpref::robust::{exchange_loop, RobustOptions};
use revpref::{validate_dataset, AmbiguityConfig, Dataset, Error};

/// Opaque dataset handle.
pub struct RevprefDataset {
    inner: Dataset,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RevprefStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Infeasible = 3,
    Numeric = 4,
    IterationCap = 5,
    Panic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(e: &Error) -> RevprefStatus {
    match e {
        Error::InvalidInput(_) | Error::MalformedSystem(_) | Error::EmptySet => RevprefStatus::InvalidInput,
        Error::InfeasibleAtSlack { .. } | Error::MasterInfeasible => RevprefStatus::Infeasible,
        Error::IterationCapExceeded { .. } => RevprefStatus::IterationCap,
        _ => RevprefStatus::Numeric,
    }
}

fn guard(f: impl FnOnce() -> Result<(), RevprefStatus>) -> RevprefStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RevprefStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("panic inside revpref");
            RevprefStatus::Panic
        }
    }
}

fn fail(e: Error) -> RevprefStatus {
    set_error(e.to_string());
    status_of(&e)
}

fn null(what: &str) -> RevprefStatus {
    set_error(format!("{what} is null"));
    RevprefStatus::NullPointer
}

fn config(lambda_min: f64) -> AmbiguityConfig {
    AmbiguityConfig { lambda_min, ..AmbiguityConfig::default() }
}

/// Message of the last failure on this thread, or null. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn revpref_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Parses and validates a dataset in the JSON exchange format.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn revpref_dataset_from_json(
    json: *const c_char,
    out: *mut *mut RevprefDataset,
) -> RevprefStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = CStr::from_ptr(json).to_str().map_err(|e| {
            set_error(format!("json is not UTF-8: {e}"));
            RevprefStatus::InvalidInput
        })?;
        let inner = Dataset::from_json(text).map_err(fail)?;
        validate_dataset(&inner, &AmbiguityConfig::default()).map_err(|v| {
            set_error(v.to_string());
            RevprefStatus::InvalidInput
        })?;
        *out = Box::into_raw(Box::new(RevprefDataset { inner }));
        Ok(())
    })
}

/// # Safety
/// `ds` must come from [`revpref_dataset_from_json`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn revpref_dataset_free(ds: *mut RevprefDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// # Safety
/// `ds` must be a live handle; the output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn revpref_dataset_dims(
    ds: *const RevprefDataset,
    t: *mut usize,
    m: *mut usize,
    n: *mut usize,
) -> RevprefStatus {
    guard(|| {
        let Some(d) = ds.as_ref() else { return Err(null("dataset")) };
        if t.is_null() || m.is_null() || n.is_null() {
            return Err(null("output"));
        }
        (*t, *m, *n) = (d.inner.t, d.inner.m, d.inner.n);
        Ok(())
    })
}

/// Proximity statistic of the dataset.
///
/// # Safety
/// `ds` must be a live handle and `phi` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn revpref_proximity(
    ds: *const RevprefDataset,
    lambda_min: f64,
    phi: *mut f64,
) -> RevprefStatus {
    guard(|| {
        let Some(d) = ds.as_ref() else { return Err(null("dataset")) };
        if phi.is_null() {
            return Err(null("phi"));
        }
        let cfg = config(lambda_min);
        cfg.validate().map_err(fail)?;
        *phi = proximity(&d.inner, &cfg).map_err(fail)?.phi;
        Ok(())
    })
}

/// Writes 1 to `coordinated` if the dataset passes the coordination test, else 0.
///
/// # Safety
/// `ds` must be a live handle and `coordinated` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn revpref_coordination_test(
    ds: *const RevprefDataset,
    lambda_min: f64,
    coordinated: *mut i32,
) -> RevprefStatus {
    guard(|| {
        let Some(d) = ds.as_ref() else { return Err(null("dataset")) };
        if coordinated.is_null() {
            return Err(null("coordinated"));
        }
        let cfg = config(lambda_min);
        cfg.validate().map_err(fail)?;
        *coordinated = coordination_test(&d.inner, &cfg).map_err(fail)?.is_coordinated() as i32;
        Ok(())
    })
}

/// Robust estimate as a JSON object `{psi, v, objective, cv, iterations}`.
/// Release the string with [`revpref_string_free`].
///
/// # Safety
/// `ds` must be a live handle and `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn revpref_robust_estimate(
    ds: *const RevprefDataset,
    epsilon: f64,
    delta: f64,
    radius: f64,
    out_json: *mut *mut c_char,
) -> RevprefStatus {
    guard(|| {
        let Some(d) = ds.as_ref() else { return Err(null("dataset")) };
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        let cfg = AmbiguityConfig { epsilon, delta, radius, ..AmbiguityConfig::default() };
        cfg.validate().map_err(fail)?;
        let (psi, state) = exchange_loop(&d.inner, &cfg, &RobustOptions::default()).map_err(fail)?;
        let body = serde_json::json!({
            "psi": psi,
            "v": state.incumbent_v,
            "objective": state.objective_trace.last(),
            "cv": state.cv_trace.last(),
            "iterations": state.iterations,
        });
        let text = CString::new(body.to_string()).expect("json has no NUL");
        *out_json = text.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn revpref_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Hausdorff distance between `na` and `nb` points of dimension `dim`,
/// stored row-major.
///
/// # Safety
/// `a` and `b` must point to `na * dim` and `nb * dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn revpref_hausdorff(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    dim: usize,
    out: *mut f64,
) -> RevprefStatus {
    guard(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            return Err(null("argument"));
        }
        if dim == 0 {
            set_error("dim must be positive");
            return Err(RevprefStatus::InvalidInput);
        }
        let rows = |p: *const f64, n: usize| -> Vec<Vec<f64>> {
            std::slice::from_raw_parts(p, n * dim).chunks(dim).map(<[f64]>::to_vec).collect()
        };
        *out = hausdorff(&rows(a, na), &rows(b, nb)).map_err(fail)?;
        Ok(())
    })
}
