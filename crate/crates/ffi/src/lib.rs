//! C ABI over the `qdhole` simulator.
//!
//! Objects are opaque handles created and released through this interface.
//! Every fallible call returns a status code; on failure the message is kept
//! per thread and can be read with [`qdh_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use qdhole::config::RunConfig;
use qdhole::experiments::analysis::{analyze, Analysis};
use qdhole::experiments::{self, ExperimentKind, SweepResult};
use qdhole::output::{self, Provenance};
use qdhole::Error;

/// Success.
pub const QDH_OK: i32 = 0;
/// Invalid configuration, parameter out of domain or bad pulse sequence.
pub const QDH_ERR_CONFIG: i32 = 1;
/// Integration, calibration or I/O failure.
pub const QDH_ERR_RUNTIME: i32 = 2;
/// A fit did not converge.
pub const QDH_ERR_FIT: i32 = 3;
/// Null pointer, invalid UTF-8, index out of range or internal panic.
pub const QDH_ERR_INVALID: i32 = -1;

/// Run configuration.
pub struct QdhConfig {
    inner: RunConfig,
}

/// Result of one sweep together with its analysis.
pub struct QdhResult {
    result: SweepResult,
    analysis: Analysis,
    provenance: Provenance,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(e: Error) -> i32 {
    set_error(&e.to_string());
    e.exit_code()
}

fn invalid(msg: &str) -> i32 {
    set_error(msg);
    QDH_ERR_INVALID
}

fn guard(f: impl FnOnce() -> i32) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => code,
        Err(_) => invalid("internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, i32> {
    if p.is_null() {
        return Err(invalid(&format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(&format!("{what} is not valid UTF-8")))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map(CString::into_raw).unwrap_or(ptr::null_mut())
}

/// Message of the last failed call on this thread, or an empty string.
///
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn qdh_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qdh_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Create a configuration holding the built-in defaults.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn qdh_config_default(out: *mut *mut QdhConfig) -> i32 {
    guard(|| {
        if out.is_null() {
            return invalid("out is null");
        }
        *out = Box::into_raw(Box::new(QdhConfig { inner: RunConfig::default() }));
        QDH_OK
    })
}

/// Parse a TOML configuration. The setup and sweeps are validated here.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qdh_config_from_toml(toml: *const c_char, out: *mut *mut QdhConfig) -> i32 {
    guard(|| {
        if out.is_null() {
            return invalid("out is null");
        }
        *out = ptr::null_mut();
        let text = match str_arg(toml, "toml") {
            Ok(s) => s,
            Err(c) => return c,
        };
        let cfg = match RunConfig::from_toml(text).and_then(|c| {
            c.validate_sweeps()?;
            c.setup()?;
            Ok(c)
        }) {
            Ok(c) => c,
            Err(e) => return fail(e),
        };
        *out = Box::into_raw(Box::new(QdhConfig { inner: cfg }));
        QDH_OK
    })
}

/// Override seed and shots per point; zero shots keeps the configured value.
///
/// # Safety
/// `cfg` must be a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn qdh_config_set_run(cfg: *mut QdhConfig, seed: u64, shots_per_point: u64) -> i32 {
    guard(|| {
        let Some(cfg) = cfg.as_mut() else {
            return invalid("cfg is null");
        };
        cfg.inner.experiment.seed = seed;
        if shots_per_point > 0 {
            cfg.inner.experiment.shots_per_point = shots_per_point;
        }
        QDH_OK
    })
}

/// Resolved configuration as TOML. Free with [`qdh_string_free`].
///
/// # Safety
/// `cfg` must be a handle from this library and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qdh_config_to_toml(cfg: *const QdhConfig, out: *mut *mut c_char) -> i32 {
    guard(|| {
        let (Some(cfg), false) = (cfg.as_ref(), out.is_null()) else {
            return invalid("null argument");
        };
        match cfg.inner.to_toml() {
            Ok(s) => {
                *out = into_c_string(s);
                QDH_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Release a configuration. Null is ignored.
///
/// # Safety
/// `cfg` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qdh_config_free(cfg: *mut QdhConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Run the experiment `kind` (e.g. "ramsey", "pump-scan") and analyse it.
///
/// A fit that fails to converge is recorded in the result, not reported here.
///
/// # Safety
/// `cfg` must be a handle, `kind` a NUL-terminated string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qdh_run(cfg: *const QdhConfig, kind: *const c_char, out: *mut *mut QdhResult) -> i32 {
    guard(|| {
        let (Some(cfg), false) = (cfg.as_ref(), out.is_null()) else {
            return invalid("null argument");
        };
        *out = ptr::null_mut();
        let kind = match str_arg(kind, "kind") {
            Ok(s) => s,
            Err(c) => return c,
        };
        let run = || -> qdhole::Result<QdhResult> {
            let kind: ExperimentKind = kind.parse()?;
            let setup = cfg.inner.setup()?;
            let exp = cfg.inner.experiment(kind, &setup)?;
            let result = experiments::run(&setup, &exp)?;
            let analysis = analyze(&result, &setup.for_species(exp.charge_species))?;
            let provenance = Provenance::new(exp.seed, cfg.inner.echo()?);
            Ok(QdhResult { result, analysis, provenance })
        };
        match run() {
            Ok(r) => {
                *out = Box::into_raw(Box::new(r));
                QDH_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Release a result. Null is ignored.
///
/// # Safety
/// `res` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qdh_result_free(res: *mut QdhResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

/// Number of sweep points per series, or 0 for a null handle.
///
/// # Safety
/// `res` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn qdh_result_points(res: *const QdhResult) -> usize {
    res.as_ref().map_or(0, |r| r.result.n_points())
}

/// Number of scan directions in the result, or 0 for a null handle.
///
/// # Safety
/// `res` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn qdh_result_series(res: *const QdhResult) -> usize {
    res.as_ref().map_or(0, |r| r.result.series.len())
}

/// Copy the mean counts per shot of `series` into `buf`, which must hold
/// `qdh_result_points` values.
///
/// # Safety
/// `res` must be a handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn qdh_result_counts(res: *const QdhResult, series: usize, buf: *mut f64, len: usize) -> i32 {
    guard(|| {
        let (Some(r), false) = (res.as_ref(), buf.is_null()) else {
            return invalid("null argument");
        };
        let Some(s) = r.result.series.get(series) else {
            return invalid("series index out of range");
        };
        if len < s.mean_counts.len() {
            return invalid("buffer too short");
        }
        ptr::copy_nonoverlapping(s.mean_counts.as_ptr(), buf, s.mean_counts.len());
        QDH_OK
    })
}

/// Look up a derived quantity such as "t2star_s" or "fidelity".
///
/// # Safety
/// `res` must be a handle, `key` a NUL-terminated string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qdh_result_derived(res: *const QdhResult, key: *const c_char, out: *mut f64) -> i32 {
    guard(|| {
        let (Some(r), false) = (res.as_ref(), out.is_null()) else {
            return invalid("null argument");
        };
        let key = match str_arg(key, "key") {
            Ok(s) => s,
            Err(c) => return c,
        };
        match r.analysis.derived.get(key) {
            Some(v) => {
                *out = *v;
                QDH_OK
            }
            None => invalid(&format!("no derived quantity '{key}'")),
        }
    })
}

/// [`QDH_ERR_FIT`] when any fit of the result failed, otherwise [`QDH_OK`].
///
/// # Safety
/// `res` must be a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn qdh_result_require_fits(res: *const QdhResult) -> i32 {
    guard(|| {
        let Some(r) = res.as_ref() else {
            return invalid("res is null");
        };
        match r.analysis.require_fits() {
            Ok(()) => QDH_OK,
            Err(e) => fail(e),
        }
    })
}

/// The result as CSV with its provenance header. Free with [`qdh_string_free`].
///
/// # Safety
/// `res` must be a handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qdh_result_csv(res: *const QdhResult, out: *mut *mut c_char) -> i32 {
    guard(|| {
        let (Some(r), false) = (res.as_ref(), out.is_null()) else {
            return invalid("null argument");
        };
        *out = into_c_string(output::csv(&r.result, &r.provenance));
        QDH_OK
    })
}

/// The JSON report of the result. Free with [`qdh_string_free`].
///
/// # Safety
/// `res` must be a handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qdh_result_report(res: *const QdhResult, out: *mut *mut c_char) -> i32 {
    guard(|| {
        let (Some(r), false) = (res.as_ref(), out.is_null()) else {
            return invalid("null argument");
        };
        match output::report(&r.result, &r.analysis, &r.provenance, None) {
            Ok(s) => {
                *out = into_c_string(s);
                QDH_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qdh_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
