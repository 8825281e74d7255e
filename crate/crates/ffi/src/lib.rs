//! C ABI for rfd-core.
//!
//! Handles are opaque and owned by the caller once returned; release them with the
//! matching `*_free` function. Every fallible call returns an `RfdStatus`; the message
//! of the most recent failure on the calling thread is available from `rfd_last_error`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use rfd_core::cli::{
    cmd_certify, cmd_demo, cmd_design, cmd_oracle, demo_config, exit_code, DemoName,
};
use rfd_core::config::RunConfig;
use rfd_core::report::Report;
use rfd_core::RfdError;

/// Status codes; the nonnegative values match the `rfd` exit codes.
#[repr(i32)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RfdStatus {
    Ok = 0,
    Error = 1,
    ConfigError = 2,
    Unconverged = 3,
    CapExceeded = 4,
    NullPointer = -1,
    InvalidArgument = -2,
    Panic = -3,
}

/// Parsed run configuration.
pub struct RfdConfig {
    inner: RunConfig,
}

/// Result of a design, certify, oracle or demo run.
pub struct RfdReport {
    inner: Report,
}

/// Numeric content of one design row.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct RfdRow {
    pub lambda: f64,
    pub n_actuators: usize,
    pub n_sensors: usize,
    pub n_links: usize,
    pub closed_loop_h2: f64,
    pub relative_degradation_pct: f64,
    pub objective: f64,
    pub kkt_residual: f64,
    pub converged: bool,
}

/// Headline quantities of one certificate; absent values are NaN.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct RfdCertificate {
    pub t: usize,
    pub v: usize,
    pub tau: usize,
    pub gamma: f64,
    pub beta_upper: f64,
    pub nu: f64,
    pub snr_threshold: f64,
    pub eta: f64,
    pub lambda_sufficient: f64,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub error_bound: f64,
    pub observed_error: f64,
    pub assumption1: bool,
    pub theorem2_support: bool,
    pub corollary1: bool,
    pub theorem3: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = CString::new(msg.into().replace('\0', " ")).expect("interior nuls removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(s));
}

fn fail(status: RfdStatus, msg: impl Into<String>) -> RfdStatus {
    set_error(msg);
    status
}

fn from_core(e: &RfdError) -> RfdStatus {
    let status = match exit_code(e) {
        2 => RfdStatus::ConfigError,
        4 => RfdStatus::CapExceeded,
        _ => RfdStatus::Error,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> RfdStatus) -> RfdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(RfdStatus::Panic, msg)
        }
    }
}

unsafe fn emit_report(res: rfd_core::Result<Report>, out: *mut *mut RfdReport) -> RfdStatus {
    match res {
        Ok(r) => {
            let converged = r.all_converged();
            *out = Box::into_raw(Box::new(RfdReport { inner: r }));
            if converged {
                RfdStatus::Ok
            } else {
                fail(
                    RfdStatus::Unconverged,
                    "some solves did not converge; the report is still returned",
                )
            }
        }
        Err(e) => from_core(&e),
    }
}

/// Message of the last failure on this thread, or null. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn rfd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rfd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Parses a JSON run configuration.
///
/// # Safety
/// `json` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rfd_config_from_json(
    json: *const c_char,
    out: *mut *mut RfdConfig,
) -> RfdStatus {
    guard(|| {
        if json.is_null() || out.is_null() {
            return fail(RfdStatus::NullPointer, "null argument");
        }
        let text = match CStr::from_ptr(json).to_str() {
            Ok(t) => t,
            Err(_) => return fail(RfdStatus::InvalidArgument, "config is not UTF-8"),
        };
        match RunConfig::from_json(text) {
            Ok(c) => {
                *out = Box::into_raw(Box::new(RfdConfig { inner: c }));
                RfdStatus::Ok
            }
            Err(e) => from_core(&e),
        }
    })
}

/// Design config of a built-in demo: `0` chain10, `1` network11.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rfd_config_demo(
    name: i32,
    seed: u64,
    out: *mut *mut RfdConfig,
) -> RfdStatus {
    guard(|| {
        if out.is_null() {
            return fail(RfdStatus::NullPointer, "null argument");
        }
        let Some(name) = demo_name(name) else {
            return fail(RfdStatus::InvalidArgument, format!("unknown demo {name}"));
        };
        *out = Box::into_raw(Box::new(RfdConfig {
            inner: demo_config(name, seed),
        }));
        RfdStatus::Ok
    })
}

fn demo_name(name: i32) -> Option<DemoName> {
    match name {
        0 => Some(DemoName::Chain10),
        1 => Some(DemoName::Network11),
        _ => None,
    }
}

/// # Safety
/// `cfg` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn rfd_config_free(cfg: *mut RfdConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs the λ sweep. An unconverged run still stores the report and returns `Unconverged`.
///
/// # Safety
/// `cfg` must be a live config handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rfd_design(cfg: *const RfdConfig, out: *mut *mut RfdReport) -> RfdStatus {
    guard(|| {
        if cfg.is_null() || out.is_null() {
            return fail(RfdStatus::NullPointer, "null argument");
        }
        emit_report(cmd_design(&(*cfg).inner), out)
    })
}

/// Certificates for every pair of `ts[0..nt]` × `vs[0..nv]`; empty lists use the configured values.
///
/// # Safety
/// `cfg` must be a live config handle, `out` a valid pointer, and `ts`/`vs` valid for
/// `nt`/`nv` reads (they may be null when the count is zero).
#[no_mangle]
pub unsafe extern "C" fn rfd_certify(
    cfg: *const RfdConfig,
    ts: *const usize,
    nt: usize,
    vs: *const usize,
    nv: usize,
    out: *mut *mut RfdReport,
) -> RfdStatus {
    guard(|| {
        if cfg.is_null() || out.is_null() || (ts.is_null() && nt > 0) || (vs.is_null() && nv > 0) {
            return fail(RfdStatus::NullPointer, "null argument");
        }
        let slice = |p: *const usize, n: usize| {
            if n == 0 {
                &[][..]
            } else {
                std::slice::from_raw_parts(p, n)
            }
        };
        emit_report(
            cmd_certify(&(*cfg).inner, slice(ts, nt), slice(vs, nv)),
            out,
        )
    })
}

/// Ranking of all architectures with at most `s` groups.
///
/// # Safety
/// `cfg` must be a live config handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rfd_oracle(
    cfg: *const RfdConfig,
    s: usize,
    out: *mut *mut RfdReport,
) -> RfdStatus {
    guard(|| {
        if cfg.is_null() || out.is_null() {
            return fail(RfdStatus::NullPointer, "null argument");
        }
        emit_report(cmd_oracle(&(*cfg).inner, s), out)
    })
}

/// Full demo run: `0` chain10, `1` network11.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rfd_demo(name: i32, seed: u64, out: *mut *mut RfdReport) -> RfdStatus {
    guard(|| {
        if out.is_null() {
            return fail(RfdStatus::NullPointer, "null argument");
        }
        let Some(name) = demo_name(name) else {
            return fail(RfdStatus::InvalidArgument, format!("unknown demo {name}"));
        };
        emit_report(cmd_demo(name, seed), out)
    })
}

/// # Safety
/// `report` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn rfd_report_free(report: *mut RfdReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Number of design rows, or 0 for a null handle.
///
/// # Safety
/// `report` must be null or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn rfd_report_row_count(report: *const RfdReport) -> usize {
    report.as_ref().map_or(0, |r| r.inner.rows.len())
}

/// Copies row `i` into `out`.
///
/// # Safety
/// `report` must be a live report handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rfd_report_row(
    report: *const RfdReport,
    i: usize,
    out: *mut RfdRow,
) -> RfdStatus {
    guard(|| {
        let (Some(r), false) = (report.as_ref(), out.is_null()) else {
            return fail(RfdStatus::NullPointer, "null argument");
        };
        let Some(row) = r.inner.rows.get(i) else {
            return fail(RfdStatus::InvalidArgument, format!("row {i} out of range"));
        };
        *out = RfdRow {
            lambda: row.lambda,
            n_actuators: row.n_actuators,
            n_sensors: row.n_sensors,
            n_links: row.n_links,
            closed_loop_h2: row.closed_loop_h2,
            relative_degradation_pct: row.relative_degradation_pct,
            objective: row.objective,
            kkt_residual: row.kkt_residual,
            converged: row.converged,
        };
        RfdStatus::Ok
    })
}

/// Writes up to `cap` 1-based group numbers of row `i` into `buf`; `len` receives the full count.
///
/// # Safety
/// `report` must be a live report handle, `len` a valid pointer and `buf` valid for `cap` writes
/// (it may be null when `cap` is zero).
#[no_mangle]
pub unsafe extern "C" fn rfd_report_support(
    report: *const RfdReport,
    i: usize,
    buf: *mut usize,
    cap: usize,
    len: *mut usize,
) -> RfdStatus {
    guard(|| {
        let (Some(r), false, false) = (report.as_ref(), len.is_null(), buf.is_null() && cap > 0)
        else {
            return fail(RfdStatus::NullPointer, "null argument");
        };
        let Some(row) = r.inner.rows.get(i) else {
            return fail(RfdStatus::InvalidArgument, format!("row {i} out of range"));
        };
        *len = row.support.len();
        for (k, &g) in row.support.iter().take(cap).enumerate() {
            *buf.add(k) = g;
        }
        RfdStatus::Ok
    })
}

/// Number of certificates, or 0 for a null handle.
///
/// # Safety
/// `report` must be null or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn rfd_report_certificate_count(report: *const RfdReport) -> usize {
    report.as_ref().map_or(0, |r| r.inner.certificates.len())
}

/// Copies the headline quantities of certificate `i` into `out`.
///
/// # Safety
/// `report` must be a live report handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rfd_report_certificate(
    report: *const RfdReport,
    i: usize,
    out: *mut RfdCertificate,
) -> RfdStatus {
    guard(|| {
        let (Some(r), false) = (report.as_ref(), out.is_null()) else {
            return fail(RfdStatus::NullPointer, "null argument");
        };
        let Some(c) = r.inner.certificates.get(i) else {
            return fail(
                RfdStatus::InvalidArgument,
                format!("certificate {i} out of range"),
            );
        };
        *out = RfdCertificate {
            t: c.t,
            v: c.v,
            tau: c.mixing_time.tau,
            gamma: c.gamma,
            beta_upper: c.beta_upper,
            nu: c.nu,
            snr_threshold: c.snr_threshold,
            eta: c.eta,
            lambda_sufficient: c.lambda_sufficient,
            lambda_lo: c.lambda_interval.map_or(f64::NAN, |l| l.0),
            lambda_hi: c.lambda_interval.map_or(f64::NAN, |l| l.1),
            error_bound: c.error_bound,
            observed_error: c.observed_error.unwrap_or(f64::NAN),
            assumption1: c.verdicts.assumption1,
            theorem2_support: c.verdicts.theorem2_support,
            corollary1: c.verdicts.corollary1,
            theorem3: c.verdicts.theorem3,
        };
        RfdStatus::Ok
    })
}

/// Writes up to `cap` SNRs of certificate `i` into `buf`; `len` receives the full count.
///
/// # Safety
/// `report` must be a live report handle, `len` a valid pointer and `buf` valid for `cap` writes
/// (it may be null when `cap` is zero).
#[no_mangle]
pub unsafe extern "C" fn rfd_report_certificate_snr(
    report: *const RfdReport,
    i: usize,
    buf: *mut f64,
    cap: usize,
    len: *mut usize,
) -> RfdStatus {
    guard(|| {
        let (Some(r), false, false) = (report.as_ref(), len.is_null(), buf.is_null() && cap > 0)
        else {
            return fail(RfdStatus::NullPointer, "null argument");
        };
        let Some(c) = r.inner.certificates.get(i) else {
            return fail(
                RfdStatus::InvalidArgument,
                format!("certificate {i} out of range"),
            );
        };
        *len = c.snr.len();
        for (k, &x) in c.snr.iter().take(cap).enumerate() {
            *buf.add(k) = x;
        }
        RfdStatus::Ok
    })
}

/// Report as a JSON string owned by the caller (release with `rfd_string_free`), or null on failure.
///
/// # Safety
/// `report` must be a live report handle.
#[no_mangle]
pub unsafe extern "C" fn rfd_report_to_json(report: *const RfdReport) -> *mut c_char {
    let mut out = ptr::null_mut();
    guard(|| {
        let Some(r) = report.as_ref() else {
            return fail(RfdStatus::NullPointer, "null argument");
        };
        match r.inner.to_json() {
            Ok(s) => {
                out = CString::new(s).expect("json has no nul").into_raw();
                RfdStatus::Ok
            }
            Err(e) => from_core(&e),
        }
    });
    out
}

/// # Safety
/// `s` must be null or a string returned by this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn rfd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
