//! C ABI over the `iforge` core: opaque handles for lane-keeping
//! certificates and ACC barriers, the two safety filters and the demo
//! simulation. Every entry point returns an [`IforgeStatus`]; the message
//! of the last failure on the calling thread is kept for
//! [`iforge_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use iforge::acc_barrier::{AccBarrier, AccBarrierParams, LongitudinalModel};
use iforge::config::Config;
use iforge::lk_synthesis::BarrierCertificate;
use iforge::safety_filter::{acc_filter, lk_filter, FilterGains};
use iforge::simulator::{run_closed_loop, SimContext};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IforgeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Io = 4,
    /// the filter found no input satisfying its hard rows; the returned
    /// input minimizes the violation
    Infeasible = 5,
    /// a closed-loop guarantee failed
    Violation = 6,
    Panic = 7,
}

/// Lane-keeping barrier certificate with the vehicle, bounds and gains it
/// is used with.
pub struct IforgeCertificate {
    cert: BarrierCertificate,
    cfg: Config,
}

/// ACC barrier with its longitudinal model and gains.
pub struct IforgeAccBarrier {
    bar: AccBarrier,
    model: LongitudinalModel,
    gains: FilterGains,
    v_d: f64,
}

/// Filtered input with slack and feasibility.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct IforgeFilterResult {
    pub u: f64,
    pub delta: f64,
    pub feasible: bool,
}

/// Summary of a simulation run.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct IforgeSimSummary {
    pub samples: usize,
    pub min_h_lk: f64,
    pub min_h_acc: f64,
    pub max_u1: f64,
    pub max_u2_g: f64,
    pub min_headway: f64,
    pub guarantee_violations: usize,
    pub assumption_violations: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn fail(status: IforgeStatus, msg: impl Into<String>) -> IforgeStatus {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
    status
}

fn guard(f: impl FnOnce() -> IforgeStatus) -> IforgeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(IforgeStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, IforgeStatus> {
    if p.is_null() {
        return Err(fail(IforgeStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(IforgeStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn config_arg(p: *const c_char) -> Result<Config, IforgeStatus> {
    let text = if p.is_null() { "" } else { str_arg(p, "config")? };
    Config::from_str_with_env(text, std::iter::empty()).map_err(|e| fail(IforgeStatus::Parse, e.to_string()))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length, 0 if none.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn iforge_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Parses a certificate. `config_toml` may be null for the defaults.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iforge_certificate_parse(
    text: *const c_char,
    config_toml: *const c_char,
    out: *mut *mut IforgeCertificate,
) -> IforgeStatus {
    guard(|| {
        if out.is_null() {
            return fail(IforgeStatus::NullPointer, "out is null");
        }
        let text = match str_arg(text, "text") {
            Ok(t) => t,
            Err(s) => return s,
        };
        let cfg = match config_arg(config_toml) {
            Ok(c) => c,
            Err(s) => return s,
        };
        match BarrierCertificate::from_text(text) {
            Ok(cert) => {
                if cert.hhat.vars().len() < 4 {
                    return fail(
                        IforgeStatus::InvalidArgument,
                        "certificate is not a lane-keeping certificate",
                    );
                }
                *out = Box::into_raw(Box::new(IforgeCertificate { cert, cfg }));
                IforgeStatus::Ok
            }
            Err(e) => fail(IforgeStatus::Parse, e.to_string()),
        }
    })
}

/// The certificate bundled with the library, for the default configuration.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iforge_certificate_default(out: *mut *mut IforgeCertificate) -> IforgeStatus {
    guard(|| {
        if out.is_null() {
            return fail(IforgeStatus::NullPointer, "out is null");
        }
        match BarrierCertificate::from_text(iforge::cli::DEFAULT_CERTIFICATE) {
            Ok(cert) => {
                *out = Box::into_raw(Box::new(IforgeCertificate {
                    cert,
                    cfg: Config::default(),
                }));
                IforgeStatus::Ok
            }
            Err(e) => fail(IforgeStatus::Parse, e.to_string()),
        }
    })
}

/// # Safety
/// `cert` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn iforge_certificate_free(cert: *mut IforgeCertificate) {
    if !cert.is_null() {
        drop(Box::from_raw(cert));
    }
}

/// `h_lk` at the lateral state `x1 = (y, ν, Δψ, r)`.
///
/// # Safety
/// `x1` must point to 4 doubles and `out` to one.
#[no_mangle]
pub unsafe extern "C" fn iforge_certificate_h(
    cert: *const IforgeCertificate,
    x1: *const f64,
    out: *mut f64,
) -> IforgeStatus {
    guard(|| {
        if cert.is_null() || x1.is_null() || out.is_null() {
            return fail(IforgeStatus::NullPointer, "null argument");
        }
        let x = std::slice::from_raw_parts(x1, 4);
        *out = (*cert).cert.h(x);
        IforgeStatus::Ok
    })
}

/// # Safety
/// `cert` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn iforge_certificate_kappa(cert: *const IforgeCertificate, out: *mut f64) -> IforgeStatus {
    if cert.is_null() || out.is_null() {
        return fail(IforgeStatus::NullPointer, "null argument");
    }
    *out = (*cert).cert.kappa;
    IforgeStatus::Ok
}

/// Lane-keeping filter: the input closest to `u_nom` keeping `h_lk`
/// invariant at speed `vf` and yaw-rate disturbance `d`.
///
/// # Safety
/// `x1` must point to 4 doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iforge_lk_filter(
    cert: *const IforgeCertificate,
    x1: *const f64,
    vf: f64,
    d: f64,
    u_nom: f64,
    out: *mut IforgeFilterResult,
) -> IforgeStatus {
    guard(|| {
        if cert.is_null() || x1.is_null() || out.is_null() {
            return fail(IforgeStatus::NullPointer, "null argument");
        }
        let h = &*cert;
        let x: [f64; 4] = std::slice::from_raw_parts(x1, 4).try_into().expect("four entries");
        match lk_filter(&x, vf, d, u_nom, &h.cert, &h.cfg.vehicle, &h.cfg.gains, &h.cfg.bounds) {
            Ok(o) => {
                *out = IforgeFilterResult {
                    u: o.u,
                    delta: o.delta,
                    feasible: o.feasible,
                };
                if o.feasible {
                    IforgeStatus::Ok
                } else {
                    fail(IforgeStatus::Infeasible, "no steering input satisfies the barrier row")
                }
            }
            Err(e) => fail(IforgeStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// ACC barrier for a configuration (null for the defaults).
///
/// # Safety
/// `config_toml` must be null or NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn iforge_acc_barrier_new(
    config_toml: *const c_char,
    out: *mut *mut IforgeAccBarrier,
) -> IforgeStatus {
    guard(|| {
        if out.is_null() {
            return fail(IforgeStatus::NullPointer, "out is null");
        }
        let cfg = match config_arg(config_toml) {
            Ok(c) => c,
            Err(s) => return s,
        };
        match AccBarrierParams::new(&cfg.vehicle, &cfg.bounds, cfg.gains.gamma2) {
            Ok(params) => {
                *out = Box::into_raw(Box::new(IforgeAccBarrier {
                    bar: AccBarrier { params },
                    model: LongitudinalModel {
                        vehicle: cfg.vehicle,
                        bounds: cfg.bounds,
                    },
                    gains: cfg.gains,
                    v_d: cfg.bounds.v_d,
                }));
                IforgeStatus::Ok
            }
            Err(e) => fail(IforgeStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// # Safety
/// `bar` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn iforge_acc_barrier_free(bar: *mut IforgeAccBarrier) {
    if !bar.is_null() {
        drop(Box::from_raw(bar));
    }
}

/// `h_acc(v_f, v_l, D)`.
///
/// # Safety
/// `bar` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn iforge_acc_barrier_h(
    bar: *const IforgeAccBarrier,
    vf: f64,
    vl: f64,
    dist: f64,
    out: *mut f64,
) -> IforgeStatus {
    if bar.is_null() || out.is_null() {
        return fail(IforgeStatus::NullPointer, "null argument");
    }
    *out = (*bar).bar.h(vf, vl, dist);
    IforgeStatus::Ok
}

/// ACC filter at `(v_f, v_l, D)` with lateral coupling `ν·r`.
///
/// # Safety
/// `bar` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn iforge_acc_filter(
    bar: *const IforgeAccBarrier,
    vf: f64,
    vl: f64,
    dist: f64,
    nu_r: f64,
    out: *mut IforgeFilterResult,
) -> IforgeStatus {
    guard(|| {
        if bar.is_null() || out.is_null() {
            return fail(IforgeStatus::NullPointer, "null argument");
        }
        if ![vf, vl, dist, nu_r].iter().all(|v| v.is_finite()) {
            return fail(IforgeStatus::InvalidArgument, "state must be finite");
        }
        let b = &*bar;
        let o = acc_filter([vf, vl, dist], nu_r, &b.bar, &b.model, &b.gains, b.v_d);
        *out = IforgeFilterResult {
            u: o.u,
            delta: o.delta,
            feasible: o.feasible,
        };
        if o.feasible {
            IforgeStatus::Ok
        } else {
            fail(IforgeStatus::Infeasible, "no wheel force satisfies the barrier rows")
        }
    })
}

/// Runs the scenario of the certificate's configuration; writes the trace
/// and panel CSVs to `out_dir` unless it is null.
///
/// # Safety
/// `cert` must be a live handle, `out_dir` null or NUL-terminated, and
/// `summary` writable.
#[no_mangle]
pub unsafe extern "C" fn iforge_simulate(
    cert: *const IforgeCertificate,
    out_dir: *const c_char,
    summary: *mut IforgeSimSummary,
) -> IforgeStatus {
    guard(|| {
        if cert.is_null() || summary.is_null() {
            return fail(IforgeStatus::NullPointer, "null argument");
        }
        let h = &*cert;
        let ctx = match SimContext::new(h.cfg.vehicle, h.cfg.bounds, h.cfg.gains, h.cert.clone()) {
            Ok(c) => c,
            Err(e) => return fail(IforgeStatus::InvalidArgument, e),
        };
        let trace = match run_closed_loop(&h.cfg.scenario(), &ctx) {
            Ok(t) => t,
            Err(e) => return fail(IforgeStatus::InvalidArgument, e.to_string()),
        };
        if !out_dir.is_null() {
            let dir = match str_arg(out_dir, "out_dir") {
                Ok(d) => d,
                Err(s) => return s,
            };
            if let Err(e) = trace.write_all(Path::new(dir), &h.cfg.vehicle, &h.cfg.bounds) {
                return fail(IforgeStatus::Io, e.to_string());
            }
        }
        let s = &trace.summary;
        *summary = IforgeSimSummary {
            samples: s.samples,
            min_h_lk: s.min_h_lk,
            min_h_acc: s.min_h_acc,
            max_u1: s.max_u1,
            max_u2_g: s.max_u2_g,
            min_headway: s.min_headway,
            guarantee_violations: s.guarantee_violations,
            assumption_violations: s.assumption_violations,
        };
        if let Some(t) = trace.truncated {
            return fail(IforgeStatus::Violation, t);
        }
        if s.guarantee_violations > 0 {
            fail(
                IforgeStatus::Violation,
                format!("{} guarantee violations", s.guarantee_violations),
            )
        } else {
            IforgeStatus::Ok
        }
    })
}
