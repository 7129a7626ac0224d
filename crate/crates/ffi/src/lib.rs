//! C ABI for `fastslow`.
//!
//! Systems live behind an opaque [`FsSystem`] handle created by `fs_system_*` and
//! released with [`fs_system_free`]. Every call returns an [`FsStatus`]; on failure the
//! message is kept per thread and can be copied out with [`fs_last_error`].
//!
//! # Safety
//!
//! Pointers passed in must be null or valid for the documented length. Handles must
//! come from this library and must not be used after being freed.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fastslow::averaging::{classify_system, SystemClass};
use fastslow::stats::{central_lyapunov, LyapunovSettings};
use fastslow::transfer::invariant_density;
use fastslow::{Error, FastSlowSystem, TorusPoint};

/// Status codes; 2 and 3 match the command-line exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FsStatus {
    Ok = 0,
    NullPointer = 1,
    Validation = 2,
    Numerical = 3,
    Utf8 = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FsClass {
    MostlyExpanding = 0,
    MostlyContracting = 1,
    Marginal = 2,
}

/// Opaque system handle.
pub struct FsSystem {
    inner: FastSlowSystem,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> FsStatus {
    set_error(e.to_string());
    if e.exit_code() == 3 {
        FsStatus::Numerical
    } else {
        FsStatus::Validation
    }
}

fn guard(f: impl FnOnce() -> FsStatus) -> FsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("panic inside fastslow".into());
            FsStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, FsStatus> {
    if p.is_null() {
        set_error("null string argument".into());
        return Err(FsStatus::NullPointer);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error("string argument is not UTF-8".into());
        FsStatus::Utf8
    })
}

fn store(sys: FastSlowSystem, out: *mut *mut FsSystem) -> FsStatus {
    // SAFETY: callers check `out` for null first
    unsafe { *out = Box::into_raw(Box::new(FsSystem { inner: sys })) };
    FsStatus::Ok
}

/// Builds one of the named systems `sys-a`, `sys-b` or `reference`.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fs_system_builtin(name: *const c_char, epsilon: f64, out: *mut *mut FsSystem) -> FsStatus {
    guard(|| {
        if out.is_null() {
            return FsStatus::NullPointer;
        }
        let name = match str_arg(name) {
            Ok(s) => s,
            Err(s) => return s,
        };
        match fastslow::config::builtin_system(name, epsilon) {
            Ok(sys) => store(sys, out),
            Err(e) => status_of(&e),
        }
    })
}

/// Parses a system definition in TOML.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fs_system_from_toml(toml: *const c_char, out: *mut *mut FsSystem) -> FsStatus {
    guard(|| {
        if out.is_null() {
            return FsStatus::NullPointer;
        }
        let text = match str_arg(toml) {
            Ok(s) => s,
            Err(s) => return s,
        };
        match FastSlowSystem::from_toml(text) {
            Ok(sys) => store(sys, out),
            Err(e) => status_of(&e),
        }
    })
}

/// # Safety
/// `sys` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn fs_system_free(sys: *mut FsSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// # Safety
/// `sys` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn fs_system_epsilon(sys: *const FsSystem) -> f64 {
    sys.as_ref().map_or(f64::NAN, |s| s.inner.epsilon())
}

/// One step of the map.
///
/// # Safety
/// `sys` must be a valid handle; `x` and `theta` valid pointers, updated in place.
#[no_mangle]
pub unsafe extern "C" fn fs_step(sys: *const FsSystem, x: *mut f64, theta: *mut f64) -> FsStatus {
    guard(|| {
        let (Some(s), false, false) = (sys.as_ref(), x.is_null(), theta.is_null()) else {
            return FsStatus::NullPointer;
        };
        let p = s.inner.step(TorusPoint::new(*x, *theta));
        *x = p.x;
        *theta = p.theta;
        FsStatus::Ok
    })
}

/// Invariant density of the fibre map at `theta` on the uniform grid `k/n`.
///
/// # Safety
/// `values` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn fs_invariant_density(
    sys: *const FsSystem,
    theta: f64,
    n: usize,
    tol: f64,
    values: *mut f64,
) -> FsStatus {
    guard(|| {
        let Some(s) = sys.as_ref() else { return FsStatus::NullPointer };
        if values.is_null() {
            return FsStatus::NullPointer;
        }
        match invariant_density(&s.inner, theta, n, tol) {
            Ok(d) => {
                let out = std::slice::from_raw_parts_mut(values, n);
                for (o, v) in out.iter_mut().zip(&d.values) {
                    *o = *v;
                }
                FsStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Sink, source and `ψ̄_*` at the sink.
///
/// # Safety
/// Output pointers must be valid; any of them may be null to skip it.
#[no_mangle]
pub unsafe extern "C" fn fs_classify(
    sys: *const FsSystem,
    class: *mut FsClass,
    psi_bar_star_at_sink: *mut f64,
    theta_minus: *mut f64,
) -> FsStatus {
    guard(|| {
        let Some(s) = sys.as_ref() else { return FsStatus::NullPointer };
        match classify_system(&s.inner) {
            Ok(c) => {
                if !class.is_null() {
                    *class = match c.class {
                        SystemClass::MostlyExpanding => FsClass::MostlyExpanding,
                        SystemClass::MostlyContracting => FsClass::MostlyContracting,
                        SystemClass::Marginal { .. } => FsClass::Marginal,
                    };
                }
                if !psi_bar_star_at_sink.is_null() {
                    *psi_bar_star_at_sink = c.psi_bar_star_at_sink;
                }
                if !theta_minus.is_null() {
                    *theta_minus = c.zeros.theta_minus;
                }
                FsStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Monte-Carlo central Lyapunov exponent.
///
/// # Safety
/// `estimate` and `stderr` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn fs_central_lyapunov(
    sys: *const FsSystem,
    n_samples: usize,
    n_steps: usize,
    seed: u64,
    estimate: *mut f64,
    stderr: *mut f64,
) -> FsStatus {
    guard(|| {
        let Some(s) = sys.as_ref() else { return FsStatus::NullPointer };
        if estimate.is_null() || stderr.is_null() {
            return FsStatus::NullPointer;
        }
        let settings = LyapunovSettings { n_samples, n_steps, ..LyapunovSettings::default() };
        match central_lyapunov(&s.inner, &settings, seed) {
            Ok(r) => {
                *estimate = r.estimate;
                *stderr = r.stderr;
                FsStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Copies the last error message of this thread (NUL-terminated, truncated to `len`).
/// Returns the full message length without the terminator.
///
/// # Safety
/// `buf` must be null or hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn fs_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}
