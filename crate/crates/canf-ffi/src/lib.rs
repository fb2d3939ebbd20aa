//! C ABI for the `canf` forecasting library.
//!
//! The surface is deliberately small: load a saved forecaster bundle, ask it
//! for forecast trajectories or a value-at-risk schedule, and free it. Every
//! function returns a [`CanfStatus`]; on any failure a thread-local message
//! is set and can be read with [`canf_last_error_message`]. Handles are
//! opaque — C callers only ever hold a `CanfForecaster *`.
//!
//! All windows and samples cross the boundary in raw data units; the bundle's
//! stored standardization is applied (and inverted) internally.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::slice;

use canf::error::Error;
use canf::evaluation::select_action;
use canf::forecaster::Forecaster;
use ndarray::Array1;

/// Result of every fallible call in this ABI.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CanfStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument was out of range or inconsistent with the model.
    InvalidArgument = 2,
    /// The bundle could not be read or parsed.
    DataError = 3,
    /// A numeric failure (singular covariance, non-finite loss, …).
    NumericError = 4,
    /// A panic was caught at the boundary; the handle remains usable.
    Panic = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let cleaned: String = msg.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(cleaned).unwrap_or_default();
    });
}

fn fail(status: CanfStatus, msg: &str) -> CanfStatus {
    set_last_error(msg);
    status
}

fn fail_with(err: &Error) -> CanfStatus {
    let status = match err.exit_code() {
        2 => CanfStatus::InvalidArgument,
        3 => CanfStatus::DataError,
        _ => CanfStatus::NumericError,
    };
    fail(status, &err.to_string())
}

/// Run `f`, converting a panic into [`CanfStatus::Panic`] instead of
/// unwinding across the C boundary.
fn guarded<F: FnOnce() -> CanfStatus>(f: F) -> CanfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(CanfStatus::Panic, "internal panic caught at the C boundary"),
    }
}

/// Opaque forecaster handle.
pub struct CanfForecaster {
    inner: Forecaster,
}

/// Message describing the most recent failure on this thread.
///
/// The pointer stays valid until the next failing call on the same thread.
/// Never returns null; before any failure the message is empty.
#[no_mangle]
pub extern "C" fn canf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn canf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Load a forecaster bundle saved by the library or the `canf fit` command.
///
/// `path` is the bundle directory. On success `*out` owns the handle; free
/// it with `canf_forecaster_free`.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn canf_forecaster_load(
    path: *const c_char,
    out: *mut *mut CanfForecaster,
) -> CanfStatus {
    guarded(|| {
        if path.is_null() || out.is_null() {
            return fail(CanfStatus::NullPointer, "path and out must be non-null");
        }
        let path = match unsafe { CStr::from_ptr(path) }.to_str() {
            Ok(s) => s,
            Err(_) => return fail(CanfStatus::InvalidArgument, "path is not valid UTF-8"),
        };
        match Forecaster::load(Path::new(path)) {
            Ok(f) => {
                unsafe { *out = Box::into_raw(Box::new(CanfForecaster { inner: f })) };
                CanfStatus::Ok
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Free a handle returned by `canf_forecaster_load`. `f` may be null.
///
/// # Safety
/// `f` must be a pointer previously returned by this library and not freed
/// since.
#[no_mangle]
pub unsafe extern "C" fn canf_forecaster_free(f: *mut CanfForecaster) {
    if !f.is_null() {
        drop(unsafe { Box::from_raw(f) });
    }
}

/// Number of observed values the forecaster conditions on (L + 1).
///
/// # Safety
/// `f` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn canf_forecaster_window_len(
    f: *const CanfForecaster,
    out: *mut usize,
) -> CanfStatus {
    guarded(|| {
        if f.is_null() || out.is_null() {
            return fail(CanfStatus::NullPointer, "handle and out must be non-null");
        }
        let handle = unsafe { &*f };
        unsafe { *out = handle.inner.l() + 1 };
        CanfStatus::Ok
    })
}

/// Forecast horizon K (steps per trajectory).
///
/// # Safety
/// `f` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn canf_forecaster_horizon(
    f: *const CanfForecaster,
    out: *mut usize,
) -> CanfStatus {
    guarded(|| {
        if f.is_null() || out.is_null() {
            return fail(CanfStatus::NullPointer, "handle and out must be non-null");
        }
        let handle = unsafe { &*f };
        unsafe { *out = handle.inner.k() };
        CanfStatus::Ok
    })
}

/// Write the strategy tag (`"cg"`, `"cgmm"`, `"canf"`, `"jfnn"`, `"arma"`,
/// `"ifnn"`) into `buf` as a nul-terminated string.
///
/// # Safety
/// `f` must be a live handle and `buf` must point to at least `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn canf_forecaster_strategy(
    f: *const CanfForecaster,
    buf: *mut c_char,
    cap: usize,
) -> CanfStatus {
    guarded(|| {
        if f.is_null() || buf.is_null() {
            return fail(CanfStatus::NullPointer, "handle and buf must be non-null");
        }
        let handle = unsafe { &*f };
        let tag = handle.inner.strategy().to_string();
        if cap < tag.len() + 1 {
            return fail(
                CanfStatus::InvalidArgument,
                &format!("strategy buffer needs {} bytes, got {cap}", tag.len() + 1),
            );
        }
        let dst = unsafe { slice::from_raw_parts_mut(buf as *mut u8, cap) };
        dst[..tag.len()].copy_from_slice(tag.as_bytes());
        dst[tag.len()] = 0;
        CanfStatus::Ok
    })
}

/// Standardize a raw window with the bundle's stored statistics, checking
/// its length against the model geometry.
fn prepare_window(
    inner: &Forecaster,
    window: *const f64,
    window_len: usize,
) -> Result<Array1<f64>, CanfStatus> {
    let expected = inner.l() + 1;
    if window_len != expected {
        return Err(fail(
            CanfStatus::InvalidArgument,
            &format!("window must hold {expected} values, got {window_len}"),
        ));
    }
    let raw = unsafe { slice::from_raw_parts(window, window_len) };
    let mut x = Array1::from_iter(raw.iter().copied());
    if let Some((mean, std)) = inner.stats() {
        x.mapv_inplace(|v| (v - mean) / std);
    }
    Ok(x)
}

/// Draw `m` forecast trajectories conditioned on an observed window.
///
/// `window` holds the last L+1 observations in raw units, oldest first.
/// `out` receives `m * K` values in row-major order (trajectory by
/// trajectory), also in raw units. Identical inputs and `seed` produce
/// identical samples.
///
/// # Safety
/// `f` must be a live handle, `window` must point to `window_len` doubles,
/// and `out` must have room for `m * K` doubles.
#[no_mangle]
pub unsafe extern "C" fn canf_forecast_sample(
    f: *const CanfForecaster,
    window: *const f64,
    window_len: usize,
    m: usize,
    seed: u64,
    out: *mut f64,
) -> CanfStatus {
    guarded(|| {
        if f.is_null() || window.is_null() || out.is_null() {
            return fail(
                CanfStatus::NullPointer,
                "handle, window, and out must be non-null",
            );
        }
        if m == 0 {
            return fail(CanfStatus::InvalidArgument, "m must be at least 1");
        }
        let inner = &unsafe { &*f }.inner;
        let x = match prepare_window(inner, window, window_len) {
            Ok(x) => x,
            Err(status) => return status,
        };
        let samples = match inner.forecast(x.view()).and_then(|fd| fd.sample(m, seed)) {
            Ok(s) => s,
            Err(e) => return fail_with(&e),
        };
        let (mean, std) = inner.stats().unwrap_or((0.0, 1.0));
        let dst = unsafe { slice::from_raw_parts_mut(out, m * inner.k()) };
        for (slot, v) in dst.iter_mut().zip(samples.iter()) {
            *slot = v * std + mean;
        }
        CanfStatus::Ok
    })
}

/// Pick the `d` cheapest forecast hours by the value-at-risk rule.
///
/// Conditions the forecaster on `window` (raw units, oldest first), draws
/// `m` trajectories, and writes the selected 1-based hour indices, sorted
/// ascending, into `out_indices` (which must hold `d` values).
///
/// # Safety
/// `f` must be a live handle, `window` must point to `window_len` doubles,
/// and `out_indices` must have room for `d` values.
#[no_mangle]
pub unsafe extern "C" fn canf_select_action(
    f: *const CanfForecaster,
    window: *const f64,
    window_len: usize,
    d: usize,
    alpha: f64,
    m: usize,
    seed: u64,
    out_indices: *mut usize,
) -> CanfStatus {
    guarded(|| {
        if f.is_null() || window.is_null() || out_indices.is_null() {
            return fail(
                CanfStatus::NullPointer,
                "handle, window, and out_indices must be non-null",
            );
        }
        let inner = &unsafe { &*f }.inner;
        let x = match prepare_window(inner, window, window_len) {
            Ok(x) => x,
            Err(status) => return status,
        };
        let chosen = match inner
            .forecast(x.view())
            .and_then(|fd| select_action(&fd, d, alpha, m, seed))
        {
            Ok(c) => c,
            Err(e) => return fail_with(&e),
        };
        let dst = unsafe { slice::from_raw_parts_mut(out_indices, d) };
        dst.copy_from_slice(chosen.indices());
        CanfStatus::Ok
    })
}
