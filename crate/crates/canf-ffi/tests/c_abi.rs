//! Exercises the C ABI end to end from the Rust side: build a real bundle
//! with the core library, then drive it exclusively through the extern "C"
//! surface the way a C caller would.

use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use canf::commands::prepare_datasets;
use canf::config::RunConfig;
use canf::forecaster::{fit, Strategy};
use canf_ffi::{
    canf_forecast_sample, canf_forecaster_free, canf_forecaster_horizon, canf_forecaster_load,
    canf_forecaster_strategy, canf_forecaster_window_len, canf_last_error_message,
    canf_select_action, canf_version, CanfForecaster, CanfStatus,
};
use tempfile::TempDir;

fn small_config() -> RunConfig {
    let mut cfg = RunConfig {
        l: 5,
        k: 4,
        d: 2,
        ..RunConfig::default()
    };
    cfg.data.synth_weeks = 10;
    cfg.data.stride = 7;
    cfg
}

/// Fit a conditional-Gaussian bundle on a small synthetic series and save
/// it where the FFI can load it.
fn write_bundle(dir: &Path) -> (RunConfig, f64) {
    let cfg = small_config();
    let data = prepare_datasets(&cfg, 7).expect("dataset");
    let (forecaster, _) = fit(
        &data.train,
        &data.val,
        &cfg.forecaster_config(Strategy::Cg),
        7,
    )
    .expect("fit");
    forecaster.save(dir).expect("save");
    let (mean, _) = forecaster.stats().expect("standardized bundle");
    (cfg, mean)
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(canf_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

fn load(dir: &Path) -> *mut CanfForecaster {
    let path = CString::new(dir.to_str().unwrap()).unwrap();
    let mut handle: *mut CanfForecaster = ptr::null_mut();
    let status = unsafe { canf_forecaster_load(path.as_ptr(), &mut handle) };
    assert_eq!(status, CanfStatus::Ok, "load failed: {}", last_error());
    assert!(!handle.is_null());
    handle
}

#[test]
fn load_query_sample_schedule_free() {
    let tmp = TempDir::new().unwrap();
    let (cfg, train_mean) = write_bundle(tmp.path());
    let handle = load(tmp.path());

    let mut window_len = 0usize;
    let mut horizon = 0usize;
    unsafe {
        assert_eq!(
            canf_forecaster_window_len(handle, &mut window_len),
            CanfStatus::Ok
        );
        assert_eq!(canf_forecaster_horizon(handle, &mut horizon), CanfStatus::Ok);
    }
    assert_eq!(window_len, cfg.l + 1);
    assert_eq!(horizon, cfg.k);

    let mut tag = [0 as c_char; 8];
    let status = unsafe { canf_forecaster_strategy(handle, tag.as_mut_ptr(), tag.len()) };
    assert_eq!(status, CanfStatus::Ok);
    let tag = unsafe { CStr::from_ptr(tag.as_ptr()) }.to_str().unwrap();
    assert_eq!(tag, "cg");

    // A flat window near the training mean; samples come back in raw units,
    // so they should cluster near that mean rather than near zero.
    let window: Vec<f64> = vec![train_mean; window_len];
    let m = 400usize;
    let mut samples = vec![0.0f64; m * horizon];
    let status = unsafe {
        canf_forecast_sample(
            handle,
            window.as_ptr(),
            window.len(),
            m,
            11,
            samples.as_mut_ptr(),
        )
    };
    assert_eq!(status, CanfStatus::Ok, "{}", last_error());
    assert!(samples.iter().all(|v| v.is_finite()));
    let sample_mean = samples.iter().sum::<f64>() / samples.len() as f64;
    assert!(
        (sample_mean - train_mean).abs() < train_mean.abs().max(1.0),
        "sample mean {sample_mean} too far from training mean {train_mean}"
    );

    // Same seed, same draws; different seed, different draws.
    let mut again = vec![0.0f64; m * horizon];
    unsafe {
        canf_forecast_sample(handle, window.as_ptr(), window.len(), m, 11, again.as_mut_ptr());
    }
    assert_eq!(samples, again);
    unsafe {
        canf_forecast_sample(handle, window.as_ptr(), window.len(), m, 12, again.as_mut_ptr());
    }
    assert_ne!(samples, again);

    let mut indices = vec![0usize; cfg.d];
    let status = unsafe {
        canf_select_action(
            handle,
            window.as_ptr(),
            window.len(),
            cfg.d,
            cfg.alpha,
            200,
            11,
            indices.as_mut_ptr(),
        )
    };
    assert_eq!(status, CanfStatus::Ok, "{}", last_error());
    assert!(indices.windows(2).all(|w| w[0] < w[1]), "sorted: {indices:?}");
    assert!(indices.iter().all(|&i| (1..=horizon).contains(&i)));

    unsafe { canf_forecaster_free(handle) };
}

#[test]
fn error_paths_set_status_and_message() {
    let tmp = TempDir::new().unwrap();
    let (_, _) = write_bundle(tmp.path());

    // Null pointers are rejected outright.
    let status = unsafe { canf_forecaster_load(ptr::null(), ptr::null_mut()) };
    assert_eq!(status, CanfStatus::NullPointer);
    assert!(!last_error().is_empty());

    // A missing bundle is a data error with a useful message.
    let missing = CString::new(tmp.path().join("nope").to_str().unwrap()).unwrap();
    let mut handle: *mut CanfForecaster = ptr::null_mut();
    let status = unsafe { canf_forecaster_load(missing.as_ptr(), &mut handle) };
    assert_eq!(status, CanfStatus::DataError);
    assert!(handle.is_null());
    assert!(!last_error().is_empty());

    // Geometry violations are invalid arguments, and the handle survives.
    let handle = load(tmp.path());
    let short = [1.0f64; 2];
    let mut out = [0.0f64; 16];
    let status = unsafe {
        canf_forecast_sample(handle, short.as_ptr(), short.len(), 4, 0, out.as_mut_ptr())
    };
    assert_eq!(status, CanfStatus::InvalidArgument);
    assert!(last_error().contains("window"));

    let window = [1.0f64; 6];
    let status = unsafe {
        canf_forecast_sample(handle, window.as_ptr(), window.len(), 0, 0, out.as_mut_ptr())
    };
    assert_eq!(status, CanfStatus::InvalidArgument);

    // A too-small strategy buffer reports the needed size.
    let mut tiny = [0 as c_char; 2];
    let status = unsafe { canf_forecaster_strategy(handle, tiny.as_mut_ptr(), tiny.len()) };
    assert_eq!(status, CanfStatus::InvalidArgument);
    assert!(last_error().contains("bytes"));

    // An out-of-range schedule size is rejected by the scheduler.
    let mut indices = vec![0usize; 9];
    let status = unsafe {
        canf_select_action(
            handle,
            window.as_ptr(),
            window.len(),
            9,
            0.2,
            50,
            0,
            indices.as_mut_ptr(),
        )
    };
    assert_eq!(status, CanfStatus::InvalidArgument, "{}", last_error());

    unsafe { canf_forecaster_free(handle) };
    // Freeing null is a no-op.
    unsafe { canf_forecaster_free(ptr::null_mut()) };
}

#[test]
fn version_is_a_nonempty_static_string() {
    let v = unsafe { CStr::from_ptr(canf_version()) }.to_str().unwrap();
    assert!(!v.is_empty());
    assert!(v.chars().next().unwrap().is_ascii_digit());
}
