//! C interface to the forecasting core.
//!
//! Every fallible call returns a [`StdiStatus`]. On failure the message is
//! kept per thread and can be read with [`stdi_last_error`]. Handles are
//! opaque and must be released with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use stdi_core::bench::compute_metrics;
use stdi_core::data::{read_series, DemandSeries, SampleWindow};
use stdi_core::model::{load_checkpoint, Forecaster, StdiModel as CoreModel};
use stdi_core::train::predict_windows;
use stdi_core::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StdiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Shape = 5,
    Domain = 6,
    Numeric = 7,
    /// The library panicked; the handle involved should not be reused.
    Internal = 8,
}

/// Demand series loaded from a series file.
pub struct StdiSeries {
    inner: DemandSeries,
}

/// Trained model loaded from a checkpoint.
pub struct StdiModel {
    inner: CoreModel<f32>,
    kind: CString,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StdiModelInfo {
    pub rows: usize,
    pub cols: usize,
    pub seq_len: usize,
    /// Values per prediction, `2 * rows * cols`.
    pub outputs: usize,
    /// Nonzero when the checkpoint carries min-max scaling.
    pub scaled: u8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StdiMetrics {
    pub rmse: f64,
    pub mae: f64,
    pub count: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> StdiStatus {
    match err {
        Error::Io(_) => StdiStatus::Io,
        Error::Format { .. } | Error::Schema(_) | Error::Json(_) | Error::Csv(_) => StdiStatus::Format,
        Error::Shape { .. } => StdiStatus::Shape,
        Error::Domain(_) => StdiStatus::Domain,
        Error::Usage(_) => StdiStatus::InvalidArgument,
        Error::NonFinite { .. } | Error::Diverged { .. } | Error::Consistency(_) => StdiStatus::Numeric,
    }
}

struct Fail(StdiStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> StdiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => StdiStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            StdiStatus::Internal
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(StdiStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, Fail> {
    if path.is_null() {
        return Err(null("path"));
    }
    let s = unsafe { CStr::from_ptr(path) }
        .to_str()
        .map_err(|_| Fail(StdiStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn out_slice<'a, T>(ptr: *mut T, len: usize, need: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if ptr.is_null() {
        return Err(null(what));
    }
    if len < need {
        return Err(Fail(StdiStatus::Shape, format!("{what} holds {len} values, {need} needed")));
    }
    Ok(unsafe { std::slice::from_raw_parts_mut(ptr, need) })
}

/// Message of the last failed call on this thread, or null if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn stdi_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn stdi_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn stdi_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer. On
/// success `*out` owns a handle to release with [`stdi_series_free`].
#[no_mangle]
pub unsafe extern "C" fn stdi_series_open(path: *const c_char, out: *mut *mut StdiSeries) -> StdiStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = unsafe { path_arg(path)? };
        let inner = read_series(&path)?;
        unsafe { *out = Box::into_raw(Box::new(StdiSeries { inner })) };
        Ok(())
    })
}

/// # Safety
/// `series` must come from [`stdi_series_open`]; any out pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn stdi_series_shape(
    series: *const StdiSeries,
    rows: *mut usize,
    cols: *mut usize,
    len: *mut usize,
    start_epoch: *mut i64,
) -> StdiStatus {
    guard(|| {
        let s = unsafe { series.as_ref() }.ok_or_else(|| null("series"))?;
        let s = &s.inner;
        unsafe {
            for (p, v) in [(rows, s.rows), (cols, s.cols), (len, s.len())] {
                if !p.is_null() {
                    *p = v;
                }
            }
            if !start_epoch.is_null() {
                *start_epoch = s.start_epoch;
            }
        }
        Ok(())
    })
}

/// Copies frame `t` (rentals then returns, row-major, `2*rows*cols` values).
///
/// # Safety
/// `out` must point to `out_len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn stdi_series_frame(
    series: *const StdiSeries,
    t: usize,
    out: *mut f32,
    out_len: usize,
) -> StdiStatus {
    guard(|| {
        let s = &unsafe { series.as_ref() }.ok_or_else(|| null("series"))?.inner;
        if t >= s.len() {
            return Err(Fail(StdiStatus::Domain, format!("frame {t} outside 0..{}", s.len())));
        }
        let dst = unsafe { out_slice(out, out_len, s.frame_len(), "out")? };
        dst.copy_from_slice(s.frame(t));
        Ok(())
    })
}

/// # Safety
/// `series` must come from [`stdi_series_open`] and not be used afterwards.
/// Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn stdi_series_free(series: *mut StdiSeries) {
    if !series.is_null() {
        drop(unsafe { Box::from_raw(series) });
    }
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer. On
/// success `*out` owns a handle to release with [`stdi_model_free`].
#[no_mangle]
pub unsafe extern "C" fn stdi_model_load(path: *const c_char, out: *mut *mut StdiModel) -> StdiStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = unsafe { path_arg(path)? };
        let inner = load_checkpoint::<f32>(&path)?;
        let kind = CString::new(inner.kind().name()).expect("kind names have no nul");
        unsafe { *out = Box::into_raw(Box::new(StdiModel { inner, kind })) };
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`stdi_model_load`]; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn stdi_model_info(model: *const StdiModel, out: *mut StdiModelInfo) -> StdiStatus {
    guard(|| {
        let m = &unsafe { model.as_ref() }.ok_or_else(|| null("model"))?.inner;
        let out = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        let d = m.dims();
        *out = StdiModelInfo {
            rows: d.rows,
            cols: d.cols,
            seq_len: d.seq_len,
            outputs: d.outputs(),
            scaled: m.scaling().is_some() as u8,
        };
        Ok(())
    })
}

/// Model kind name, owned by the handle. Null if `model` is null.
///
/// # Safety
/// `model` must come from [`stdi_model_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn stdi_model_kind(model: *const StdiModel) -> *const c_char {
    unsafe { model.as_ref() }.map_or(ptr::null(), |m| m.kind.as_ptr())
}

fn predict_one(model: &mut CoreModel<f32>, inputs: Vec<f32>, hour: usize, out: &mut [f32]) -> Result<(), Fail> {
    if hour >= 24 {
        return Err(Fail(StdiStatus::Domain, format!("hour {hour} outside 0..=23")));
    }
    let window = SampleWindow {
        target_index: 0,
        target_time: 0,
        hour,
        inputs,
        target: vec![0.0; out.len()],
    };
    let preds = predict_windows(model, std::slice::from_ref(&window), 1)?;
    for (o, p) in out.iter_mut().zip(preds) {
        *o = p as f32;
    }
    Ok(())
}

/// Predicts the next frame from `seq_len` raw frames (oldest first,
/// `seq_len*2*rows*cols` values) and the target hour of day.
///
/// # Safety
/// `window` must point to `window_len` floats and `out` to `out_len`
/// writable floats.
#[no_mangle]
pub unsafe extern "C" fn stdi_model_predict(
    model: *mut StdiModel,
    window: *const f32,
    window_len: usize,
    hour: u32,
    out: *mut f32,
    out_len: usize,
) -> StdiStatus {
    guard(|| {
        let m = &mut unsafe { model.as_mut() }.ok_or_else(|| null("model"))?.inner;
        let (seq_len, rows, cols) = m.window_shape();
        let need = seq_len * 2 * rows * cols;
        if window.is_null() {
            return Err(null("window"));
        }
        if window_len != need {
            return Err(Fail(
                StdiStatus::Shape,
                format!("window holds {window_len} values, model expects {seq_len}x2x{rows}x{cols} = {need}"),
            ));
        }
        let inputs = unsafe { std::slice::from_raw_parts(window, need) }.to_vec();
        let dst = unsafe { out_slice(out, out_len, 2 * rows * cols, "out")? };
        predict_one(m, inputs, hour as usize, dst)
    })
}

/// Predicts frame `t` of `series` from the `seq_len` frames before it.
///
/// # Safety
/// Handles must be live; `out` must point to `out_len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn stdi_model_predict_series(
    model: *mut StdiModel,
    series: *const StdiSeries,
    t: usize,
    out: *mut f32,
    out_len: usize,
) -> StdiStatus {
    guard(|| {
        let m = &mut unsafe { model.as_mut() }.ok_or_else(|| null("model"))?.inner;
        let s = &unsafe { series.as_ref() }.ok_or_else(|| null("series"))?.inner;
        let (seq_len, rows, cols) = m.window_shape();
        if (s.rows, s.cols) != (rows, cols) {
            return Err(Fail(
                StdiStatus::Shape,
                format!("model expects a {rows}x{cols} grid, series is {}x{}", s.rows, s.cols),
            ));
        }
        if t < seq_len || t >= s.len() {
            return Err(Fail(
                StdiStatus::Domain,
                format!("target frame {t} outside {seq_len}..{}", s.len()),
            ));
        }
        let inputs: Vec<f32> = (t - seq_len..t).flat_map(|i| s.frame(i).iter().copied()).collect();
        let dst = unsafe { out_slice(out, out_len, 2 * rows * cols, "out")? };
        predict_one(m, inputs, s.hour_of(t), dst)
    })
}

/// # Safety
/// `model` must come from [`stdi_model_load`] and not be used afterwards.
/// Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn stdi_model_free(model: *mut StdiModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// RMSE and MAE over `n` paired values.
///
/// # Safety
/// `predictions` and `targets` must each point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn stdi_metrics(
    predictions: *const f64,
    targets: *const f64,
    n: usize,
    out: *mut StdiMetrics,
) -> StdiStatus {
    guard(|| {
        if predictions.is_null() || targets.is_null() {
            return Err(null("input"));
        }
        let out = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        let (p, y) = unsafe { (std::slice::from_raw_parts(predictions, n), std::slice::from_raw_parts(targets, n)) };
        let m = compute_metrics(p, y)?;
        *out = StdiMetrics {
            rmse: m.rmse,
            mae: m.mae,
            count: m.z,
        };
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn errors_map_to_stable_codes() {
        assert_eq!(status_of(&Error::Usage("x".into())), StdiStatus::InvalidArgument);
        assert_eq!(status_of(&Error::Schema("x".into())), StdiStatus::Format);
        assert_eq!(status_of(&Error::Domain("x".into())), StdiStatus::Domain);
        assert_eq!(StdiStatus::Internal as i32, 8);
    }

    #[test]
    fn panics_become_internal_status() {
        assert_eq!(guard(|| panic!("boom")), StdiStatus::Internal);
        assert_eq!(unsafe { CStr::from_ptr(stdi_last_error()) }.to_str().unwrap(), "internal panic");
    }
}
