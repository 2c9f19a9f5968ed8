//! C ABI over the extremeseg segmenter.
//!
//! Every fallible call returns an [`EsStatus`]; on failure a message is kept
//! per thread and can be read with [`es_last_error`]. Models live behind the
//! opaque [`EsModel`] handle, released with [`es_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use extremeseg::geometry::{ExtremePointSet, Point};
use extremeseg::harness::{budget_report, BudgetModel};
use extremeseg::raster::Raster;
use extremeseg::trainer::ModelBundle;
use extremeseg::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Checkpoint = 4,
    Numeric = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Opaque model handle.
pub struct EsModel {
    bundle: ModelBundle,
    fingerprint: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> EsStatus {
    match err {
        Error::Io(_) => EsStatus::Io,
        Error::Checkpoint(_) | Error::Json(_) | Error::Parse { .. } => EsStatus::Checkpoint,
        e if e.is_numeric() => EsStatus::Numeric,
        _ => EsStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (EsStatus, String)>) -> EsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EsStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            EsStatus::Panic
        }
    }
}

fn lift(err: Error) -> (EsStatus, String) {
    (status_of(&err), err.to_string())
}

fn null(name: &str) -> (EsStatus, String) {
    (EsStatus::NullPointer, format!("{} is null", name))
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn es_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn es_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a checkpoint from `path` into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn es_model_load(path: *const c_char, out: *mut *mut EsModel) -> EsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (EsStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
        let bytes = std::fs::read(path).map_err(|e| lift(e.into()))?;
        let bundle = ModelBundle::from_bytes(&bytes).map_err(lift)?;
        let fingerprint = CString::new(extremeseg::autonet::checkpoint::fingerprint(&bytes))
            .expect("hex has no NUL");
        *out = Box::into_raw(Box::new(EsModel {
            bundle,
            fingerprint,
        }));
        Ok(())
    })
}

/// Release a handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`es_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn es_model_free(model: *mut EsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// SHA-256 hex of the checkpoint bytes; owned by the handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn es_model_fingerprint(model: *const EsModel) -> *const c_char {
    model
        .as_ref()
        .map_or(ptr::null(), |m| m.fingerprint.as_ptr())
}

/// Whether the model accepts a fifth, corrective click.
///
/// # Safety
/// `model` must be a live handle; `five_point` must be writable.
#[no_mangle]
pub unsafe extern "C" fn es_model_five_point(
    model: *const EsModel,
    five_point: *mut bool,
) -> EsStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let out = five_point.as_mut().ok_or_else(|| null("five_point"))?;
        *out = m.bundle.pipeline.five_point;
        Ok(())
    })
}

/// Segment one object.
///
/// `pixels` holds `width * height * channels` bytes, row-major and
/// interleaved, with `channels` 1 or 3. `points` holds the clicks as x,y
/// pairs in the order left, right, top, bottom, followed by an optional
/// corrective click when `num_points` is 5. On success `mask` (of
/// `width * height` bytes) receives 1 for foreground and 0 elsewhere.
///
/// # Safety
/// All pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn es_segment(
    model: *const EsModel,
    pixels: *const u8,
    width: usize,
    height: usize,
    channels: usize,
    points: *const i64,
    num_points: usize,
    mask: *mut u8,
    mask_len: usize,
) -> EsStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if pixels.is_null() {
            return Err(null("pixels"));
        }
        if points.is_null() {
            return Err(null("points"));
        }
        if mask.is_null() {
            return Err(null("mask"));
        }
        let invalid = |s: String| (EsStatus::InvalidArgument, s);
        if num_points != 4 && num_points != 5 {
            return Err(invalid(format!(
                "expected 4 or 5 points, got {}",
                num_points
            )));
        }
        let n = width
            .checked_mul(height)
            .ok_or_else(|| invalid("image size overflows".into()))?;
        let len = n
            .checked_mul(channels)
            .ok_or_else(|| invalid("image size overflows".into()))?;
        if mask_len < n {
            return Err((
                EsStatus::BufferTooSmall,
                format!("mask buffer holds {} bytes, need {}", mask_len, n),
            ));
        }
        let data = std::slice::from_raw_parts(pixels, len).to_vec();
        let image = Raster::new(width, height, channels, data).map_err(lift)?;
        let xy = std::slice::from_raw_parts(points, 2 * num_points);
        let p = |i: usize| Point::new(xy[2 * i], xy[2 * i + 1]);
        let set = ExtremePointSet {
            left: p(0),
            right: p(1),
            top: p(2),
            bottom: p(3),
            extra: (num_points == 5).then(|| p(4)),
        };
        if set.extra.is_some() && !m.bundle.pipeline.five_point {
            return Err(invalid(
                "model was not trained with a corrective click".into(),
            ));
        }
        let pred = m.bundle.predict(&image, &set).map_err(lift)?;
        let out = std::slice::from_raw_parts_mut(mask, n);
        out.copy_from_slice(pred.mask.bits());
        Ok(())
    })
}

/// Annotation seconds for `n` objects with extreme clicks and with full
/// masks, using the default per-object costs.
///
/// # Safety
/// Output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn es_budget(
    n: usize,
    extreme_seconds: *mut f64,
    mask_seconds: *mut f64,
) -> EsStatus {
    guard(|| {
        let e = extreme_seconds
            .as_mut()
            .ok_or_else(|| null("extreme_seconds"))?;
        let f = mask_seconds.as_mut().ok_or_else(|| null("mask_seconds"))?;
        let r = budget_report(n, &[], &BudgetModel::default()).map_err(lift)?;
        *e = r.extreme_seconds;
        *f = r.mask_seconds;
        Ok(())
    })
}
