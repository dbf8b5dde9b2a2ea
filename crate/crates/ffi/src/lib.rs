//! C ABI for loading checkpoints, running inference, and the standalone
//! gate and metric functions.
//!
//! Every fallible function returns an [`FsStatus`]; on failure the message is
//! available from [`fs_last_error`] on the same thread. Panics are caught at
//! the boundary and reported as [`FsStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use fireseg::metrics::{consistency, iou_pair};
use fireseg::model::{checkpoint, classification_gated_attention, Model};
use fireseg::Error;
use ndarray::{Array1, Array2, Array3};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Checkpoint = 4,
    Shape = 5,
    Panic = 6,
    Internal = 7,
}

/// Opaque model handle.
pub struct FsModel {
    inner: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn fail(status: FsStatus, msg: impl Into<String>) -> FsStatus {
    set_error(msg);
    status
}

fn status_of(e: &Error) -> FsStatus {
    match e {
        Error::Io { .. } | Error::Image { .. } => FsStatus::Io,
        Error::Checkpoint(_) | Error::Json(_) | Error::IncompatibleWeights(_) => FsStatus::Checkpoint,
        Error::Shape(_) | Error::SizeMismatch { .. } => FsStatus::Shape,
        Error::InvalidConfig(_) => FsStatus::InvalidArgument,
        _ => FsStatus::Internal,
    }
}

fn guard(f: impl FnOnce() -> Result<(), FsStatus>) -> FsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FsStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| (*s).to_owned())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_owned());
            fail(FsStatus::Panic, msg)
        }
    }
}

fn lift<T>(r: fireseg::Result<T>) -> Result<T, FsStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), FsStatus> {
    if p.is_null() {
        Err(fail(FsStatus::NullPointer, format!("`{name}` is null")))
    } else {
        Ok(())
    }
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint and stores a new handle in `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fs_model_load(path: *const c_char, out: *mut *mut FsModel) -> FsStatus {
    guard(|| {
        non_null(path, "path")?;
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(FsStatus::InvalidArgument, "path is not valid UTF-8"))?;
        let model = lift(checkpoint::load(Path::new(path)))?;
        *out = Box::into_raw(Box::new(FsModel { inner: model }));
        Ok(())
    })
}

/// Releases a handle from [`fs_model_load`]. Null is ignored.
///
/// # Safety
/// `model` must be null or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fs_model_free(model: *mut FsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Side length of the square images the model accepts, or 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fs_model_input_size(model: *const FsModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.config().input_size)
}

/// Current value of the gate coefficient, or NaN for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fs_model_alpha(model: *const FsModel) -> f64 {
    model.as_ref().map_or(f64::NAN, |m| m.inner.alpha())
}

/// Runs the model on an interleaved 8-bit RGB image of `height × width`
/// pixels. Writes `height * width` fire probabilities (row-major) to
/// `seg_prob` and the image-level probability to `*class_prob` (NaN if the
/// model has no classification branch). `class_prob` may be null.
///
/// # Safety
/// `rgb` must hold `height * width * 3` bytes and `seg_prob` room for
/// `height * width` doubles.
#[no_mangle]
pub unsafe extern "C" fn fs_model_forward(
    model: *const FsModel,
    rgb: *const u8,
    height: usize,
    width: usize,
    seg_prob: *mut f64,
    class_prob: *mut f64,
) -> FsStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(rgb, "rgb")?;
        non_null(seg_prob, "seg_prob")?;
        let n = height
            .checked_mul(width)
            .filter(|&n| n > 0)
            .ok_or_else(|| fail(FsStatus::InvalidArgument, "empty or oversized image"))?;
        let bytes = std::slice::from_raw_parts(rgb, n * 3);
        let image = Array3::from_shape_fn((height, width, 3), |(y, x, c)| {
            f64::from(bytes[(y * width + x) * 3 + c]) / 255.0
        });
        let out = lift((*model).inner.forward(&image))?;
        let dst = std::slice::from_raw_parts_mut(seg_prob, n);
        for (d, &p) in dst.iter_mut().zip(out.seg_prob.iter()) {
            *d = p;
        }
        if !class_prob.is_null() {
            *class_prob = out.class_prob.unwrap_or(f64::NAN);
        }
        Ok(())
    })
}

/// `out[i] = (1 + alpha * s) * a[i]` for `i < len`. `out` may alias `a`.
///
/// # Safety
/// `a` and `out` must each hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fs_gated_attention(
    a: *const f64,
    len: usize,
    s: f64,
    alpha: f64,
    out: *mut f64,
) -> FsStatus {
    guard(|| {
        non_null(a, "a")?;
        non_null(out, "out")?;
        let v = Array1::from(std::slice::from_raw_parts(a, len).to_vec());
        let r = classification_gated_attention(&v, s, alpha);
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(r.as_slice().expect("contiguous"));
        Ok(())
    })
}

/// Fire and background IoU of two binary `height × width` masks (nonzero is
/// fire). An empty union counts as 1.
///
/// # Safety
/// `pred` and `gt` must each hold `height * width` bytes; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn fs_iou(
    pred: *const u8,
    gt: *const u8,
    height: usize,
    width: usize,
    iou_fire: *mut f64,
    iou_background: *mut f64,
) -> FsStatus {
    guard(|| {
        non_null(pred, "pred")?;
        non_null(gt, "gt")?;
        non_null(iou_fire, "iou_fire")?;
        non_null(iou_background, "iou_background")?;
        let n = height * width;
        let as_mask = |p: *const u8| {
            Array2::from_shape_vec(
                (height, width),
                std::slice::from_raw_parts(p, n).iter().map(|&v| u8::from(v != 0)).collect(),
            )
            .expect("length matches shape")
        };
        let (f, b) = lift(iou_pair(&as_mask(pred), &as_mask(gt)))?;
        *iou_fire = f;
        *iou_background = b;
        Ok(())
    })
}

/// Writes 1 to `*out` when the mask's inferred label (any nonzero pixel
/// means fire) equals `label`, else 0.
///
/// # Safety
/// `mask` must hold `len` bytes and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn fs_consistency(mask: *const u8, len: usize, label: u8, out: *mut u8) -> FsStatus {
    guard(|| {
        non_null(mask, "mask")?;
        non_null(out, "out")?;
        if label > 1 {
            return Err(fail(FsStatus::InvalidArgument, format!("label must be 0 or 1, got {label}")));
        }
        let m = Array2::from_shape_vec((1, len), std::slice::from_raw_parts(mask, len).to_vec())
            .expect("length matches shape");
        *out = consistency(&m, label);
        Ok(())
    })
}
