//! C ABI over the `mcic` library.
//!
//! Every function returns a [`McicStatus`]. On failure a message describing
//! the last error on the calling thread is available from
//! [`mcic_last_error_message`]. Models are opaque handles created by
//! [`mcic_model_load`] and released with [`mcic_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use mcic::backbone::{ParamSet, Tensor, TinyZoneNet};
use mcic::data::image::resize_mask_to;
use mcic::data::{preprocess, zscore_normalize, ImageSlice, LabelMask};
use mcic::engine::load_checkpoint;
use mcic::metrics::{dice_score, hd95, predict_masks};
use mcic::{Error, ErrorClass};

/// Status codes returned by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McicStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Arguments were malformed (bad sizes, class ids, non-UTF-8 paths).
    InvalidArgument = 2,
    /// Input data or files were invalid.
    DataError = 3,
    /// A computation produced non-finite values.
    NumericalError = 4,
    /// The class region is empty in one of the masks; the metric is undefined.
    EmptyMask = 5,
    /// An internal panic was caught.
    Panic = 6,
}

/// Opaque model handle.
pub struct McicModel {
    net: TinyZoneNet,
    params: ParamSet,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> McicStatus {
    match err {
        Error::EmptyMask(_) => McicStatus::EmptyMask,
        _ => match err.class() {
            ErrorClass::Usage => McicStatus::InvalidArgument,
            ErrorClass::Data => McicStatus::DataError,
            ErrorClass::Numerical => McicStatus::NumericalError,
        },
    }
}

fn guard(f: impl FnOnce() -> Result<(), McicStatus>) -> McicStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => McicStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            McicStatus::Panic
        }
    }
}

fn fail(err: Error) -> McicStatus {
    set_error(err.to_string());
    status_of(&err)
}

fn null(what: &str) -> McicStatus {
    set_error(format!("`{what}` is null"));
    McicStatus::NullPointer
}

fn invalid(msg: impl Into<String>) -> McicStatus {
    set_error(msg);
    McicStatus::InvalidArgument
}

/// # Safety
/// `p` must be null or point to `len` readable elements.
unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], McicStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be null or point to `len` writable elements.
unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], McicStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn pixels(height: u32, width: u32) -> Result<usize, McicStatus> {
    (height as usize)
        .checked_mul(width as usize)
        .filter(|&n| n > 0)
        .ok_or_else(|| invalid("height and width must be positive"))
}

fn masks(pred: &[u8], gt: &[u8], height: u32, width: u32) -> Result<(LabelMask, LabelMask), McicStatus> {
    let (h, w) = (height as usize, width as usize);
    let p = LabelMask::new(h, w, pred.to_vec()).map_err(fail)?;
    let g = LabelMask::new(h, w, gt.to_vec()).map_err(fail)?;
    Ok((p, g))
}

fn class_arg(class: u8) -> Result<u8, McicStatus> {
    if class == 1 || class == 2 {
        Ok(class)
    } else {
        Err(invalid(format!("class must be 1 or 2, got {class}")))
    }
}

/// Message for the most recent failure on this thread, or null if there was
/// none. The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn mcic_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mcic_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a checkpoint. `use_student` selects the student weights instead of
/// the teacher's. On success `*out` receives a handle owned by the caller.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mcic_model_load(
    path: *const c_char,
    use_student: bool,
    out: *mut *mut McicModel,
) -> McicStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| invalid("path is not UTF-8"))?;
        let (ck, _) = load_checkpoint(Path::new(path)).map_err(fail)?;
        let net = TinyZoneNet::new(ck.arch.clone()).map_err(fail)?;
        let params = if use_student {
            ck.state.student
        } else {
            ck.state.teacher
        };
        *out = Box::into_raw(Box::new(McicModel { net, params }));
        Ok(())
    })
}

/// Release a model handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle from [`mcic_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mcic_model_free(model: *mut McicModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Square input side the model was trained at, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mcic_model_input_size(model: *const McicModel) -> u32 {
    model.as_ref().map_or(0, |m| m.net.config().input_size as u32)
}

/// Segment one raw slice (`height*width` floats, row-major). The slice is
/// center-cropped or padded to the model input and z-scored, exactly as in
/// training; `out_labels` receives `height*width` labels at the original size.
///
/// # Safety
/// `values` must hold `height*width` floats and `out_labels` as many bytes.
#[no_mangle]
pub unsafe extern "C" fn mcic_model_predict(
    model: *const McicModel,
    values: *const f32,
    height: u32,
    width: u32,
    out_labels: *mut u8,
) -> McicStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let n = pixels(height, width)?;
        let v = slice(values, n, "values")?;
        let out = slice_mut(out_labels, n, "out_labels")?;
        let image = ImageSlice::new(height as usize, width as usize, v.to_vec()).map_err(fail)?;
        let (input, _) = preprocess(&image, None, m.net.config().input_size).map_err(fail)?;
        let batch = Tensor::from_images([&input]).map_err(fail)?;
        let pred = predict_masks(&m.net, &m.params, &batch).map_err(fail)?;
        let mask = resize_mask_to(&pred[0], height as usize, width as usize);
        out.copy_from_slice(mask.labels());
        Ok(())
    })
}

/// Per-slice z-score normalization (population std) into `out`.
///
/// # Safety
/// `values` and `out` must each hold `height*width` floats; they may alias.
#[no_mangle]
pub unsafe extern "C" fn mcic_zscore_normalize(
    values: *const f32,
    height: u32,
    width: u32,
    out: *mut f32,
) -> McicStatus {
    guard(|| {
        let n = pixels(height, width)?;
        let v = slice(values, n, "values")?.to_vec();
        let image = ImageSlice::new(height as usize, width as usize, v).map_err(fail)?;
        let z = zscore_normalize(&image).map_err(fail)?;
        slice_mut(out, n, "out")?.copy_from_slice(z.values());
        Ok(())
    })
}

/// Dice score of `class` (1 or 2) between two label maps.
///
/// # Safety
/// `pred` and `gt` must hold `height*width` labels; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mcic_dice(
    pred: *const u8,
    gt: *const u8,
    height: u32,
    width: u32,
    class: u8,
    out: *mut f64,
) -> McicStatus {
    guard(|| {
        let n = pixels(height, width)?;
        let class = class_arg(class)?;
        let (p, g) = masks(slice(pred, n, "pred")?, slice(gt, n, "gt")?, height, width)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = dice_score(&p, &g, class).map_err(fail)?;
        Ok(())
    })
}

/// Symmetric HD95 (pixel units) of `class` between two label maps. Returns
/// `EmptyMask` when the class is missing from either map.
///
/// # Safety
/// `pred` and `gt` must hold `height*width` labels; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mcic_hd95(
    pred: *const u8,
    gt: *const u8,
    height: u32,
    width: u32,
    class: u8,
    out: *mut f64,
) -> McicStatus {
    guard(|| {
        let n = pixels(height, width)?;
        let class = class_arg(class)?;
        let (p, g) = masks(slice(pred, n, "pred")?, slice(gt, n, "gt")?, height, width)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = hd95(&p, &g, class).map_err(fail)?;
        Ok(())
    })
}
