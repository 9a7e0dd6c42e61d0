//! C ABI over trained checkpoints.
//!
//! Every function returns a [`HisdStatus`]; on failure the message is
//! available from [`hisd_last_error`] on the same thread. Images cross the
//! boundary as tightly packed 8-bit RGB (`size × size × 3`, row major), the
//! same bytes a PNG of the image decodes to.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use hisd::inference::{interpolate, EditPlan, EditSpec, InferenceModel, StyleFile};
use hisd::{imageio, HisdError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HisdStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Checkpoint = 4,
    InvalidArgument = 5,
    Shape = 6,
    Internal = 7,
    Panic = 8,
}

/// Opaque handle to a loaded model.
pub struct HisdModel {
    inner: InferenceModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(HisdStatus, String);

impl From<HisdError> for Failure {
    fn from(e: HisdError) -> Self {
        let status = match &e {
            HisdError::Io(_) => HisdStatus::Io,
            HisdError::Checkpoint(_) => HisdStatus::Checkpoint,
            HisdError::Shape(_) => HisdStatus::Shape,
            HisdError::Torch(_) => HisdStatus::Internal,
            _ => HisdStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HisdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HisdStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("panic inside hisd");
            HisdStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(HisdStatus::NullArgument, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(HisdStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

unsafe fn model_arg<'a>(p: *const HisdModel) -> Result<&'a InferenceModel, Failure> {
    p.as_ref().map(|m| &m.inner).ok_or_else(|| null("model"))
}

unsafe fn image_arg(m: &InferenceModel, rgb: *const u8, len: usize) -> Result<tch::Tensor, Failure> {
    if rgb.is_null() {
        return Err(null("rgb"));
    }
    let s = m.image_size() as usize;
    if len != s * s * 3 {
        return Err(Failure(HisdStatus::Shape, format!("image buffer has {len} bytes, expected {}", s * s * 3)));
    }
    let bytes = std::slice::from_raw_parts(rgb, len).to_vec();
    let img = image::RgbImage::from_raw(s as u32, s as u32, bytes).expect("length checked");
    Ok(imageio::image_to_tensor(&img))
}

unsafe fn write_out<T: Copy>(out: *mut T, out_len: usize, data: &[T]) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    if out_len != data.len() {
        return Err(Failure(HisdStatus::Shape, format!("output buffer holds {out_len} values, result has {}", data.len())));
    }
    std::ptr::copy_nonoverlapping(data.as_ptr(), out, data.len());
    Ok(())
}

/// Message for the last failed call on this thread. Valid until the next
/// call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn hisd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a checkpoint's EMA weights. Free the handle with
/// [`hisd_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hisd_model_load(path: *const c_char, out: *mut *mut HisdModel) -> HisdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = str_arg(path, "path")?;
        let inner = InferenceModel::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(HisdModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`hisd_model_load`] and not be used afterwards.
/// Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn hisd_model_free(model: *mut HisdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Side length of the square images the model takes; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hisd_model_image_size(model: *const HisdModel) -> u32 {
    model.as_ref().map_or(0, |m| m.inner.image_size())
}

/// Length of a style vector; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hisd_model_style_dim(model: *const HisdModel) -> u32 {
    model.as_ref().map_or(0, |m| m.inner.config.style_dim as u32)
}

/// Tags, attributes and conditions as JSON. Free the string with
/// [`hisd_string_free`].
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hisd_model_schema_json(model: *const HisdModel, out: *mut *mut c_char) -> HisdStatus {
    guard(|| {
        let m = model_arg(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let tags: Vec<_> = m
            .schema
            .tags()
            .iter()
            .map(|t| serde_json::json!({ "name": t.name, "attributes": t.attributes, "conditions": t.conditions }))
            .collect();
        let doc = serde_json::json!({
            "fingerprint": m.fingerprint,
            "tags": tags,
            "style_dim": m.config.style_dim,
            "latent_dim": m.config.latent_dim,
            "image_size": m.image_size(),
        });
        *out = CString::new(doc.to_string()).expect("JSON has no NUL").into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn hisd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Applies `edits_json`, a JSON array of edits in order, e.g.
/// `[{"tag":"Hat","attribute":"with","seed":7}]`. Reference edits name an
/// image file. An empty array writes the reconstruction.
///
/// # Safety
/// `rgb` must point to `len` readable bytes, `out_rgb` to `out_len`
/// writable bytes, and `edits_json` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn hisd_translate(
    model: *const HisdModel,
    rgb: *const u8,
    len: usize,
    edits_json: *const c_char,
    out_rgb: *mut u8,
    out_len: usize,
) -> HisdStatus {
    guard(|| {
        let m = model_arg(model)?;
        let x = image_arg(m, rgb, len)?;
        let specs: Vec<EditSpec> =
            serde_json::from_str(str_arg(edits_json, "edits_json")?).map_err(|e| Failure(HisdStatus::InvalidArgument, format!("edits: {e}")))?;
        let y = if specs.is_empty() {
            m.reconstruct(&x)?
        } else {
            let steps = specs
                .iter()
                .map(|s| {
                    s.resolve(&m.schema, |p| {
                        let img = imageio::read_image(Path::new(p))?;
                        m.check_image(&img)?;
                        Ok(img)
                    })
                })
                .collect::<hisd::Result<Vec<_>>>()?;
            m.apply_plan(&x, &EditPlan::new(steps)?)?
        };
        write_out(out_rgb, out_len, &imageio::tensor_to_image(&y)?.into_raw())
    })
}

/// Writes the image's style code for `tag` into `out` (`out_len` must equal
/// the style dimension).
///
/// # Safety
/// Pointer arguments must be valid for the given lengths.
#[no_mangle]
pub unsafe extern "C" fn hisd_extract(model: *const HisdModel, rgb: *const u8, len: usize, tag: *const c_char, out: *mut f32, out_len: usize) -> HisdStatus {
    guard(|| {
        let m = model_arg(model)?;
        let tag = m.schema.tag_index(str_arg(tag, "tag")?)?;
        let x = image_arg(m, rgb, len)?;
        let v = m.style_file(&m.extract(&x, tag)?)?.vector;
        write_out(out, out_len, &v)
    })
}

/// `(1 − t)·a + t·b` for two style codes of `tag`, with `t` in [0,1].
///
/// # Safety
/// `a`, `b` and `out` must each hold `len` floats.
#[no_mangle]
pub unsafe extern "C" fn hisd_interpolate(
    model: *const HisdModel,
    tag: *const c_char,
    a: *const f32,
    b: *const f32,
    len: usize,
    t: f64,
    out: *mut f32,
) -> HisdStatus {
    guard(|| {
        let m = model_arg(model)?;
        let tag = str_arg(tag, "tag")?.to_string();
        if a.is_null() || b.is_null() {
            return Err(null("a/b"));
        }
        let file = |p: *const f32| StyleFile { fingerprint: m.fingerprint.clone(), tag: tag.clone(), vector: std::slice::from_raw_parts(p, len).to_vec() };
        let (sa, sb) = (m.style_from_file(&file(a))?, m.style_from_file(&file(b))?);
        let v = m.style_file(&interpolate(&sa, &sb, t)?)?.vector;
        write_out(out, len, &v)
    })
}
