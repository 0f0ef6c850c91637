//! C ABI over `steer-core`.
//!
//! Every fallible function returns a [`SteerStatus`]. On failure the message
//! is available from [`steer_last_error_message`] on the same thread until
//! the next failing call. Models are opaque [`SteerModel`] handles released
//! with [`steer_model_free`]. Panics never cross the boundary; they surface
//! as [`SteerStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use steer_core::cli::RunConfig;
use steer_core::evaluation::exp_smooth;
use steer_core::imaging::{compute_dense_flow, encode_flow_hsv, FlowField, FlowParams, Frame};
use steer_core::model::{checkpoint, Model, ModelInput};
use steer_core::tensor::Tensor;
use steer_core::training::rmse;
use steer_core::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SteerStatus {
    Ok = 0,
    NullPointer = 1,
    /// Bad shape, contract violation, or malformed config.
    InvalidArgument = 2,
    Io = 3,
    Numeric = 4,
    CheckpointMismatch = 5,
    Panic = 6,
}

/// Opaque model handle.
pub struct SteerModel {
    model: Model,
}

/// Static facts about a loaded model.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct SteerModelInfo {
    pub seq_len: usize,
    pub input_h: usize,
    pub input_w: usize,
    /// Predictions per sample (`seq_len` for sequence models, 1 otherwise).
    pub output_steps: usize,
    pub uses_flow: bool,
    pub predicts_speed: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SteerStatus {
    match e {
        Error::Io { .. } => SteerStatus::Io,
        Error::Numeric { .. } => SteerStatus::Numeric,
        Error::CheckpointMismatch(_) => SteerStatus::CheckpointMismatch,
        _ => SteerStatus::InvalidArgument,
    }
}

enum Fail {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SteerStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SteerStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("{what} is null"));
            SteerStatus::NullPointer
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            SteerStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn path(p: *const c_char, what: &'static str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::Config(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

fn emit(out: *mut *mut SteerModel, model: Model) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    unsafe { *out = Box::into_raw(Box::new(SteerModel { model })) };
    Ok(())
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn steer_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn steer_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a freshly initialised model from the `model` keys of a run config
/// file.
///
/// # Safety
/// `config_path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn steer_model_new(
    config_path: *const c_char,
    seed: u64,
    out: *mut *mut SteerModel,
) -> SteerStatus {
    guard(|| {
        let cfg = RunConfig::load(path(config_path, "config_path")?)?;
        emit(out, Model::new(cfg.model, seed)?)
    })
}

/// Loads a trained model; the checkpoint must match the config's architecture.
///
/// # Safety
/// Paths must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn steer_model_load(
    config_path: *const c_char,
    checkpoint_path: *const c_char,
    out: *mut *mut SteerModel,
) -> SteerStatus {
    guard(|| {
        let cfg = RunConfig::load(path(config_path, "config_path")?)?;
        let model = checkpoint::load(&cfg.model, path(checkpoint_path, "checkpoint_path")?)?;
        emit(out, model)
    })
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn steer_model_free(model: *mut SteerModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `info` writable.
#[no_mangle]
pub unsafe extern "C" fn steer_model_info(
    model: *const SteerModel,
    info: *mut SteerModelInfo,
) -> SteerStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Fail::Null("model"))?;
        let info = info.as_mut().ok_or(Fail::Null("info"))?;
        let c = m.model.config();
        *info = SteerModelInfo {
            seq_len: c.seq_len,
            input_h: c.input_h,
            input_w: c.input_w,
            output_steps: m.model.output_steps(),
            uses_flow: c.kind.uses_flow(),
            predicts_speed: c.predict_speed,
        };
        Ok(())
    })
}

/// Runs a forward pass.
///
/// `rgb` (and `flow` for flow models) hold `batch × seq_len × 3 × H × W`
/// values in `[0, 1]`, channel-planar per frame; `flow` may be null for
/// models without a flow branch. `angle_out` receives `batch × output_steps`
/// values; `speed_out` the same count when the model predicts speed, and
/// may be null otherwise.
///
/// # Safety
/// Buffers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn steer_model_predict(
    model: *const SteerModel,
    rgb: *const f64,
    flow: *const f64,
    batch: usize,
    angle_out: *mut f64,
    speed_out: *mut f64,
) -> SteerStatus {
    guard(|| {
        let m = &model.as_ref().ok_or(Fail::Null("model"))?.model;
        let c = m.config();
        if batch == 0 {
            return Err(Error::Contract("batch must be >= 1".into()).into());
        }
        let shape = [batch, c.seq_len, 3, c.input_h, c.input_w];
        let n: usize = shape.iter().product();
        if rgb.is_null() {
            return Err(Fail::Null("rgb"));
        }
        let rgb = Tensor::new(&shape, slice(rgb, n, "rgb")?.to_vec())?;
        let flow = if c.kind.uses_flow() {
            if flow.is_null() {
                return Err(Fail::Null("flow"));
            }
            Some(Tensor::new(&shape, slice(flow, n, "flow")?.to_vec())?)
        } else {
            None
        };
        let out = m.predict(&ModelInput { rgb, flow })?;
        let k = batch * m.output_steps();
        if angle_out.is_null() {
            return Err(Fail::Null("angle_out"));
        }
        slice_mut(angle_out, k, "angle_out")?.copy_from_slice(out.angle.data());
        if let Some(s) = out.speed {
            if speed_out.is_null() {
                return Err(Fail::Null("speed_out"));
            }
            slice_mut(speed_out, k, "speed_out")?.copy_from_slice(s.data());
        }
        Ok(())
    })
}

/// Dense flow from `prev` to `next` with default solver settings. Frames are
/// row-major `H × W × 3` in `[0, 1]`; `u_out` and `v_out` receive `H × W`
/// values in pixels per frame.
///
/// # Safety
/// Buffers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn steer_flow_compute(
    prev: *const f64,
    next: *const f64,
    width: usize,
    height: usize,
    u_out: *mut f64,
    v_out: *mut f64,
) -> SteerStatus {
    guard(|| {
        let n = width * height;
        if n == 0 {
            return Err(Error::Dimension(format!("empty frame {width}x{height}")).into());
        }
        let a = Frame::new(width, height, slice(prev, 3 * n, "prev")?.to_vec(), 0)?;
        let b = Frame::new(width, height, slice(next, 3 * n, "next")?.to_vec(), 0)?;
        let f = compute_dense_flow(&a, &b, &FlowParams::default())?;
        slice_mut(u_out, n, "u_out")?.copy_from_slice(&f.u);
        slice_mut(v_out, n, "v_out")?.copy_from_slice(&f.v);
        Ok(())
    })
}

/// HSV colour coding of a flow field into 8-bit RGB (`H × W × 3`).
///
/// # Safety
/// Buffers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn steer_flow_encode_hsv(
    u: *const f64,
    v: *const f64,
    width: usize,
    height: usize,
    mag_cap: f64,
    rgb_out: *mut u8,
) -> SteerStatus {
    guard(|| {
        let n = width * height;
        if n == 0 {
            return Err(Error::Dimension(format!("empty flow {width}x{height}")).into());
        }
        let field = FlowField::new(
            width,
            height,
            slice(u, n, "u")?.to_vec(),
            slice(v, n, "v")?.to_vec(),
        )?;
        let img = encode_flow_hsv(&field, mag_cap)?;
        let out = slice_mut(rgb_out, 3 * n, "rgb_out")?;
        for (o, &p) in out.iter_mut().zip(img.pixels()) {
            *o = steer_core::imaging::quantize(p);
        }
        Ok(())
    })
}

/// Exponential smoothing with `factor` in `(0, 1]` weighting the newest value.
///
/// # Safety
/// `series` and `out` must hold `len` elements; they may alias.
#[no_mangle]
pub unsafe extern "C" fn steer_exp_smooth(
    series: *const f64,
    len: usize,
    factor: f64,
    out: *mut f64,
) -> SteerStatus {
    guard(|| {
        let s = exp_smooth(slice(series, len, "series")?, factor)?;
        slice_mut(out, len, "out")?.copy_from_slice(&s);
        Ok(())
    })
}

/// Root-mean-square error of two equally long series.
///
/// # Safety
/// `pred` and `target` must hold `len` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn steer_rmse(
    pred: *const f64,
    target: *const f64,
    len: usize,
    out: *mut f64,
) -> SteerStatus {
    guard(|| {
        let r = rmse(slice(pred, len, "pred")?, slice(target, len, "target")?)?;
        *out.as_mut().ok_or(Fail::Null("out"))? = r;
        Ok(())
    })
}
