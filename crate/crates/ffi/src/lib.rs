//! C ABI for the LBCCN binaural speech enhancer.
//!
//! Every function returns an [`LbccnStatus`]. On failure, [`lbccn_last_error`]
//! describes the most recent failed call on the calling thread. Handles are
//! opaque and must be released with their `_free` function. Panics never
//! cross the boundary; they are reported as [`LbccnStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use lbccn::dsp::BinauralWaveform;
use lbccn::model::{self as core, LbccnConfig, PredictorVariant, StreamState};
use lbccn::{Error, ErrorCategory};

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LbccnStatus {
    Ok = 0,
    /// Null pointer, bad length, unknown variant or invalid configuration.
    InvalidArgument = 1,
    /// File missing or unreadable.
    Io = 2,
    /// Malformed or incompatible checkpoint.
    Format = 3,
    /// Non-finite values.
    Numeric = 4,
    Internal = 5,
    /// A panic was caught at the boundary.
    Panic = 6,
}

/// Predictor variant codes accepted by [`lbccn_model_new_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LbccnVariant {
    Ratfs = 0,
    Masks = 1,
    MaskRatf = 2,
}

/// Opaque model handle.
pub struct LbccnModel {
    inner: core::LbccnModel,
}

/// Opaque streaming handle; owns a copy of the model weights.
pub struct LbccnStream {
    inner: StreamState,
    scratch: [Vec<f32>; 2],
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> LbccnStatus {
    match e.category() {
        ErrorCategory::InvalidArgument => LbccnStatus::InvalidArgument,
        ErrorCategory::Io => LbccnStatus::Io,
        ErrorCategory::Format => LbccnStatus::Format,
        ErrorCategory::Numeric => LbccnStatus::Numeric,
        ErrorCategory::Internal => LbccnStatus::Internal,
    }
}

fn guard(f: impl FnOnce() -> lbccn::Result<()>) -> LbccnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LbccnStatus::Ok,
        Ok(Err(e)) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            LbccnStatus::Panic
        }
    }
}

fn null(name: &str) -> Error {
    Error::Input(format!("{name} is null"))
}

unsafe fn deref<'a, T>(p: *const T, name: &str) -> lbccn::Result<&'a T> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn deref_mut<'a, T>(p: *mut T, name: &str) -> lbccn::Result<&'a mut T> {
    p.as_mut().ok_or_else(|| null(name))
}

unsafe fn path_arg(p: *const c_char) -> lbccn::Result<PathBuf> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::Input("path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn copy_in(p: *const f32, len: usize, name: &str) -> lbccn::Result<Vec<f32>> {
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, len).to_vec())
}

unsafe fn copy_out(src: &[f32], dst: *mut f32, name: &str) -> lbccn::Result<()> {
    if dst.is_null() {
        return Err(null(name));
    }
    ptr::copy(src.as_ptr(), dst, src.len());
    Ok(())
}

fn box_out<T>(out: *mut *mut T, value: T) -> lbccn::Result<()> {
    if out.is_null() {
        return Err(null("out"));
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lbccn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the most recent failure on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lbccn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds a freshly initialised model with the default architecture.
/// `variant` is an [`LbccnVariant`] code; `q = 0` keeps the default low band.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn lbccn_model_new_default(
    variant: u32,
    q: u32,
    seed: u64,
    out: *mut *mut LbccnModel,
) -> LbccnStatus {
    guard(|| {
        let variant = match variant {
            0 => PredictorVariant::Ratfs,
            1 => PredictorVariant::Masks,
            2 => PredictorVariant::MaskRatf,
            v => return Err(Error::Input(format!("unknown variant code {v}"))),
        };
        let mut config = LbccnConfig::default().with_variant(variant);
        if q > 0 {
            config = config.with_q(q as usize);
        }
        let inner = core::LbccnModel::build(config, seed)?;
        box_out(out, LbccnModel { inner })
    })
}

/// Loads a checkpoint written by the `lbccn` tools or [`lbccn_model_save`].
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lbccn_model_load(path: *const c_char, out: *mut *mut LbccnModel) -> LbccnStatus {
    guard(|| {
        let inner = core::load_checkpoint(&path_arg(path)?)?;
        box_out(out, LbccnModel { inner })
    })
}

/// Writes the model weights and configuration to `path`.
///
/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn lbccn_model_save(model: *const LbccnModel, path: *const c_char) -> LbccnStatus {
    guard(|| core::save_checkpoint(&deref(model, "model")?.inner, &path_arg(path)?))
}

/// Releases a model. NULL is ignored.
///
/// # Safety
/// `model` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lbccn_model_free(model: *mut LbccnModel) {
    if !model.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(model))));
    }
}

/// Number of real-valued parameters.
///
/// # Safety
/// `model` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lbccn_model_param_count(model: *const LbccnModel, out: *mut usize) -> LbccnStatus {
    guard(|| {
        let n = deref(model, "model")?.inner.real_param_count();
        *deref_mut(out, "out")? = n;
        Ok(())
    })
}

/// Sample rate the model expects, in Hz.
///
/// # Safety
/// `model` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lbccn_model_sample_rate(model: *const LbccnModel, out: *mut u32) -> LbccnStatus {
    guard(|| {
        let rate = deref(model, "model")?.inner.config().stft.sample_rate;
        *deref_mut(out, "out")? = rate;
        Ok(())
    })
}

/// Offline enhancement of `len` samples per ear. Outputs have the same length
/// and may alias the inputs.
///
/// # Safety
/// All four buffers must hold at least `len` floats.
#[no_mangle]
pub unsafe extern "C" fn lbccn_enhance(
    model: *const LbccnModel,
    left: *const f32,
    right: *const f32,
    len: usize,
    sample_rate: u32,
    out_left: *mut f32,
    out_right: *mut f32,
) -> LbccnStatus {
    guard(|| {
        let model = &deref(model, "model")?.inner;
        let noisy = BinauralWaveform::new(copy_in(left, len, "left")?, copy_in(right, len, "right")?, sample_rate)?;
        let out = model.enhance(&noisy)?;
        copy_out(&out.left, out_left, "out_left")?;
        copy_out(&out.right, out_right, "out_right")
    })
}

/// Starts a streaming session over a copy of `model`; the model handle may be
/// freed afterwards.
///
/// # Safety
/// `model` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lbccn_stream_new(model: *const LbccnModel, out: *mut *mut LbccnStream) -> LbccnStatus {
    guard(|| {
        let inner = StreamState::new(&deref(model, "model")?.inner)?;
        let hop = inner.hop();
        box_out(
            out,
            LbccnStream {
                inner,
                scratch: [vec![0.0; hop], vec![0.0; hop]],
            },
        )
    })
}

/// Samples per ear consumed and produced by each [`lbccn_stream_process`].
///
/// # Safety
/// `stream` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lbccn_stream_hop_size(stream: *const LbccnStream, out: *mut usize) -> LbccnStatus {
    guard(|| {
        let hop = deref(stream, "stream")?.inner.hop();
        *deref_mut(out, "out")? = hop;
        Ok(())
    })
}

/// Delay in samples between an input sample and its enhanced output.
///
/// # Safety
/// `stream` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lbccn_stream_latency(stream: *const LbccnStream, out: *mut usize) -> LbccnStatus {
    guard(|| {
        let lat = deref(stream, "stream")?.inner.latency();
        *deref_mut(out, "out")? = lat;
        Ok(())
    })
}

/// Processes exactly one hop (`len` must equal the hop size). Outputs may
/// alias the inputs.
///
/// # Safety
/// All four buffers must hold at least `len` floats.
#[no_mangle]
pub unsafe extern "C" fn lbccn_stream_process(
    stream: *mut LbccnStream,
    left: *const f32,
    right: *const f32,
    len: usize,
    out_left: *mut f32,
    out_right: *mut f32,
) -> LbccnStatus {
    guard(|| {
        let s = deref_mut(stream, "stream")?;
        let hop = s.inner.hop();
        if len != hop {
            return Err(Error::Input(format!(
                "got {len} samples per ear, expected one hop of {hop}"
            )));
        }
        let (l, r) = (copy_in(left, len, "left")?, copy_in(right, len, "right")?);
        let [ol, or] = &mut s.scratch;
        s.inner.process(&l, &r, ol, or)?;
        copy_out(ol, out_left, "out_left")?;
        copy_out(or, out_right, "out_right")
    })
}

/// Releases a streaming session. NULL is ignored.
///
/// # Safety
/// `stream` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lbccn_stream_free(stream: *mut LbccnStream) {
    if !stream.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(stream))));
    }
}
