//! C interface to `earlyact`.
//!
//! Models and streaming states are opaque heap handles. Every fallible call
//! returns an [`EaStatus`]; on failure a description is available from
//! [`ea_last_error_message`] on the same thread until the next failing call.
//!
//! Frames cross the boundary as contiguous row-major `double` arrays of
//! `n_frames × C × H × W` values.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use earlyact::checkpoint;
use earlyact::predictor::{Mode, Model, PredictorState};
use earlyact::video::{sample_frames, FullVideo, SampleMode};
use earlyact::{Error, Tensor};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Shape = 5,
    Config = 6,
    Contract = 7,
    Internal = 8,
}

/// A loaded model.
pub struct EaModel {
    model: Model,
}

/// Recurrent state of one clip being streamed segment by segment.
pub struct EaState {
    state: PredictorState,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> EaStatus {
    match e {
        Error::ShapeMismatch { .. } | Error::Shape { .. } => EaStatus::Shape,
        Error::Contract(_) => EaStatus::Contract,
        Error::Input(_) => EaStatus::InvalidArgument,
        Error::Config(_) | Error::Diverged { .. } => EaStatus::Config,
        Error::Format { .. } => EaStatus::Format,
        Error::Io(_) => EaStatus::Io,
    }
}

fn fail(status: EaStatus, msg: &str) -> EaStatus {
    set_error(msg);
    status
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (EaStatus, String)>) -> EaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EaStatus::Ok,
        Ok(Err((status, msg))) => fail(status, &msg),
        Err(_) => fail(EaStatus::Internal, "internal panic"),
    }
}

fn lib(e: Error) -> (EaStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (EaStatus, String) {
    (EaStatus::NullPointer, format!("{what} is null"))
}

/// Reads `n_frames` frames of the model's shape from `frames`.
///
/// # Safety
/// `frames` must point to `n_frames × C × H × W` readable doubles.
unsafe fn read_frames(model: &Model, frames: *const f64, n_frames: usize) -> Result<Vec<Tensor>, (EaStatus, String)> {
    if frames.is_null() {
        return Err(null("frames"));
    }
    if n_frames == 0 {
        return Err((EaStatus::InvalidArgument, "n_frames must be positive".into()));
    }
    let (c, h, w) = model.config.frame;
    let plane = c * h * w;
    let total = n_frames
        .checked_mul(plane)
        .ok_or((EaStatus::InvalidArgument, "frame buffer size overflows".to_string()))?;
    // SAFETY: caller guarantees `total` readable doubles at `frames`.
    let data = unsafe { std::slice::from_raw_parts(frames, total) };
    data.chunks_exact(plane)
        .map(|f| Tensor::new(&[c, h, w], f.to_vec()).map_err(lib))
        .collect()
}

/// # Safety
/// `out` must be writable for `len` doubles.
unsafe fn write_out(out: *mut f64, len: usize, values: &[f64]) -> Result<(), (EaStatus, String)> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if len < values.len() {
        return Err((EaStatus::InvalidArgument, format!("output buffer holds {len} values, {} needed", values.len())));
    }
    // SAFETY: caller guarantees `len >= values.len()` writable doubles.
    unsafe { ptr::copy_nonoverlapping(values.as_ptr(), out, values.len()) };
    Ok(())
}

/// Loads a checkpoint written by `earlyact train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ea_model_load(path: *const c_char, out: *mut *mut EaModel) -> EaStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        // SAFETY: caller guarantees a NUL-terminated string.
        let path = unsafe { CStr::from_ptr(path) }
            .to_str()
            .map_err(|_| (EaStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
        let loaded = checkpoint::load(Path::new(path)).map_err(lib)?;
        let handle = Box::into_raw(Box::new(EaModel { model: loaded.model }));
        // SAFETY: `out` checked non-null.
        unsafe { *out = handle };
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`ea_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ea_model_free(model: *mut EaModel) {
    if !model.is_null() {
        // SAFETY: pointer came from Box::into_raw in ea_model_load.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Class count, frame shape and segment count of a model.
///
/// # Safety
/// `model` must be a live handle; each output pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn ea_model_info(
    model: *const EaModel,
    num_classes: *mut usize,
    segments: *mut usize,
    channels: *mut usize,
    height: *mut usize,
    width: *mut usize,
) -> EaStatus {
    guard(|| {
        // SAFETY: caller guarantees a live handle or null.
        let m = &unsafe { model.as_ref() }.ok_or_else(|| null("model"))?.model;
        let (c, h, w) = m.config.frame;
        for (p, v) in [(num_classes, m.config.num_classes), (segments, m.config.segments), (channels, c), (height, h), (width, w)] {
            if !p.is_null() {
                // SAFETY: non-null output pointers are writable per contract.
                unsafe { *p = v };
            }
        }
        Ok(())
    })
}

/// Fresh streaming state (no segments observed).
///
/// # Safety
/// `model` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ea_state_new(model: *const EaModel, out: *mut *mut EaState) -> EaStatus {
    guard(|| {
        // SAFETY: caller guarantees a live handle or null.
        let m = &unsafe { model.as_ref() }.ok_or_else(|| null("model"))?.model;
        if out.is_null() {
            return Err(null("out"));
        }
        if m.config.mode != Mode::Full {
            return Err((EaStatus::Config, "streaming needs a model with a recurrent state".into()));
        }
        let handle = Box::into_raw(Box::new(EaState { state: m.init_state() }));
        // SAFETY: `out` checked non-null.
        unsafe { *out = handle };
        Ok(())
    })
}

/// Releases a state. Null is ignored.
///
/// # Safety
/// `state` must come from [`ea_state_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ea_state_free(state: *mut EaState) {
    if !state.is_null() {
        // SAFETY: pointer came from Box::into_raw in ea_state_new.
        drop(unsafe { Box::from_raw(state) });
    }
}

/// Segments folded into `state` so far; 0 for null.
///
/// # Safety
/// `state` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn ea_state_segments_seen(state: *const EaState) -> usize {
    // SAFETY: caller guarantees a live handle or null.
    unsafe { state.as_ref() }.map_or(0, |s| s.state.segments_seen)
}

/// Feeds the frames of the next segment: samples its centred 5-frame
/// window, encodes it, advances `state` and writes `num_classes` logits.
/// On failure `state` is unchanged.
///
/// # Safety
/// `frames` must hold `n_frames × C × H × W` doubles and `logits` be
/// writable for `logits_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ea_state_step(
    model: *const EaModel,
    state: *mut EaState,
    frames: *const f64,
    n_frames: usize,
    logits: *mut f64,
    logits_len: usize,
) -> EaStatus {
    guard(|| {
        // SAFETY: caller guarantees live handles or null.
        let m = &unsafe { model.as_ref() }.ok_or_else(|| null("model"))?.model;
        let s = unsafe { state.as_mut() }.ok_or_else(|| null("state"))?;
        // SAFETY: forwarded caller contract.
        let frames = unsafe { read_frames(m, frames, n_frames) }?;
        let sampled = sample_frames(&frames, 0, SampleMode::Deterministic).map_err(lib)?;
        let feature = m.encode(&sampled, s.state.segments_seen + 1).map_err(lib)?;
        let (next, out) = m.step(&s.state, &feature, None).map_err(lib)?;
        // SAFETY: forwarded caller contract.
        unsafe { write_out(logits, logits_len, out.logits.data()) }?;
        s.state = next;
        Ok(())
    })
}

/// Runs the model on the first `k` of `segments` segments of a clip of
/// `n_frames` frames and writes `k × num_classes` logits, step-major.
///
/// # Safety
/// `frames` must hold `n_frames × C × H × W` doubles and `logits` be
/// writable for `logits_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ea_predict_partial(
    model: *const EaModel,
    frames: *const f64,
    n_frames: usize,
    k: usize,
    segments: usize,
    logits: *mut f64,
    logits_len: usize,
) -> EaStatus {
    guard(|| {
        // SAFETY: caller guarantees a live handle or null.
        let m = &unsafe { model.as_ref() }.ok_or_else(|| null("model"))?.model;
        // SAFETY: forwarded caller contract.
        let frames = unsafe { read_frames(m, frames, n_frames) }?;
        let video = FullVideo::new("ffi", 0, frames).map_err(lib)?;
        let outputs = m.predict_partial(&video, k, segments).map_err(lib)?;
        let flat: Vec<f64> = outputs.iter().flat_map(|o| o.logits.data().iter().copied()).collect();
        // SAFETY: forwarded caller contract.
        unsafe { write_out(logits, logits_len, &flat) }
    })
}

/// Message of the last failure on this thread; empty if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ea_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ea_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
