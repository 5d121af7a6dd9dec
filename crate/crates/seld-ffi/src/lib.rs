//! C ABI for the seld pipeline.
//!
//! Opaque handles, integer status codes, caller-owned output buffers freed
//! through the matching `*_free` functions. The header `include/seld.h`
//! mirrors these declarations; keep the two in sync.
//!
//! Thread safety: a `SeldModel` handle must not be used from two threads at
//! once. `seld_last_error_message` is per-thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};

use seld_core::data::{read_foa_wav, read_label_csv, FoaClip, SAMPLES_PER_LABEL_FRAME};
use seld_core::metrics::{rows_to_frames, seld_scores, ScoreOptions};
use seld_core::trainer::LoadedModel;
use seld_core::SeldError;

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeldStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    BadFormat = 4,
    BadConfig = 5,
    ShapeMismatch = 6,
    Internal = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).unwrap_or_default());
}

fn status_of(err: &SeldError) -> SeldStatus {
    match err {
        SeldError::Shape(_) => SeldStatus::ShapeMismatch,
        SeldError::Config(_) => SeldStatus::BadConfig,
        SeldError::Format(_) => SeldStatus::BadFormat,
        SeldError::Contract(_) | SeldError::Numeric(_) => SeldStatus::Internal,
        SeldError::Io { .. } => SeldStatus::Io,
    }
}

fn fail(err: SeldError) -> SeldStatus {
    set_error(&err.to_string());
    status_of(&err)
}

/// # Safety
/// `ptr` must be a valid NUL-terminated string or null.
unsafe fn path_arg(ptr: *const c_char) -> Result<PathBuf, SeldStatus> {
    if ptr.is_null() {
        set_error("null path argument");
        return Err(SeldStatus::NullArgument);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(SeldStatus::InvalidUtf8)
        }
    }
}

/// Opaque model handle.
pub struct SeldModel {
    inner: LoadedModel,
}

/// One decoded event on the 100 ms frame grid.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct SeldEvent {
    pub frame: u32,
    pub class_idx: u32,
    pub track: u32,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
}

/// The four joint metrics.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct SeldScoresC {
    pub error_rate: f64,
    pub f_score: f64,
    pub localization_error_deg: f64,
    pub localization_recall: f64,
}

const VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
    Ok(v) => v,
    Err(_) => panic!("version string contains NUL"),
};

/// Library version as a static string; never freed by the caller.
#[no_mangle]
pub extern "C" fn seld_version() -> *const c_char {
    VERSION.as_ptr()
}

/// Message for the most recent failure on this thread; valid until the next
/// failing call on the same thread. Never freed by the caller.
#[no_mangle]
pub extern "C" fn seld_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a trained checkpoint. On success writes a handle to `out`; release
/// with `seld_model_free`.
///
/// # Safety
/// `ckpt_path` must be NUL-terminated; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn seld_model_load(
    ckpt_path: *const c_char,
    out: *mut *mut SeldModel,
) -> SeldStatus {
    if out.is_null() {
        set_error("null output handle");
        return SeldStatus::NullArgument;
    }
    let path = match path_arg(ckpt_path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match LoadedModel::load(&path) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(SeldModel { inner }));
            SeldStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// # Safety
/// `model` must come from `seld_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn seld_model_free(model: *mut SeldModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

fn infer_events(model: &mut SeldModel, wav: &Path) -> Result<Vec<SeldEvent>, SeldError> {
    let channels = read_foa_wav(wav)?;
    let n_label_frames = channels[0].len().div_ceil(SAMPLES_PER_LABEL_FRAME);
    let clip = FoaClip { channels, labels: vec![], n_label_frames };
    let events = model.inner.infer_clip(&clip)?;
    Ok(events
        .iter()
        .map(|e| SeldEvent {
            frame: e.frame as u32,
            class_idx: e.class as u32,
            track: e.track as u32,
            azimuth_deg: e.azimuth,
            elevation_deg: e.elevation,
        })
        .collect())
}

/// Runs inference over a 4-channel FOA wav. On success `*out_events` points
/// to `*out_len` events (free with `seld_events_free`; may be null when no
/// events were detected).
///
/// # Safety
/// All pointers must be valid; `wav_path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn seld_model_infer_wav(
    model: *mut SeldModel,
    wav_path: *const c_char,
    out_events: *mut *mut SeldEvent,
    out_len: *mut usize,
) -> SeldStatus {
    if model.is_null() || out_events.is_null() || out_len.is_null() {
        set_error("null argument");
        return SeldStatus::NullArgument;
    }
    let wav = match path_arg(wav_path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match infer_events(&mut *model, &wav) {
        Ok(events) => {
            *out_len = events.len();
            if events.is_empty() {
                *out_events = std::ptr::null_mut();
            } else {
                let mut boxed = events.into_boxed_slice();
                *out_events = boxed.as_mut_ptr();
                std::mem::forget(boxed);
            }
            SeldStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Frees an event buffer returned by `seld_model_infer_wav`.
///
/// # Safety
/// `(events, len)` must come from a successful `seld_model_infer_wav`.
#[no_mangle]
pub unsafe extern "C" fn seld_events_free(events: *mut SeldEvent, len: usize) {
    if !events.is_null() {
        drop(Box::from_raw(std::ptr::slice_from_raw_parts_mut(events, len)));
    }
}

/// Runs inference and writes the prediction CSV (label format).
///
/// # Safety
/// Pointers must be valid, strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn seld_model_infer_to_csv(
    model: *mut SeldModel,
    wav_path: *const c_char,
    csv_path: *const c_char,
) -> SeldStatus {
    if model.is_null() {
        set_error("null model handle");
        return SeldStatus::NullArgument;
    }
    let wav = match path_arg(wav_path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    let csv = match path_arg(csv_path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    let run = || -> Result<(), SeldError> {
        let channels = read_foa_wav(&wav)?;
        let n_label_frames = channels[0].len().div_ceil(SAMPLES_PER_LABEL_FRAME);
        let clip = FoaClip { channels, labels: vec![], n_label_frames };
        let events = (*model).inner.infer_clip(&clip)?;
        let rows = seld_core::model::decode::events_to_rows(&events, 0);
        seld_core::data::write_label_csv(&csv, &rows)
    };
    match run() {
        Ok(()) => SeldStatus::Ok,
        Err(e) => fail(e),
    }
}

/// Scores one prediction CSV against one reference CSV (both in the label
/// format) over `n_frames` 100 ms frames, using the 1-second protocol and a
/// 20-degree threshold.
///
/// # Safety
/// Pointers must be valid, strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn seld_score_csv(
    pred_csv: *const c_char,
    ref_csv: *const c_char,
    n_frames: u32,
    out: *mut SeldScoresC,
) -> SeldStatus {
    if out.is_null() {
        set_error("null output pointer");
        return SeldStatus::NullArgument;
    }
    let pred = match path_arg(pred_csv) {
        Ok(p) => p,
        Err(s) => return s,
    };
    let refs = match path_arg(ref_csv) {
        Ok(p) => p,
        Err(s) => return s,
    };
    let run = || -> Result<SeldScoresC, SeldError> {
        let pred_rows = read_label_csv(&pred)?;
        let ref_rows = read_label_csv(&refs)?;
        let n = n_frames as usize;
        let scores = seld_scores(
            &rows_to_frames(&pred_rows, n),
            &rows_to_frames(&ref_rows, n),
            &ScoreOptions::default(),
        );
        Ok(SeldScoresC {
            error_rate: scores.er,
            f_score: scores.f,
            localization_error_deg: scores.le,
            localization_recall: scores.lr,
        })
    };
    match run() {
        Ok(s) => {
            *out = s;
            SeldStatus::Ok
        }
        Err(e) => fail(e),
    }
}
