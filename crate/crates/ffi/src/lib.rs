//! C ABI over the screening half of `sidescreen`: load an enrolled model,
//! read trace files, score traces and apply thresholds.
//!
//! Conventions:
//! - Every fallible function returns an [`SsStatus`]. On failure a message
//!   is stored for the calling thread and [`ss_last_error`] returns it.
//! - Handles are opaque. Each `*_free` accepts NULL and must be called at
//!   most once per handle.
//! - Sample buffers are row-major `n_traces x trace_len` doubles. A trace
//!   may be given at the model's window length or as a raw capture at
//!   least `crop_end` samples long, which is cropped first.
//! - Panics never cross the boundary; they surface as `SS_STATUS_PANIC`.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use sidescreen::model::{load_model, ScreeningModel};
use sidescreen::scoring::Outcome;
use sidescreen::trace::{read_traceset, PowerTrace, Scenario, TraceSet};
use sidescreen::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Shape = 5,
    NoThreshold = 6,
    Data = 7,
    CorruptModel = 8,
    Panic = 9,
}

/// An enrolled screening model.
pub struct SsModel {
    inner: ScreeningModel,
}

/// A labeled set of equal-length traces.
pub struct SsTraceSet {
    inner: TraceSet,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

type Failure = (SsStatus, String);

fn fail<T>(status: SsStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err((status, msg.into()))
}

fn from_error(e: Error) -> Failure {
    let status = match &e {
        Error::Io(_) => SsStatus::Io,
        Error::Format(_) => SsStatus::Format,
        Error::Shape(_) | Error::Bounds { .. } => SsStatus::Shape,
        Error::CorruptModel(_) => SsStatus::CorruptModel,
        Error::Config(_) => SsStatus::InvalidArgument,
        _ => SsStatus::Data,
    };
    (status, e.to_string())
}

/// Runs `f`, recording any failure or panic for [`ss_last_error`].
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SsStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SsStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    // SAFETY: the caller passes either NULL or a live pointer of this type.
    match unsafe { p.as_ref() } {
        Some(r) => Ok(r),
        None => fail(SsStatus::NullPointer, format!("{what} is NULL")),
    }
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    // SAFETY: as for `deref`, and the target is writable.
    match unsafe { p.as_mut() } {
        Some(r) => Ok(r),
        None => fail(SsStatus::NullPointer, format!("{what} is NULL")),
    }
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, Failure> {
    if path.is_null() {
        return fail(SsStatus::NullPointer, "path is NULL");
    }
    // SAFETY: non-null and NUL-terminated per the API contract.
    let s = unsafe { CStr::from_ptr(path) };
    match s.to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => fail(SsStatus::InvalidArgument, "path is not valid UTF-8"),
    }
}

/// Builds an unlabeled (benign-tagged) set from a caller buffer.
unsafe fn samples_arg(samples: *const f64, n_traces: usize, trace_len: usize) -> Result<TraceSet, Failure> {
    if samples.is_null() {
        return fail(SsStatus::NullPointer, "samples is NULL");
    }
    if trace_len == 0 {
        return fail(SsStatus::InvalidArgument, "trace_len is zero");
    }
    let Some(total) = n_traces.checked_mul(trace_len) else {
        return fail(SsStatus::InvalidArgument, "n_traces * trace_len overflows");
    };
    // SAFETY: the caller guarantees `total` readable doubles.
    let flat = unsafe { std::slice::from_raw_parts(samples, total) };
    let traces = flat
        .chunks_exact(trace_len)
        .map(|c| PowerTrace::new(c.to_vec()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(from_error)?;
    TraceSet::new(traces, vec![Scenario::Benign; n_traces], BTreeMap::new()).map_err(from_error)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ss_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ss_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads a PSCM model file into `*out_model`.
///
/// # Safety
/// `path` is a NUL-terminated string; the out pointer is writable.
#[no_mangle]
pub unsafe extern "C" fn ss_model_load(path: *const c_char, out_model: *mut *mut SsModel) -> SsStatus {
    guard(|| {
        let slot = unsafe { out(out_model, "out_model") }?;
        *slot = ptr::null_mut();
        let path = unsafe { path_arg(path) }?;
        let inner = load_model(&path).map_err(from_error)?;
        *slot = Box::into_raw(Box::new(SsModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` is NULL or a handle from [`ss_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ss_model_free(model: *mut SsModel) {
    if !model.is_null() {
        // SAFETY: created by `Box::into_raw` in `ss_model_load`.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Window length the critic scores, and the raw crop `[crop_start, crop_end)`.
///
/// # Safety
/// `model` is a live handle; the out pointers are writable.
#[no_mangle]
pub unsafe extern "C" fn ss_model_geometry(
    model: *const SsModel,
    window_len: *mut usize,
    crop_start: *mut usize,
    crop_end: *mut usize,
) -> SsStatus {
    guard(|| {
        let m = &unsafe { deref(model, "model") }?.inner;
        *unsafe { out(window_len, "window_len") }? = m.trace_len();
        *unsafe { out(crop_start, "crop_start") }? = m.preprocess.crop_start;
        *unsafe { out(crop_end, "crop_end") }? = m.preprocess.crop_end;
        Ok(())
    })
}

/// Number of calibrated thresholds stored in the model.
///
/// # Safety
/// `model` is a live handle; `count` is writable.
#[no_mangle]
pub unsafe extern "C" fn ss_model_threshold_count(model: *const SsModel, count: *mut usize) -> SsStatus {
    guard(|| {
        let m = &unsafe { deref(model, "model") }?.inner;
        *unsafe { out(count, "count") }? = m.thresholds.len();
        Ok(())
    })
}

/// The `index`-th stored threshold and the FPR it was calibrated for.
///
/// # Safety
/// `model` is a live handle; the out pointers are writable.
#[no_mangle]
pub unsafe extern "C" fn ss_model_threshold_at(
    model: *const SsModel,
    index: usize,
    target_fpr: *mut f64,
    tau: *mut f64,
) -> SsStatus {
    guard(|| {
        let m = &unsafe { deref(model, "model") }?.inner;
        let Some(t) = m.thresholds.get(index) else {
            return fail(
                SsStatus::InvalidArgument,
                format!("threshold index {index} out of range ({} stored)", m.thresholds.len()),
            );
        };
        *unsafe { out(target_fpr, "target_fpr") }? = t.target_fpr;
        *unsafe { out(tau, "tau") }? = t.tau;
        Ok(())
    })
}

/// Threshold calibrated for `target_fpr`; `SS_STATUS_NO_THRESHOLD` when the
/// model has none for that rate.
///
/// # Safety
/// `model` is a live handle; `tau` is writable.
#[no_mangle]
pub unsafe extern "C" fn ss_model_threshold(model: *const SsModel, target_fpr: f64, tau: *mut f64) -> SsStatus {
    guard(|| {
        let m = &unsafe { deref(model, "model") }?.inner;
        let slot = unsafe { out(tau, "tau") }?;
        match m.threshold(target_fpr) {
            Some(t) => {
                *slot = t.tau;
                Ok(())
            }
            None => {
                let have: Vec<String> = m.thresholds.iter().map(|t| t.target_fpr.to_string()).collect();
                fail(
                    SsStatus::NoThreshold,
                    format!("no threshold for FPR {target_fpr}; available: {}", have.join(", ")),
                )
            }
        }
    })
}

/// Anomaly scores (higher is more anomalous) for `n_traces` traces.
///
/// # Safety
/// `samples` holds `n_traces * trace_len` doubles; `scores` has room for
/// `n_traces`.
#[no_mangle]
pub unsafe extern "C" fn ss_score(
    model: *const SsModel,
    samples: *const f64,
    n_traces: usize,
    trace_len: usize,
    scores: *mut f64,
) -> SsStatus {
    guard(|| {
        let m = &unsafe { deref(model, "model") }?.inner;
        if scores.is_null() {
            return fail(SsStatus::NullPointer, "scores is NULL");
        }
        if n_traces == 0 {
            return Ok(());
        }
        let set = unsafe { samples_arg(samples, n_traces, trace_len) }?;
        let s = m.scores(&set).map_err(from_error)?;
        // SAFETY: the caller provides room for `n_traces` scores.
        unsafe { std::slice::from_raw_parts_mut(scores, n_traces) }.copy_from_slice(&s);
        Ok(())
    })
}

/// Screens `n_traces` traces against `tau`: `flags[i]` is 1 when trace `i`
/// is flagged (`score >= tau`) and 0 when approved.
///
/// # Safety
/// As for [`ss_score`], with `flags` sized `n_traces`; `n_flagged` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn ss_screen(
    model: *const SsModel,
    samples: *const f64,
    n_traces: usize,
    trace_len: usize,
    tau: f64,
    flags: *mut u8,
    n_flagged: *mut usize,
) -> SsStatus {
    guard(|| {
        let m = &unsafe { deref(model, "model") }?.inner;
        if flags.is_null() {
            return fail(SsStatus::NullPointer, "flags is NULL");
        }
        if !tau.is_finite() {
            return fail(SsStatus::InvalidArgument, "tau is not finite");
        }
        let mut count = 0;
        if n_traces > 0 {
            let set = unsafe { samples_arg(samples, n_traces, trace_len) }?;
            let decisions = m.batch_screen(&set, tau).map_err(from_error)?;
            // SAFETY: the caller provides room for `n_traces` flags.
            let flags = unsafe { std::slice::from_raw_parts_mut(flags, n_traces) };
            for (f, d) in flags.iter_mut().zip(&decisions) {
                *f = u8::from(d.outcome == Outcome::Flag);
                count += usize::from(d.outcome == Outcome::Flag);
            }
        }
        if let Some(slot) = unsafe { n_flagged.as_mut() } {
            *slot = count;
        }
        Ok(())
    })
}

/// Reads a PSCT trace file into `*out_set`.
///
/// # Safety
/// `path` is a NUL-terminated string; the out pointer is writable.
#[no_mangle]
pub unsafe extern "C" fn ss_traceset_read(path: *const c_char, out_set: *mut *mut SsTraceSet) -> SsStatus {
    guard(|| {
        let slot = unsafe { out(out_set, "out_set") }?;
        *slot = ptr::null_mut();
        let path = unsafe { path_arg(path) }?;
        let inner = read_traceset(&path).map_err(from_error)?;
        *slot = Box::into_raw(Box::new(SsTraceSet { inner }));
        Ok(())
    })
}

/// # Safety
/// `set` is NULL or a handle from [`ss_traceset_read`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ss_traceset_free(set: *mut SsTraceSet) {
    if !set.is_null() {
        // SAFETY: created by `Box::into_raw` in `ss_traceset_read`.
        drop(unsafe { Box::from_raw(set) });
    }
}

/// Trace count and samples per trace.
///
/// # Safety
/// `set` is a live handle; the out pointers are writable.
#[no_mangle]
pub unsafe extern "C" fn ss_traceset_len(set: *const SsTraceSet, n_traces: *mut usize, trace_len: *mut usize) -> SsStatus {
    guard(|| {
        let s = &unsafe { deref(set, "set") }?.inner;
        *unsafe { out(n_traces, "n_traces") }? = s.len();
        *unsafe { out(trace_len, "trace_len") }? = s.trace_len();
        Ok(())
    })
}

/// Borrowed view of trace `index`; valid until the set is freed.
///
/// # Safety
/// `set` is a live handle; the out pointers are writable.
#[no_mangle]
pub unsafe extern "C" fn ss_traceset_samples(
    set: *const SsTraceSet,
    index: usize,
    samples: *mut *const f64,
    len: *mut usize,
) -> SsStatus {
    guard(|| {
        let s = &unsafe { deref(set, "set") }?.inner;
        let Some(t) = s.traces().get(index) else {
            return fail(SsStatus::InvalidArgument, format!("trace {index} out of range ({} traces)", s.len()));
        };
        *unsafe { out(samples, "samples") }? = t.samples().as_ptr();
        *unsafe { out(len, "len") }? = t.len();
        Ok(())
    })
}

/// Scenario label of trace `index` as a static string (`"benign"`, `"delay"`, ...).
///
/// # Safety
/// `set` is a live handle; `label` is writable.
#[no_mangle]
pub unsafe extern "C" fn ss_traceset_label(set: *const SsTraceSet, index: usize, label: *mut *const c_char) -> SsStatus {
    guard(|| {
        let s = &unsafe { deref(set, "set") }?.inner;
        let Some(l) = s.labels().get(index) else {
            return fail(SsStatus::InvalidArgument, format!("trace {index} out of range ({} traces)", s.len()));
        };
        let name: &'static CStr = match l {
            Scenario::Benign => c"benign",
            Scenario::Trojan => c"trojan",
            Scenario::Bitflip => c"bitflip",
            Scenario::Delay => c"delay",
            Scenario::Backdoor => c"backdoor",
            Scenario::Composite => c"composite",
        };
        *unsafe { out(label, "label") }? = name.as_ptr();
        Ok(())
    })
}

/// Scores every trace of `set` into `scores`, which holds `capacity` doubles.
///
/// # Safety
/// Live handles; `scores` has room for `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn ss_score_traceset(
    model: *const SsModel,
    set: *const SsTraceSet,
    scores: *mut f64,
    capacity: usize,
) -> SsStatus {
    guard(|| {
        let m = &unsafe { deref(model, "model") }?.inner;
        let s = &unsafe { deref(set, "set") }?.inner;
        if scores.is_null() {
            return fail(SsStatus::NullPointer, "scores is NULL");
        }
        if capacity < s.len() {
            return fail(
                SsStatus::InvalidArgument,
                format!("capacity {capacity} is smaller than the {} traces", s.len()),
            );
        }
        let v = m.scores(s).map_err(from_error)?;
        // SAFETY: `capacity >= v.len()` doubles are writable.
        unsafe { std::slice::from_raw_parts_mut(scores, v.len()) }.copy_from_slice(&v);
        Ok(())
    })
}
