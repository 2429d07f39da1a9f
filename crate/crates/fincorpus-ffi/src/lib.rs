//! C ABI over the corpus toolkit.
//!
//! Conventions: every fallible function returns [`FcStatus`] and, on
//! anything but `Ok`, stores a message retrievable with [`fc_last_error`]
//! (thread-local, valid until the next failing call on the same thread).
//! Strings handed out through `out` parameters are owned by the caller
//! and must be released with [`fc_string_free`]. Handles (`FcLm`,
//! `FcMetrics`) are opaque pointers released with their `_free` function.
//! Passing null where a non-null pointer is expected is reported as
//! `NullArgument`, never undefined behavior.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::{c_char, c_int};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use chrono::NaiveDate;
use fincorpus::clean::{clean_text, CleaningConfig};
use fincorpus::cost::{training_cost, GpuCostModel, Rounding, TrainRun};
use fincorpus::eval::{compute_metrics, PredictionRecord};
use fincorpus::label::{label_from_return, LabelingConfig};
use fincorpus::lm::NgramLm;
use fincorpus::model::Sentiment;
use fincorpus::pipeline::run_pipeline;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// An argument value was out of range.
    InvalidArgument = 3,
    /// The computation itself reported an error.
    ComputeError = 4,
    /// File or path access failed.
    IoError = 5,
    /// An internal invariant broke; state is still consistent.
    Panic = 6,
}

/// Three-way sentiment, numbered in confusion-matrix axis order.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcSentiment {
    Negative = 0,
    Neutral = 1,
    Positive = 2,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let message = message.into().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = Some(CString::new(message).expect("nul bytes replaced"));
    });
}

fn fail(status: FcStatus, message: impl Into<String>) -> FcStatus {
    set_error(message);
    status
}

/// Message for the most recent failure on this thread, or null if the
/// thread has not failed yet. The pointer is invalidated by the next
/// failing call on the same thread; do not free it.
#[no_mangle]
pub extern "C" fn fc_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow().as_ref().map_or(ptr::null(), |message| message.as_ptr())
    })
}

/// Releases a string produced by this library. Null is a no-op.
///
/// # Safety
/// `s` must be null or a pointer previously returned by this library and
/// not yet freed; freeing twice or freeing foreign memory is undefined.
#[no_mangle]
pub unsafe extern "C" fn fc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn fc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Borrows a required UTF-8 string argument.
///
/// # Safety
/// `ptr` must be null or point to a nul-terminated string.
unsafe fn str_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, FcStatus> {
    if ptr.is_null() {
        return Err(fail(FcStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(FcStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

fn out_string(value: String, out: *mut *mut c_char) -> FcStatus {
    if out.is_null() {
        return fail(FcStatus::NullArgument, "out is null");
    }
    match CString::new(value.replace('\0', " ")) {
        Ok(value) => {
            unsafe { *out = value.into_raw() };
            FcStatus::Ok
        }
        Err(_) => fail(FcStatus::ComputeError, "output contained interior nul"),
    }
}

fn guarded(f: impl FnOnce() -> FcStatus) -> FcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(FcStatus::Panic, "internal panic"),
    }
}

fn sentiment_from_int(value: c_int, name: &str) -> Result<Sentiment, FcStatus> {
    match value {
        0 => Ok(Sentiment::Negative),
        1 => Ok(Sentiment::Neutral),
        2 => Ok(Sentiment::Positive),
        other => Err(fail(
            FcStatus::InvalidArgument,
            format!("{name} must be 0, 1 or 2; got {other}"),
        )),
    }
}

fn sentiment_to_ffi(value: Sentiment) -> FcSentiment {
    match value {
        Sentiment::Negative => FcSentiment::Negative,
        Sentiment::Neutral => FcSentiment::Neutral,
        Sentiment::Positive => FcSentiment::Positive,
    }
}

/// Labels a forward return (in percent) against a symmetric neutral band:
/// strictly above `threshold_pct` is positive, strictly below its
/// negation is negative, the band itself (boundaries included) is
/// neutral.
///
/// # Safety
/// `out` must be null or point to writable memory for one `FcSentiment`.
#[no_mangle]
pub unsafe extern "C" fn fc_label_from_return(
    return_pct: f64,
    threshold_pct: f64,
    out: *mut FcSentiment,
) -> FcStatus {
    guarded(|| {
        if out.is_null() {
            return fail(FcStatus::NullArgument, "out is null");
        }
        if !threshold_pct.is_finite() || threshold_pct < 0.0 {
            return fail(
                FcStatus::InvalidArgument,
                format!("threshold_pct must be finite and non-negative; got {threshold_pct}"),
            );
        }
        let cfg = LabelingConfig { threshold_pct, ..LabelingConfig::default() };
        unsafe { *out = sentiment_to_ffi(label_from_return(return_pct, &cfg)) };
        FcStatus::Ok
    })
}

/// Cleans one document text with the default cleaning configuration.
/// The output reaches a fixed point: cleaning it again changes nothing.
///
/// # Safety
/// `text` must be null or a nul-terminated string; `out` receives an
/// owned string for [`fc_string_free`].
#[no_mangle]
pub unsafe extern "C" fn fc_clean_text(text: *const c_char, out: *mut *mut c_char) -> FcStatus {
    guarded(|| {
        let text = match str_arg(text, "text") {
            Ok(text) => text,
            Err(status) => return status,
        };
        out_string(clean_text(text, &CleaningConfig::default()), out)
    })
}

/// GPU-hour and dollar cost of a training run priced from an instance
/// rate. When `exact_rate` is false the per-GPU rate is rounded half-up
/// to whole cents before multiplying, matching published cost tables.
///
/// # Safety
/// The out pointers must be null or point to writable `double` slots.
#[no_mangle]
pub unsafe extern "C" fn fc_training_cost(
    gpu_count: u64,
    hours: f64,
    instance_hourly_usd: f64,
    gpus_per_instance: u32,
    exact_rate: bool,
    out_gpu_hours: *mut f64,
    out_cost_usd: *mut f64,
) -> FcStatus {
    guarded(|| {
        if out_gpu_hours.is_null() || out_cost_usd.is_null() {
            return fail(FcStatus::NullArgument, "out pointer is null");
        }
        let rounding = if exact_rate { Rounding::Exact } else { Rounding::Cents };
        let model = match GpuCostModel::new(instance_hourly_usd, gpus_per_instance, rounding) {
            Ok(model) => model,
            Err(err) => return fail(FcStatus::InvalidArgument, err.to_string()),
        };
        let run = match TrainRun::hours("ffi", gpu_count, hours) {
            Ok(run) => run,
            Err(err) => return fail(FcStatus::InvalidArgument, err.to_string()),
        };
        let cost = training_cost(&run, &model);
        unsafe {
            *out_gpu_hours = cost.gpu_hours;
            *out_cost_usd = cost.cost_usd;
        }
        FcStatus::Ok
    })
}

/// Accumulates gold/predicted label pairs for metric reports.
pub struct FcMetrics {
    pairs: Vec<(Sentiment, Sentiment)>,
}

/// Creates an empty metrics accumulator; release with [`fc_metrics_free`].
#[no_mangle]
pub extern "C" fn fc_metrics_new() -> *mut FcMetrics {
    Box::into_raw(Box::new(FcMetrics { pairs: Vec::new() }))
}

/// Records one prediction. `gold` and `pred` use the [`FcSentiment`]
/// numbering.
///
/// # Safety
/// `metrics` must be a live pointer from [`fc_metrics_new`].
#[no_mangle]
pub unsafe extern "C" fn fc_metrics_add(
    metrics: *mut FcMetrics,
    gold: c_int,
    pred: c_int,
) -> FcStatus {
    guarded(|| {
        let Some(metrics) = metrics.as_mut() else {
            return fail(FcStatus::NullArgument, "metrics is null");
        };
        let gold = match sentiment_from_int(gold, "gold") {
            Ok(gold) => gold,
            Err(status) => return status,
        };
        let pred = match sentiment_from_int(pred, "pred") {
            Ok(pred) => pred,
            Err(status) => return status,
        };
        metrics.pairs.push((gold, pred));
        FcStatus::Ok
    })
}

/// Renders the accumulated pairs as a JSON metrics report (accuracy,
/// per-mode F1, confusion counts). Fails on an empty accumulator.
///
/// # Safety
/// `metrics` must be a live pointer from [`fc_metrics_new`]; `out`
/// receives an owned string for [`fc_string_free`].
#[no_mangle]
pub unsafe extern "C" fn fc_metrics_report_json(
    metrics: *const FcMetrics,
    out: *mut *mut c_char,
) -> FcStatus {
    guarded(|| {
        let Some(metrics) = metrics.as_ref() else {
            return fail(FcStatus::NullArgument, "metrics is null");
        };
        let placeholder_date =
            NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid placeholder date");
        let records: Vec<PredictionRecord> = metrics
            .pairs
            .iter()
            .enumerate()
            .map(|(i, &(gold, pred))| PredictionRecord {
                example_id: format!("pair-{i}"),
                gold,
                pred,
                symbol: String::new(),
                signal_date: placeholder_date,
            })
            .collect();
        let report = match compute_metrics(&records) {
            Ok(report) => report,
            Err(err) => return fail(FcStatus::ComputeError, err.to_string()),
        };
        match serde_json::to_string_pretty(&report) {
            Ok(json) => out_string(json, out),
            Err(err) => fail(FcStatus::ComputeError, err.to_string()),
        }
    })
}

/// Releases a metrics accumulator. Null is a no-op.
///
/// # Safety
/// `metrics` must be null or a pointer from [`fc_metrics_new`] not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn fc_metrics_free(metrics: *mut FcMetrics) {
    if !metrics.is_null() {
        drop(Box::from_raw(metrics));
    }
}

/// A loaded n-gram scoring model.
pub struct FcLm {
    inner: NgramLm,
}

/// Loads a model saved by the toolkit; release with [`fc_lm_free`].
///
/// # Safety
/// `path` must be null or a nul-terminated string; `out` must be a valid
/// pointer slot.
#[no_mangle]
pub unsafe extern "C" fn fc_lm_load(path: *const c_char, out: *mut *mut FcLm) -> FcStatus {
    guarded(|| {
        if out.is_null() {
            return fail(FcStatus::NullArgument, "out is null");
        }
        let path = match str_arg(path, "path") {
            Ok(path) => path,
            Err(status) => return status,
        };
        let file = match std::fs::File::open(path) {
            Ok(file) => file,
            Err(err) => return fail(FcStatus::IoError, format!("{path}: {err}")),
        };
        match NgramLm::load(std::io::BufReader::new(file)) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(FcLm { inner }));
                FcStatus::Ok
            }
            Err(err) => fail(FcStatus::ComputeError, err.to_string()),
        }
    })
}

/// Perplexity of a text under a loaded model.
///
/// # Safety
/// `lm` must be a live pointer from [`fc_lm_load`]; `text` a
/// nul-terminated string; `out` a valid slot.
#[no_mangle]
pub unsafe extern "C" fn fc_lm_perplexity(
    lm: *const FcLm,
    text: *const c_char,
    out: *mut f64,
) -> FcStatus {
    guarded(|| {
        let Some(lm) = lm.as_ref() else {
            return fail(FcStatus::NullArgument, "lm is null");
        };
        if out.is_null() {
            return fail(FcStatus::NullArgument, "out is null");
        }
        let text = match str_arg(text, "text") {
            Ok(text) => text,
            Err(status) => return status,
        };
        match lm.inner.perplexity_of_text(text) {
            Ok(value) => {
                *out = value;
                FcStatus::Ok
            }
            Err(err) => fail(FcStatus::ComputeError, err.to_string()),
        }
    })
}

/// Releases a loaded model. Null is a no-op.
///
/// # Safety
/// `lm` must be null or a pointer from [`fc_lm_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fc_lm_free(lm: *mut FcLm) {
    if !lm.is_null() {
        drop(Box::from_raw(lm));
    }
}

/// Runs a pipeline config end to end and returns the run manifest as
/// JSON. `workers` zero means one worker per core.
///
/// # Safety
/// `config_path` must be a nul-terminated string; `out_manifest_json`
/// receives an owned string for [`fc_string_free`].
#[no_mangle]
pub unsafe extern "C" fn fc_pipeline_run(
    config_path: *const c_char,
    workers: u32,
    out_manifest_json: *mut *mut c_char,
) -> FcStatus {
    guarded(|| {
        let path = match str_arg(config_path, "config_path") {
            Ok(path) => path,
            Err(status) => return status,
        };
        let workers = if workers == 0 {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        } else {
            workers as usize
        };
        match run_pipeline(path, workers) {
            Ok(manifest) => match serde_json::to_string_pretty(&manifest) {
                Ok(json) => out_string(json, out_manifest_json),
                Err(err) => fail(FcStatus::ComputeError, err.to_string()),
            },
            Err(err) => fail(FcStatus::ComputeError, err.to_string()),
        }
    })
}
