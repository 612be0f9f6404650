//! C interface to the semhallu core library.
//!
//! Every fallible call returns a [`SemhalluStatus`] and writes its result
//! through an out-pointer. On failure the message is available from
//! [`semhallu_last_error`] on the same thread. Handles are opaque and must
//! be released with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use semhallu::harness::{RunConfig, RunResult, Runner};
use semhallu::store::{read_bank, write_bank, FeatureBank, SemanticBank};
use semhallu::synthetic::{generate, SyntheticSpec};
use semhallu::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SemhalluStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    /// Bad magic, unsupported version, truncated or trailing bytes.
    Format = 4,
    /// Data that violates a bank invariant.
    InvalidData = 5,
    /// Bad parameter, config or JSON.
    InvalidArgument = 6,
    /// Too few classes or samples for the request.
    InsufficientData = 7,
    /// Divergence or a failed factorization.
    Numerical = 8,
    /// A bug in the library; the handle arguments should not be reused.
    Panic = 9,
}

pub struct SemhalluFeatureBank(FeatureBank);
pub struct SemhalluSemanticBank(SemanticBank);
pub struct SemhalluRunner(Runner);
pub struct SemhalluResult {
    result: RunResult,
    json: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> SemhalluStatus {
    match e {
        Error::Io { .. } => SemhalluStatus::Io,
        Error::UnrecognizedFormat { .. }
        | Error::UnsupportedVersion { .. }
        | Error::Truncated { .. }
        | Error::TrailingBytes { .. } => SemhalluStatus::Format,
        Error::InvalidBank(_)
        | Error::DimensionMismatch { .. }
        | Error::NegativeValue { .. }
        | Error::MissingSemantic(_) => SemhalluStatus::InvalidData,
        Error::InsufficientClasses { .. }
        | Error::InsufficientSamples { .. }
        | Error::EmptyInput(_) => SemhalluStatus::InsufficientData,
        Error::Divergence(_) | Error::Factorization { .. } => SemhalluStatus::Numerical,
        Error::Episode { source, .. } => status_of(source),
        _ => SemhalluStatus::InvalidArgument,
    }
}

enum Failure {
    Status(SemhalluStatus, String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

/// Runs `f`, records any error and converts it to a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SemhalluStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            SemhalluStatus::Ok
        }
        Ok(Err(Failure::Core(e))) => {
            set_last_error(&e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Status(s, msg))) => {
            set_last_error(&msg);
            s
        }
        Err(_) => {
            set_last_error("internal panic");
            SemhalluStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Status(
            SemhalluStatus::NullPointer,
            format!("{name} is null"),
        ));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        Failure::Status(SemhalluStatus::InvalidUtf8, format!("{name} is not UTF-8"))
    })
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| {
        Failure::Status(SemhalluStatus::NullPointer, format!("{name} is null"))
    })
}

fn out_arg<T>(p: *mut *mut T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::Status(
            SemhalluStatus::NullPointer,
            format!("{name} is null"),
        ))
    } else {
        Ok(())
    }
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn semhallu_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn semhallu_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a feature bank file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn semhallu_feature_bank_load(
    path: *const c_char,
    out: *mut *mut SemhalluFeatureBank,
) -> SemhalluStatus {
    guard(|| {
        out_arg(out, "out")?;
        let bank: FeatureBank = read_bank(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(SemhalluFeatureBank(bank)));
        Ok(())
    })
}

/// # Safety
/// `bank` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn semhallu_feature_bank_write(
    bank: *const SemhalluFeatureBank,
    path: *const c_char,
) -> SemhalluStatus {
    guard(|| {
        write_bank(&ref_arg(bank, "bank")?.0, str_arg(path, "path")?)?;
        Ok(())
    })
}

/// Feature dimension, or 0 for a null handle.
///
/// # Safety
/// `bank` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn semhallu_feature_bank_dim(bank: *const SemhalluFeatureBank) -> usize {
    bank.as_ref().map_or(0, |b| b.0.dim)
}

/// Number of classes over all splits, or 0 for a null handle.
///
/// # Safety
/// `bank` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn semhallu_feature_bank_class_count(
    bank: *const SemhalluFeatureBank,
) -> usize {
    bank.as_ref().map_or(0, |b| b.0.classes.len())
}

/// # Safety
/// `bank` must be null or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn semhallu_feature_bank_free(bank: *mut SemhalluFeatureBank) {
    if !bank.is_null() {
        drop(Box::from_raw(bank));
    }
}

/// Loads a semantic bank file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn semhallu_semantic_bank_load(
    path: *const c_char,
    out: *mut *mut SemhalluSemanticBank,
) -> SemhalluStatus {
    guard(|| {
        out_arg(out, "out")?;
        let bank: SemanticBank = read_bank(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(SemhalluSemanticBank(bank)));
        Ok(())
    })
}

/// # Safety
/// `bank` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn semhallu_semantic_bank_write(
    bank: *const SemhalluSemanticBank,
    path: *const c_char,
) -> SemhalluStatus {
    guard(|| {
        write_bank(&ref_arg(bank, "bank")?.0, str_arg(path, "path")?)?;
        Ok(())
    })
}

/// Semantic dimension, or 0 for a null handle.
///
/// # Safety
/// `bank` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn semhallu_semantic_bank_dim(bank: *const SemhalluSemanticBank) -> usize {
    bank.as_ref().map_or(0, |b| b.0.dim)
}

/// # Safety
/// `bank` must be null or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn semhallu_semantic_bank_free(bank: *mut SemhalluSemanticBank) {
    if !bank.is_null() {
        drop(Box::from_raw(bank));
    }
}

/// Generates synthetic banks from a JSON spec; null or `{}` uses defaults.
///
/// # Safety
/// `spec_json` must be null or NUL-terminated; both outputs must be valid
/// pointers.
#[no_mangle]
pub unsafe extern "C" fn semhallu_synthetic_generate(
    spec_json: *const c_char,
    features: *mut *mut SemhalluFeatureBank,
    semantics: *mut *mut SemhalluSemanticBank,
) -> SemhalluStatus {
    guard(|| {
        out_arg(features, "features")?;
        out_arg(semantics, "semantics")?;
        let spec: SyntheticSpec = if spec_json.is_null() {
            SyntheticSpec::default()
        } else {
            SyntheticSpec::from_json(str_arg(spec_json, "spec_json")?)?
        };
        let (f, s) = generate(&spec)?;
        *features = Box::into_raw(Box::new(SemhalluFeatureBank(f)));
        *semantics = Box::into_raw(Box::new(SemhalluSemanticBank(s)));
        Ok(())
    })
}

/// Builds a runner over copies of the two banks, which stay owned by the
/// caller. `workers` of 0 uses one thread per core.
///
/// # Safety
/// Both banks must come from this library; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn semhallu_runner_new(
    features: *const SemhalluFeatureBank,
    semantics: *const SemhalluSemanticBank,
    workers: usize,
    out: *mut *mut SemhalluRunner,
) -> SemhalluStatus {
    guard(|| {
        out_arg(out, "out")?;
        let f = ref_arg(features, "features")?.0.clone();
        let s = ref_arg(semantics, "semantics")?.0.clone();
        let runner = Runner::new(f, s)?.with_workers((workers > 0).then_some(workers));
        *out = Box::into_raw(Box::new(SemhalluRunner(runner)));
        Ok(())
    })
}

/// Runs the JSON config against the runner's banks; the config's `data`
/// field is ignored.
///
/// # Safety
/// `runner` must come from this library, `config_json` must be
/// NUL-terminated and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn semhallu_runner_run(
    runner: *const SemhalluRunner,
    config_json: *const c_char,
    out: *mut *mut SemhalluResult,
) -> SemhalluStatus {
    guard(|| {
        out_arg(out, "out")?;
        let runner = ref_arg(runner, "runner")?;
        let config = RunConfig::from_json(str_arg(config_json, "config_json")?)?;
        let result = runner.0.run(&config)?;
        let json = CString::new(result.to_json()?).unwrap_or_default();
        *out = Box::into_raw(Box::new(SemhalluResult { result, json }));
        Ok(())
    })
}

/// # Safety
/// `runner` must be null or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn semhallu_runner_free(runner: *mut SemhalluRunner) {
    if !runner.is_null() {
        drop(Box::from_raw(runner));
    }
}

/// Mean episode accuracy in [0, 1], or NaN for a null handle.
///
/// # Safety
/// `result` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn semhallu_result_mean_accuracy(result: *const SemhalluResult) -> f64 {
    result.as_ref().map_or(f64::NAN, |r| r.result.mean_accuracy)
}

/// Half-width of the 95% confidence interval, or NaN for a null handle.
///
/// # Safety
/// `result` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn semhallu_result_ci95(result: *const SemhalluResult) -> f64 {
    result.as_ref().map_or(f64::NAN, |r| r.result.ci95)
}

/// Number of episodes, or 0 for a null handle.
///
/// # Safety
/// `result` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn semhallu_result_episode_count(result: *const SemhalluResult) -> usize {
    result.as_ref().map_or(0, |r| r.result.per_episode.len())
}

/// Copies up to `len` per-episode accuracies into `out` and returns how
/// many were written.
///
/// # Safety
/// `result` must be null or come from this library; `out` must be null or
/// point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn semhallu_result_per_episode(
    result: *const SemhalluResult,
    out: *mut f64,
    len: usize,
) -> usize {
    match (result.as_ref(), out.is_null()) {
        (Some(r), false) => {
            let n = len.min(r.result.per_episode.len());
            ptr::copy_nonoverlapping(r.result.per_episode.as_ptr(), out, n);
            n
        }
        _ => 0,
    }
}

/// The full results document as JSON, owned by the handle.
///
/// # Safety
/// `result` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn semhallu_result_json(result: *const SemhalluResult) -> *const c_char {
    result.as_ref().map_or(ptr::null(), |r| r.json.as_ptr())
}

/// # Safety
/// `result` must be null or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn semhallu_result_free(result: *mut SemhalluResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}
