//! C ABI for prefixguard.
//!
//! Conventions: handles are opaque pointers created by `pg_*_new`/`pg_*_load`
//! and released with the matching `pg_*_free`; every fallible call returns a
//! [`PgStatus`] and writes its result through out-pointers only on
//! `PG_STATUS_OK`. The most recent error message for the calling thread is
//! available via [`pg_last_error_message`]. Handles are safe to share across
//! threads; individual calls are blocking.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use prefixguard::backend::{
    LogProbProvider, RemoteProvider, RemoteProviderConfig, ToyModel, ToyProvider,
};
use prefixguard::cli::manual_prefix_set;
use prefixguard::scoring;
use prefixguard::store::load_prefix_set;
use prefixguard::types::{PrefixSet, Prompt, TemplateMode};
use prefixguard::Error;

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// File could not be read or parsed.
    Io = 3,
    /// Backend transport or contract failure.
    Backend = 4,
    /// Input violated an invariant (empty prompt, bad label, ...).
    InvalidInput = 5,
    /// Unexpected internal failure.
    Internal = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> PgStatus {
    match err {
        Error::Io { .. } | Error::BadFile { .. } | Error::SchemaMismatch { .. } => PgStatus::Io,
        Error::Transport { .. }
        | Error::MissingLogProbs
        | Error::TokenCountMismatch { .. }
        | Error::TokenizationMismatch { .. }
        | Error::InvalidLogProb { .. } => PgStatus::Backend,
        _ => PgStatus::InvalidInput,
    }
}

fn fail(err: &Error) -> PgStatus {
    set_last_error(&err.to_string());
    status_of(err)
}

/// Catch panics at the boundary; a panic must never unwind into C.
fn guarded(f: impl FnOnce() -> PgStatus) -> PgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_last_error("internal panic");
            PgStatus::Internal
        }
    }
}

unsafe fn utf8_arg<'a>(ptr: *const c_char) -> Result<&'a str, PgStatus> {
    if ptr.is_null() {
        set_last_error("null string argument");
        return Err(PgStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_last_error("string argument is not valid UTF-8");
        PgStatus::InvalidUtf8
    })
}

/// Opaque provider handle.
pub struct PgProvider {
    inner: Arc<dyn LogProbProvider>,
}

/// Opaque prefix-set handle.
pub struct PgPrefixSet {
    inner: PrefixSet,
}

/// Score triple for one prompt, in nats.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgScore {
    pub ell_ref: f64,
    pub ell_agr: f64,
    pub s: f64,
}

/// A thresholded decision.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgDecision {
    pub score: PgScore,
    pub tau: f64,
    pub harmful: bool,
}

/// Load a toy-model file as a provider.
///
/// # Safety
/// `path` and `model_id` must be valid NUL-terminated strings; `out` must
/// point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn pg_toy_provider_load(
    path: *const c_char,
    model_id: *const c_char,
    out: *mut *mut PgProvider,
) -> PgStatus {
    guarded(|| {
        if out.is_null() {
            set_last_error("null out pointer");
            return PgStatus::NullArgument;
        }
        let path = match utf8_arg(path) {
            Ok(s) => s,
            Err(status) => return status,
        };
        let model_id = match utf8_arg(model_id) {
            Ok(s) => s,
            Err(status) => return status,
        };
        match ToyModel::load(Path::new(path)) {
            Ok(model) => {
                let provider = PgProvider {
                    inner: Arc::new(ToyProvider::new(model, model_id)),
                };
                *out = Box::into_raw(Box::new(provider));
                PgStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Create a provider for a remote endpoint speaking the prefixguard wire
/// contract. `timeout_ms == 0` means the 30 s default; `chat_template`
/// selects the chat template mode. `auth_token` may be null.
///
/// # Safety
/// String arguments must be valid NUL-terminated strings (or null where
/// documented); `out` must point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn pg_remote_provider_new(
    endpoint: *const c_char,
    model_id: *const c_char,
    chat_template: bool,
    timeout_ms: u64,
    auth_token: *const c_char,
    out: *mut *mut PgProvider,
) -> PgStatus {
    guarded(|| {
        if out.is_null() {
            set_last_error("null out pointer");
            return PgStatus::NullArgument;
        }
        let endpoint = match utf8_arg(endpoint) {
            Ok(s) => s,
            Err(status) => return status,
        };
        let model_id = match utf8_arg(model_id) {
            Ok(s) => s,
            Err(status) => return status,
        };
        let mut config = RemoteProviderConfig::new(endpoint, model_id);
        if chat_template {
            config.template = TemplateMode::Chat;
        }
        if timeout_ms > 0 {
            config.timeout = Duration::from_millis(timeout_ms);
        }
        if !auth_token.is_null() {
            match utf8_arg(auth_token) {
                Ok(token) => config.auth_token = Some(token.to_string()),
                Err(status) => return status,
            }
        }
        let provider = PgProvider {
            inner: Arc::new(RemoteProvider::new(config)),
        };
        *out = Box::into_raw(Box::new(provider));
        PgStatus::Ok
    })
}

/// # Safety
/// `provider` must be a pointer returned by a `pg_*_provider_*` constructor,
/// not yet freed; null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn pg_provider_free(provider: *mut PgProvider) {
    if !provider.is_null() {
        drop(Box::from_raw(provider));
    }
}

/// Load a prefix-set file (schema prefix_set_v1).
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` must point to
/// writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn pg_prefix_set_load(
    path: *const c_char,
    out: *mut *mut PgPrefixSet,
) -> PgStatus {
    guarded(|| {
        if out.is_null() {
            set_last_error("null out pointer");
            return PgStatus::NullArgument;
        }
        let path = match utf8_arg(path) {
            Ok(s) => s,
            Err(status) => return status,
        };
        match load_prefix_set(Path::new(path)) {
            Ok(set) => {
                *out = Box::into_raw(Box::new(PgPrefixSet { inner: set }));
                PgStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Build the built-in manual prefix set, tokenized by `provider`.
///
/// # Safety
/// `provider` must be a live provider handle; `out` must point to writable
/// storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn pg_prefix_set_manual(
    provider: *const PgProvider,
    out: *mut *mut PgPrefixSet,
) -> PgStatus {
    guarded(|| {
        if provider.is_null() || out.is_null() {
            set_last_error("null argument");
            return PgStatus::NullArgument;
        }
        let provider = &*provider;
        match manual_prefix_set(provider.inner.as_ref()) {
            Ok(set) => {
                *out = Box::into_raw(Box::new(PgPrefixSet { inner: set }));
                PgStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// # Safety
/// `set` must be a pointer returned by a `pg_prefix_set_*` constructor, not
/// yet freed; null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn pg_prefix_set_free(set: *mut PgPrefixSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

fn run_score(
    provider: &PgProvider,
    set: &PgPrefixSet,
    prompt_text: &str,
) -> Result<PgScore, Error> {
    let prompt = Prompt::new("ffi", prompt_text, None)?;
    let score = scoring::score(provider.inner.as_ref(), &prompt, &set.inner)?;
    Ok(PgScore {
        ell_ref: score.ell_ref,
        ell_agr: score.ell_agr,
        s: score.s,
    })
}

/// Score one prompt: the refusal-vs-agreement log-probability gap.
///
/// # Safety
/// `provider` and `set` must be live handles, `prompt_text` a valid
/// NUL-terminated string, `out_score` writable storage for one [`PgScore`].
#[no_mangle]
pub unsafe extern "C" fn pg_score(
    provider: *const PgProvider,
    set: *const PgPrefixSet,
    prompt_text: *const c_char,
    out_score: *mut PgScore,
) -> PgStatus {
    guarded(|| {
        if provider.is_null() || set.is_null() || out_score.is_null() {
            set_last_error("null argument");
            return PgStatus::NullArgument;
        }
        let text = match utf8_arg(prompt_text) {
            Ok(s) => s,
            Err(status) => return status,
        };
        match run_score(&*provider, &*set, text) {
            Ok(score) => {
                *out_score = score;
                PgStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Score and threshold one prompt: harmful iff s > tau.
///
/// # Safety
/// Same as [`pg_score`], with `out_decision` writable storage for one
/// [`PgDecision`].
#[no_mangle]
pub unsafe extern "C" fn pg_classify(
    provider: *const PgProvider,
    set: *const PgPrefixSet,
    prompt_text: *const c_char,
    tau: f64,
    out_decision: *mut PgDecision,
) -> PgStatus {
    guarded(|| {
        if provider.is_null() || set.is_null() || out_decision.is_null() {
            set_last_error("null argument");
            return PgStatus::NullArgument;
        }
        if !tau.is_finite() {
            set_last_error("tau must be finite");
            return PgStatus::InvalidInput;
        }
        let text = match utf8_arg(prompt_text) {
            Ok(s) => s,
            Err(status) => return status,
        };
        match run_score(&*provider, &*set, text) {
            Ok(score) => {
                *out_decision = PgDecision {
                    score,
                    tau,
                    harmful: score.s > tau,
                };
                PgStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Copy the calling thread's last error message into `buf` (truncated to
/// `len - 1` bytes, always NUL-terminated when `len > 0`). Returns the full
/// message length in bytes, excluding the NUL.
///
/// # Safety
/// `buf` must point to at least `len` writable bytes, or be null (then only
/// the required length is returned).
#[no_mangle]
pub unsafe extern "C" fn pg_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let message = slot.borrow();
        let bytes = message.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
