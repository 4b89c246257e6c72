//! C interface to the `csrr` dialogue model.
//!
//! Every fallible function returns a [`CsrrStatus`]; on failure the message is
//! available from [`csrr_last_error_message`] on the same thread. Strings
//! returned by the library must be released with [`csrr_string_free`], model
//! handles with [`csrr_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use csrr::inference::{ChatModel, GenerationOptions, LatentMode, Strategy};
use csrr::nn::{gaussian_kl, GaussianParams};

/// Opaque model handle.
pub struct CsrrModel {
    inner: ChatModel,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsrrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    InvalidArgument = 5,
    Checkpoint = 6,
    Internal = 7,
    Panic = 8,
}

pub const CSRR_STRATEGY_GREEDY: u32 = 0;
pub const CSRR_STRATEGY_SAMPLE: u32 = 1;
pub const CSRR_LATENT_MEAN: u32 = 0;
pub const CSRR_LATENT_SAMPLE: u32 = 1;

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CsrrGenerateOptions {
    /// `CSRR_STRATEGY_GREEDY` or `CSRR_STRATEGY_SAMPLE`.
    pub strategy: u32,
    /// `CSRR_LATENT_MEAN` or `CSRR_LATENT_SAMPLE`.
    pub latent_mode: u32,
    pub temperature: f64,
    pub seed: u64,
    /// 0 means the model's utterance length.
    pub max_tokens: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(CsrrStatus, String);

impl From<csrr::Error> for Failure {
    fn from(e: csrr::Error) -> Self {
        let status = match &e {
            csrr::Error::Io { .. } => CsrrStatus::Io,
            csrr::Error::Parse { .. } => CsrrStatus::Parse,
            csrr::Error::InvalidArgument(_) | csrr::Error::DimensionMismatch { .. } | csrr::Error::EmptyCorpus => {
                CsrrStatus::InvalidArgument
            }
            csrr::Error::Checkpoint(_) | csrr::Error::CheckpointVersion { .. } => CsrrStatus::Checkpoint,
            _ => CsrrStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CsrrStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CsrrStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            CsrrStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(CsrrStatus::NullPointer, format!("{what} is null"))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(CsrrStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(CsrrStatus::InvalidArgument, msg.into())
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next library call on this thread.
#[no_mangle]
pub extern "C" fn csrr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static, NUL-terminated library version.
#[no_mangle]
pub extern "C" fn csrr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn csrr_generate_options_default() -> CsrrGenerateOptions {
    CsrrGenerateOptions {
        strategy: CSRR_STRATEGY_GREEDY,
        latent_mode: CSRR_LATENT_MEAN,
        temperature: 1.0,
        seed: 0,
        max_tokens: 0,
    }
}

/// Loads a checkpoint. `vocab_path` may be null, in which case `vocab.txt`
/// next to the checkpoint is used.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn csrr_model_load(
    checkpoint_path: *const c_char,
    vocab_path: *const c_char,
    out: *mut *mut CsrrModel,
) -> CsrrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let ckpt = read_str(checkpoint_path, "checkpoint_path")?;
        let vocab = if vocab_path.is_null() {
            None
        } else {
            Some(read_str(vocab_path, "vocab_path")?)
        };
        let inner = ChatModel::load(Path::new(ckpt), vocab.map(Path::new))?;
        *out = Box::into_raw(Box::new(CsrrModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from [`csrr_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn csrr_model_free(model: *mut CsrrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Vocabulary size, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn csrr_model_vocab_size(model: *const CsrrModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.vocab.len())
}

/// Generates the next utterance after `history[0..history_len]` (oldest
/// first). `options` may be null for the defaults. On success `*out_text`
/// holds a string to release with [`csrr_string_free`].
///
/// # Safety
/// `history` must point to `history_len` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn csrr_generate(
    model: *const CsrrModel,
    history: *const *const c_char,
    history_len: usize,
    options: *const CsrrGenerateOptions,
    out_text: *mut *mut c_char,
) -> CsrrStatus {
    guard(|| {
        if out_text.is_null() {
            return Err(null("out_text"));
        }
        *out_text = ptr::null_mut();
        let model = &model.as_ref().ok_or_else(|| null("model"))?.inner;
        if history_len == 0 {
            return Err(invalid("history is empty"));
        }
        if history.is_null() {
            return Err(null("history"));
        }
        let lines = std::slice::from_raw_parts(history, history_len);
        let encoded = lines
            .iter()
            .map(|&p| read_str(p, "history entry").map(|t| model.encode(t)))
            .collect::<Result<Vec<_>, _>>()?;
        let raw = options.as_ref().copied().unwrap_or_else(|| csrr_generate_options_default());
        let opts = GenerationOptions {
            strategy: match raw.strategy {
                CSRR_STRATEGY_GREEDY => Strategy::Greedy,
                CSRR_STRATEGY_SAMPLE => Strategy::Sample,
                s => return Err(invalid(format!("unknown strategy {s}"))),
            },
            latent_mode: match raw.latent_mode {
                CSRR_LATENT_MEAN => LatentMode::Mean,
                CSRR_LATENT_SAMPLE => LatentMode::Sample,
                m => return Err(invalid(format!("unknown latent mode {m}"))),
            },
            temperature: raw.temperature,
            max_tokens: if raw.max_tokens == 0 {
                model.config().pad_length
            } else {
                raw.max_tokens
            },
            num_candidates: 1,
            seed: raw.seed,
        };
        let keep = model.config().max_conv_length;
        let rows: Vec<&[usize]> = encoded.iter().map(Vec::as_slice).collect();
        let rows = &rows[rows.len().saturating_sub(keep)..];
        let cand = model.respond(rows, &opts)?.remove(0);
        let text = CString::new(model.text_of(&cand.tokens)).map_err(|_| invalid("response holds a NUL byte"))?;
        *out_text = text.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn csrr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Closed-form `KL(q || p)` between diagonal Gaussians of dimension `dim`.
///
/// # Safety
/// The four arrays must hold `dim` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn csrr_gaussian_kl(
    mu_q: *const f64,
    sigma_q: *const f64,
    mu_p: *const f64,
    sigma_p: *const f64,
    dim: usize,
    out: *mut f64,
) -> CsrrStatus {
    guard(|| {
        if [mu_q, sigma_q, mu_p, sigma_p].iter().any(|p| p.is_null()) || out.is_null() {
            return Err(null("argument"));
        }
        let v = |p: *const f64| std::slice::from_raw_parts(p, dim).to_vec();
        let q = GaussianParams::new(v(mu_q), v(sigma_q))?;
        let p = GaussianParams::new(v(mu_p), v(sigma_p))?;
        *out = gaussian_kl(&q, &p)?;
        Ok(())
    })
}

/// Distinct-`n` over whitespace-tokenized `lines`.
///
/// # Safety
/// `lines` must point to `count` NUL-terminated strings; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn csrr_distinct_n(lines: *const *const c_char, count: usize, n: usize, out: *mut f64) -> CsrrStatus {
    guard(|| {
        if out.is_null() || (lines.is_null() && count > 0) {
            return Err(null("argument"));
        }
        let raw = if count == 0 { &[][..] } else { std::slice::from_raw_parts(lines, count) };
        let toks = raw
            .iter()
            .map(|&p| read_str(p, "line").map(|l| l.split_whitespace().collect::<Vec<_>>()))
            .collect::<Result<Vec<_>, _>>()?;
        *out = csrr::metrics::distinct_n(&toks, n)?;
        Ok(())
    })
}
