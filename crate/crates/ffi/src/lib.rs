//! C ABI over the adaptlab core: load a vocabulary and a checkpoint,
//! tokenize, translate and score corpus BLEU.
//!
//! Every fallible function returns an [`AdaptlabStatus`]. On failure the
//! message is available from [`adaptlab_last_error`] on the same thread
//! until the next call. Handles are opaque and must be released with their
//! matching `_free` function. Strings returned through out-parameters are
//! released with [`adaptlab_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use adaptlab::corpus::Vocabulary;
use adaptlab::eval::{corpus_bleu, translate_line, DecodeConfig};
use adaptlab::model::{load_checkpoint, ModelParameters};
use adaptlab::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdaptlabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Data = 4,
    Numerical = 5,
    Io = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Token vocabulary handle.
pub struct AdaptlabVocab(Vocabulary);

/// Model checkpoint handle (single precision).
pub struct AdaptlabModel(ModelParameters<f32>);

struct Fail {
    status: AdaptlabStatus,
    message: String,
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match e.root() {
            Error::Io { .. } => AdaptlabStatus::Io,
            Error::Config(_) | Error::Plan(_) | Error::Scope(_) | Error::Json(_) => AdaptlabStatus::Config,
            Error::Numerical { .. } | Error::GradientCheck { .. } => AdaptlabStatus::Numerical,
            _ => AdaptlabStatus::Data,
        };
        Fail {
            status,
            message: e.to_string(),
        }
    }
}

fn fail(status: AdaptlabStatus, message: impl Into<String>) -> Fail {
    Fail {
        status,
        message: message.into(),
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AdaptlabStatus {
    set_last_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AdaptlabStatus::Ok,
        Ok(Err(e)) => {
            set_last_error(&e.message);
            e.status
        }
        Err(_) => {
            set_last_error("internal panic");
            AdaptlabStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(fail(AdaptlabStatus::NullPointer, format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(AdaptlabStatus::InvalidUtf8, format!("`{name}` is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| fail(AdaptlabStatus::NullPointer, format!("`{name}` is null")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| fail(AdaptlabStatus::NullPointer, format!("`{name}` is null")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn adaptlab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or an empty string.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn adaptlab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a vocabulary JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn adaptlab_vocab_load(path: *const c_char, out: *mut *mut AdaptlabVocab) -> AdaptlabStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let v = Vocabulary::load(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(AdaptlabVocab(v)));
        Ok(())
    })
}

/// Parses a vocabulary from a JSON document in memory.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn adaptlab_vocab_from_json(json: *const c_char, out: *mut *mut AdaptlabVocab) -> AdaptlabStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let v = Vocabulary::from_json(str_arg(json, "json")?)?;
        *out = Box::into_raw(Box::new(AdaptlabVocab(v)));
        Ok(())
    })
}

/// # Safety
/// `vocab` must come from a vocabulary constructor and `out_len` be writable.
#[no_mangle]
pub unsafe extern "C" fn adaptlab_vocab_size(vocab: *const AdaptlabVocab, out_len: *mut usize) -> AdaptlabStatus {
    guard(|| {
        *out_arg(out_len, "out_len")? = ref_arg(vocab, "vocab")?.0.len();
        Ok(())
    })
}

/// # Safety
/// `vocab` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn adaptlab_vocab_free(vocab: *mut AdaptlabVocab) {
    if !vocab.is_null() {
        drop(Box::from_raw(vocab));
    }
}

/// Token ids of one line. `out_len` always receives the required length;
/// if it exceeds `capacity` nothing is written to `ids` and the call
/// returns `BufferTooSmall`.
///
/// # Safety
/// `ids` must have room for `capacity` values (it may be null when
/// `capacity` is 0).
#[no_mangle]
pub unsafe extern "C" fn adaptlab_tokenize(
    vocab: *const AdaptlabVocab,
    line: *const c_char,
    ids: *mut u32,
    capacity: usize,
    out_len: *mut usize,
) -> AdaptlabStatus {
    guard(|| {
        let out_len = out_arg(out_len, "out_len")?;
        let tokens = ref_arg(vocab, "vocab")?.0.tokenize(str_arg(line, "line")?)?;
        *out_len = tokens.len();
        if tokens.len() > capacity {
            return Err(fail(
                AdaptlabStatus::BufferTooSmall,
                format!("{} ids needed, capacity {capacity}", tokens.len()),
            ));
        }
        if ids.is_null() {
            return Err(fail(AdaptlabStatus::NullPointer, "`ids` is null"));
        }
        ptr::copy_nonoverlapping(tokens.as_ptr(), ids, tokens.len());
        Ok(())
    })
}

/// Loads a single-precision checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn adaptlab_model_load(path: *const c_char, out: *mut *mut AdaptlabModel) -> AdaptlabStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let m = load_checkpoint::<f32>(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(AdaptlabModel(m)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`adaptlab_model_load`] and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn adaptlab_model_parameter_count(model: *const AdaptlabModel, out: *mut usize) -> AdaptlabStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(model, "model")?.0.parameter_count();
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn adaptlab_model_free(model: *mut AdaptlabModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Beam-decodes one source line. The result is written to `*out_text` and
/// must be released with [`adaptlab_string_free`].
///
/// # Safety
/// Handles must be live, `source` NUL-terminated and `out_text` writable.
#[no_mangle]
pub unsafe extern "C" fn adaptlab_translate(
    model: *const AdaptlabModel,
    vocab: *const AdaptlabVocab,
    source: *const c_char,
    beam_size: usize,
    out_text: *mut *mut c_char,
) -> AdaptlabStatus {
    guard(|| {
        let out = out_arg(out_text, "out_text")?;
        *out = ptr::null_mut();
        let (model, vocab) = (&ref_arg(model, "model")?.0, &ref_arg(vocab, "vocab")?.0);
        if beam_size == 0 {
            return Err(fail(AdaptlabStatus::Config, "beam_size must be positive"));
        }
        if model.config.vocab_size != vocab.len() {
            return Err(fail(
                AdaptlabStatus::Config,
                format!("model expects {} tokens, vocabulary has {}", model.config.vocab_size, vocab.len()),
            ));
        }
        let decode = DecodeConfig {
            beam_size,
            ..DecodeConfig::default()
        };
        let text = translate_line(model, vocab, str_arg(source, "source")?, &decode)?;
        *out = CString::new(text).map_err(|_| fail(AdaptlabStatus::Data, "translation contains NUL"))?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn adaptlab_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Corpus BLEU (0 to 100) of `n` hypotheses against `n` references.
///
/// # Safety
/// `hyps` and `refs` must each point to `n` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn adaptlab_corpus_bleu(
    hyps: *const *const c_char,
    refs: *const *const c_char,
    n: usize,
    out_score: *mut f64,
) -> AdaptlabStatus {
    guard(|| {
        let out = out_arg(out_score, "out_score")?;
        if hyps.is_null() || refs.is_null() {
            return Err(fail(AdaptlabStatus::NullPointer, "`hyps` or `refs` is null"));
        }
        let collect = |arr: *const *const c_char, name: &str| -> Result<Vec<&str>, Fail> {
            (0..n).map(|i| str_arg(*arr.add(i), &format!("{name}[{i}]"))).collect()
        };
        let h = collect(hyps, "hyps")?;
        let r = collect(refs, "refs")?;
        *out = corpus_bleu(&h, &r)?.score;
        Ok(())
    })
}
