//! C ABI over `sysarg-core`.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! functions and released by the matching `*_free`. Every fallible call
//! returns a [`SysargStatus`]; the message of the last failure on the
//! calling thread is available from [`sysarg_last_error`]. Strings returned
//! by the library must be released with [`sysarg_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use sysarg::event::build_vocab;
use sysarg::experiment::score_sequences;
use sysarg::ingest::{parse_line, parse_stamp, window};
use sysarg::jsonl::{read_jsonl, write_event};
use sysarg::model::Checkpoint;
use sysarg::repr::SinusoidalEncoder;
use sysarg::synth::{Generator, WorkloadConfig};
use sysarg::{encode_event, Error, Vocab};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SysargStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    /// Invalid configuration or argument value.
    Config = 4,
    Io = 5,
    VocabMismatch = 6,
    BufferTooSmall = 7,
    Runtime = 8,
    Panic = 9,
}

/// A trained model loaded from a checkpoint file.
pub struct SysargModel {
    checkpoint: Checkpoint,
}

/// A token vocabulary with reserved ids 0 (pad), 1 (unknown), 2 (mask).
pub struct SysargVocab {
    vocab: Vocab,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SysargStatus {
    match e {
        Error::VocabMismatch { .. } => SysargStatus::VocabMismatch,
        Error::Io(_) => SysargStatus::Io,
        Error::Jsonl { .. } | Error::Parse { .. } | Error::AtLine { .. } | Error::Json(_) | Error::InvalidEvent(_) => {
            SysargStatus::Parse
        }
        Error::Dimension(_) | Error::OutOfRange { .. } => SysargStatus::Config,
        e if e.is_config() => SysargStatus::Config,
        _ => SysargStatus::Runtime,
    }
}

struct Fail(SysargStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard<F>(f: F) -> SysargStatus
where
    F: FnOnce() -> Result<(), Fail>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SysargStatus::Ok,
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("panic inside sysarg".into());
            SysargStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail(SysargStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    non_null(p, what)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(SysargStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

fn into_c_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Fail(SysargStatus::Runtime, "output contains a NUL byte".into()))
}

/// Copies the last error message of this thread into `buf` (truncated,
/// always NUL-terminated) and returns the full message length, or 0 when
/// there is none.
///
/// # Safety
/// `buf` must be null or valid for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn sysarg_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && cap > 0 {
                let n = bytes.len().min(cap - 1);
                ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
                *buf.add(n) = 0;
            }
            bytes.len()
        }
    })
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn sysarg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be null or a pointer previously returned by this library.
#[no_mangle]
pub unsafe extern "C" fn sysarg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Sinusoidal encoding of `x` into `out[0..dim]`; `dim` must be even and
/// positive.
///
/// # Safety
/// `out` must be valid for `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn sysarg_encode(x: f64, dim: usize, out: *mut f64) -> SysargStatus {
    guard(|| {
        non_null(out, "out")?;
        let enc = SinusoidalEncoder::new(dim)?;
        enc.encode_into(x, std::slice::from_raw_parts_mut(out, dim));
        Ok(())
    })
}

/// Parses one babeltrace text line into a canonical JSON object string.
/// With `epoch_ns` 0 the line's own stamp is used as the epoch, giving a
/// zero timestamp.
///
/// # Safety
/// `line` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sysarg_parse_line(line: *const c_char, epoch_ns: u64, out: *mut *mut c_char) -> SysargStatus {
    guard(|| {
        let line = str_arg(line, "line")?;
        non_null(out, "out")?;
        let epoch = if epoch_ns == 0 { parse_stamp(line)? } else { epoch_ns };
        let event = parse_line(line, epoch)?;
        let mut buf = Vec::new();
        write_event(&mut buf, &event)?;
        let text = String::from_utf8(buf).map_err(|e| Fail(SysargStatus::Runtime, e.to_string()))?;
        *out = into_c_string(text.trim_end().to_string())?;
        Ok(())
    })
}

/// Generates `n_events` synthetic events with the default workload as
/// canonical JSONL text.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sysarg_generate(seed: u64, n_events: usize, out: *mut *mut c_char) -> SysargStatus {
    guard(|| {
        non_null(out, "out")?;
        let cfg = WorkloadConfig {
            seed,
            n_events,
            ..WorkloadConfig::default()
        };
        let mut buf = Vec::new();
        for e in Generator::new(cfg)? {
            write_event(&mut buf, &e)?;
        }
        let text = String::from_utf8(buf).map_err(|e| Fail(SysargStatus::Runtime, e.to_string()))?;
        *out = into_c_string(text)?;
        Ok(())
    })
}

/// Builds a vocabulary from newline-separated tokens, keeping tokens seen
/// at least `min_count` times.
///
/// # Safety
/// `tokens` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sysarg_vocab_build(
    tokens: *const c_char,
    min_count: usize,
    out: *mut *mut SysargVocab,
) -> SysargStatus {
    guard(|| {
        let text = str_arg(tokens, "tokens")?;
        non_null(out, "out")?;
        let vocab = build_vocab(text.lines().filter(|l| !l.is_empty()), min_count)?;
        *out = Box::into_raw(Box::new(SysargVocab { vocab }));
        Ok(())
    })
}

/// # Safety
/// `v` must be null or a handle from [`sysarg_vocab_build`].
#[no_mangle]
pub unsafe extern "C" fn sysarg_vocab_free(v: *mut SysargVocab) {
    if !v.is_null() {
        drop(Box::from_raw(v));
    }
}

/// Number of ids including the reserved ones; 0 for a null handle.
///
/// # Safety
/// `v` must be null or a live vocabulary handle.
#[no_mangle]
pub unsafe extern "C" fn sysarg_vocab_len(v: *const SysargVocab) -> usize {
    v.as_ref().map_or(0, |v| v.vocab.len())
}

/// Id of `token`, or the unknown id 1 for unseen tokens.
///
/// # Safety
/// `v` must be a live vocabulary handle, `token` a valid C string and `id`
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sysarg_vocab_lookup(v: *const SysargVocab, token: *const c_char, id: *mut u32) -> SysargStatus {
    guard(|| {
        non_null(v, "vocab")?;
        non_null(id, "id")?;
        let token = str_arg(token, "token")?;
        *id = (*v).vocab.lookup(token);
        Ok(())
    })
}

/// Hex SHA-256 fingerprint of the vocabulary.
///
/// # Safety
/// `v` must be a live vocabulary handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sysarg_vocab_hash(v: *const SysargVocab, out: *mut *mut c_char) -> SysargStatus {
    guard(|| {
        non_null(v, "vocab")?;
        non_null(out, "out")?;
        *out = into_c_string((*v).vocab.hash())?;
        Ok(())
    })
}

/// Loads a checkpoint written by `sysarg train`.
///
/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sysarg_model_load(path: *const c_char, out: *mut *mut SysargModel) -> SysargStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        non_null(out, "out")?;
        let checkpoint = Checkpoint::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(SysargModel { checkpoint }));
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a handle from [`sysarg_model_load`].
#[no_mangle]
pub unsafe extern "C" fn sysarg_model_free(m: *mut SysargModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Events per scored window; 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn sysarg_model_window_len(m: *const SysargModel) -> usize {
    m.as_ref().map_or(0, |m| m.checkpoint.model.config.window_len)
}

/// Scores a canonical JSONL trace: the events are windowed with the
/// model's window length (a trailing partial window is dropped) and the
/// log-likelihood of each window is written to `scores`. `*n_windows`
/// receives the window count even when `cap` is too small, in which case
/// nothing is written and `BufferTooSmall` is returned.
///
/// # Safety
/// `m` must be a live model handle, `jsonl` a valid C string, `scores`
/// valid for `cap` doubles (or null with `cap` 0) and `n_windows` a valid
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn sysarg_model_score_jsonl(
    m: *const SysargModel,
    jsonl: *const c_char,
    scores: *mut f64,
    cap: usize,
    n_windows: *mut usize,
) -> SysargStatus {
    guard(|| {
        non_null(m, "model")?;
        non_null(n_windows, "n_windows")?;
        let text = str_arg(jsonl, "jsonl")?;
        let ck = &(*m).checkpoint;
        let events = read_jsonl(text.as_bytes())?;
        let records = events.iter().map(|e| encode_event(e, &ck.sys_vocab, &ck.proc_vocab));
        let seqs = window(records, ck.model.config.window_len)?;
        *n_windows = seqs.len();
        if seqs.len() > cap {
            return Err(Fail(
                SysargStatus::BufferTooSmall,
                format!("{} windows, buffer holds {cap}", seqs.len()),
            ));
        }
        let values = score_sequences(&ck.model, &seqs)?;
        if !values.is_empty() {
            non_null(scores, "scores")?;
            std::slice::from_raw_parts_mut(scores, values.len()).copy_from_slice(&values);
        }
        Ok(())
    })
}
