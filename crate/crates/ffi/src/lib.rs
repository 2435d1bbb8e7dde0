//! C ABI over `lusoforge`.
//!
//! Every fallible call returns an [`LfStatus`]; on failure a message for
//! the calling thread is available from [`lf_last_error_message`].
//! Handles are opaque and must be released with their `_free` function.
//! Output buffers follow one convention: pass the capacity, receive the
//! required length; when the buffer is too small nothing is written and
//! `LF_STATUS_BUFFER_TOO_SMALL` is returned, so callers may probe with a
//! null buffer and zero capacity.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use lusoforge::encoder::{relative_bucket, Checkpoint};
use lusoforge::finetune::{accuracy, f1_binary, pearson};
use lusoforge::pretrain::lr_at;
use lusoforge::tokenizer::TokenizerModel;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Format = 5,
    BufferTooSmall = 6,
    NotFound = 7,
    Panic = 8,
}

/// Trained subword vocabulary.
pub struct LfTokenizer {
    inner: TokenizerModel,
}

/// Loaded checkpoint: configuration plus named tensors.
pub struct LfCheckpoint {
    inner: Checkpoint,
    names: Vec<String>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: LfStatus, msg: impl Into<String>) -> LfStatus {
    set_error(msg);
    status
}

/// Runs `f`, turning panics into `LF_STATUS_PANIC`. Clears the thread's
/// last error first.
fn guard(f: impl FnOnce() -> LfStatus) -> LfStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(LfStatus::Panic, msg)
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, n: usize) -> Result<&'a [T], LfStatus> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(LfStatus::NullPointer, "null array with non-zero length"));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn string<'a>(p: *const c_char) -> Result<&'a str, LfStatus> {
    if p.is_null() {
        return Err(fail(LfStatus::NullPointer, "null string"));
    }
    CStr::from_ptr(p).to_str().map_err(|e| fail(LfStatus::InvalidUtf8, e.to_string()))
}

/// Copies `src` to `dst` when it fits, and always reports the length.
unsafe fn emit<T: Copy>(src: &[T], dst: *mut T, cap: usize, len: *mut usize) -> LfStatus {
    if len.is_null() {
        return fail(LfStatus::NullPointer, "null length pointer");
    }
    *len = src.len();
    if src.len() > cap {
        return fail(LfStatus::BufferTooSmall, format!("need {} elements, capacity {cap}", src.len()));
    }
    if !src.is_empty() {
        if dst.is_null() {
            return fail(LfStatus::NullPointer, "null output buffer");
        }
        ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    }
    LfStatus::Ok
}

/// Writes `s` plus a terminating NUL; `*len` excludes the NUL.
unsafe fn emit_str(s: &str, buf: *mut c_char, cap: usize, len: *mut usize) -> LfStatus {
    if len.is_null() {
        return fail(LfStatus::NullPointer, "null length pointer");
    }
    *len = s.len();
    if s.len() + 1 > cap {
        return fail(LfStatus::BufferTooSmall, format!("need {} bytes, capacity {cap}", s.len() + 1));
    }
    if buf.is_null() {
        return fail(LfStatus::NullPointer, "null output buffer");
    }
    ptr::copy_nonoverlapping(s.as_ptr().cast::<c_char>(), buf, s.len());
    *buf.add(s.len()) = 0;
    LfStatus::Ok
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn lf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub unsafe extern "C" fn lf_pearson(pred: *const f64, gold: *const f64, n: usize, out: *mut f64) -> LfStatus {
    guard(|| {
        let (p, g) = (tri!(slice(pred, n)), tri!(slice(gold, n)));
        if out.is_null() {
            return fail(LfStatus::NullPointer, "null out");
        }
        match pearson(p, g) {
            Ok(v) => {
                *out = v;
                LfStatus::Ok
            }
            Err(e) => fail(LfStatus::InvalidArgument, e.to_string()),
        }
    })
}

fn labels(v: &[u32]) -> Vec<usize> {
    v.iter().map(|&x| x as usize).collect()
}

#[no_mangle]
pub unsafe extern "C" fn lf_accuracy(pred: *const u32, gold: *const u32, n: usize, out: *mut f64) -> LfStatus {
    guard(|| {
        let (p, g) = (tri!(slice(pred, n)), tri!(slice(gold, n)));
        if out.is_null() {
            return fail(LfStatus::NullPointer, "null out");
        }
        match accuracy(&labels(p), &labels(g)) {
            Ok(v) => {
                *out = v;
                LfStatus::Ok
            }
            Err(e) => fail(LfStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// F1 of class `positive`.
#[no_mangle]
pub unsafe extern "C" fn lf_f1_binary(pred: *const u32, gold: *const u32, n: usize, positive: u32, out: *mut f64) -> LfStatus {
    guard(|| {
        let (p, g) = (tri!(slice(pred, n)), tri!(slice(gold, n)));
        if out.is_null() {
            return fail(LfStatus::NullPointer, "null out");
        }
        match f1_binary(&labels(p), &labels(g), positive as usize) {
            Ok(v) => {
                *out = v;
                LfStatus::Ok
            }
            Err(e) => fail(LfStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Linear warm-up then linear decay to zero.
#[no_mangle]
pub extern "C" fn lf_lr_at(step: u64, warmup_steps: u64, total_steps: u64, peak_lr: f64) -> f64 {
    lr_at(step, warmup_steps, total_steps, peak_lr)
}

/// Relative-position bucket of query `i` and key `j` with window `k`.
#[no_mangle]
pub extern "C" fn lf_relative_bucket(i: usize, j: usize, k: usize) -> usize {
    relative_bucket(i, j, k)
}

unsafe fn put_handle<T>(out: *mut *mut T, v: T) -> LfStatus {
    *out = Box::into_raw(Box::new(v));
    LfStatus::Ok
}

#[no_mangle]
pub unsafe extern "C" fn lf_tokenizer_load(path: *const c_char, out: *mut *mut LfTokenizer) -> LfStatus {
    guard(|| {
        let path = tri!(string(path));
        if out.is_null() {
            return fail(LfStatus::NullPointer, "null out");
        }
        match TokenizerModel::load(Path::new(path)) {
            Ok(inner) => put_handle(out, LfTokenizer { inner }),
            Err(lusoforge::tokenizer::TokenizerError::Io(e)) => fail(LfStatus::Io, e.to_string()),
            Err(e) => fail(LfStatus::Format, e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn lf_tokenizer_from_json(json: *const c_char, out: *mut *mut LfTokenizer) -> LfStatus {
    guard(|| {
        let json = tri!(string(json));
        if out.is_null() {
            return fail(LfStatus::NullPointer, "null out");
        }
        match TokenizerModel::from_json(json) {
            Ok(inner) => put_handle(out, LfTokenizer { inner }),
            Err(e) => fail(LfStatus::Format, e.to_string()),
        }
    })
}

/// Accepts null.
#[no_mangle]
pub unsafe extern "C" fn lf_tokenizer_free(tok: *mut LfTokenizer) {
    if !tok.is_null() {
        drop(Box::from_raw(tok));
    }
}

/// 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn lf_tokenizer_vocab_size(tok: *const LfTokenizer) -> usize {
    tok.as_ref().map_or(0, |t| t.inner.vocab_size())
}

/// Token ids of `text`, truncated to `max_len`, optionally wrapped in
/// `[CLS]` … `[SEP]`.
#[no_mangle]
pub unsafe extern "C" fn lf_tokenizer_encode(
    tok: *const LfTokenizer,
    text: *const c_char,
    max_len: usize,
    add_specials: bool,
    ids: *mut u32,
    cap: usize,
    len: *mut usize,
) -> LfStatus {
    guard(|| {
        let Some(tok) = tok.as_ref() else {
            return fail(LfStatus::NullPointer, "null tokenizer");
        };
        let text = tri!(string(text));
        match tok.inner.encode(text, max_len, add_specials) {
            Ok(seq) => emit(&seq.ids, ids, cap, len),
            Err(e) => fail(LfStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Text of `ids` (special tokens dropped) as a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lf_tokenizer_decode(
    tok: *const LfTokenizer,
    ids: *const u32,
    n: usize,
    buf: *mut c_char,
    cap: usize,
    len: *mut usize,
) -> LfStatus {
    guard(|| {
        let Some(tok) = tok.as_ref() else {
            return fail(LfStatus::NullPointer, "null tokenizer");
        };
        let ids = tri!(slice(ids, n));
        match tok.inner.decode(ids) {
            Ok(s) => emit_str(&s, buf, cap, len),
            Err(e) => fail(LfStatus::InvalidArgument, e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn lf_checkpoint_load(path: *const c_char, out: *mut *mut LfCheckpoint) -> LfStatus {
    guard(|| {
        let path = tri!(string(path));
        if out.is_null() {
            return fail(LfStatus::NullPointer, "null out");
        }
        match Checkpoint::load(Path::new(path)) {
            Ok(inner) => {
                let mut names: Vec<String> = inner.params.iter().map(|(_, n, _)| n.to_string()).collect();
                names.sort();
                put_handle(out, LfCheckpoint { inner, names })
            }
            Err(lusoforge::encoder::EncoderError::Io(e)) => fail(LfStatus::Io, e.to_string()),
            Err(e) => fail(LfStatus::Format, e.to_string()),
        }
    })
}

/// Accepts null.
#[no_mangle]
pub unsafe extern "C" fn lf_checkpoint_free(ckpt: *mut LfCheckpoint) {
    if !ckpt.is_null() {
        drop(Box::from_raw(ckpt));
    }
}

/// Number of tensors; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn lf_checkpoint_tensor_count(ckpt: *const LfCheckpoint) -> usize {
    ckpt.as_ref().map_or(0, |c| c.names.len())
}

/// The encoder configuration as JSON.
#[no_mangle]
pub unsafe extern "C" fn lf_checkpoint_config_json(ckpt: *const LfCheckpoint, buf: *mut c_char, cap: usize, len: *mut usize) -> LfStatus {
    guard(|| {
        let Some(c) = ckpt.as_ref() else {
            return fail(LfStatus::NullPointer, "null checkpoint");
        };
        match serde_json::to_string(&c.inner.config) {
            Ok(s) => emit_str(&s, buf, cap, len),
            Err(e) => fail(LfStatus::Format, e.to_string()),
        }
    })
}

/// Name of the `index`-th tensor in name order.
#[no_mangle]
pub unsafe extern "C" fn lf_checkpoint_tensor_name(
    ckpt: *const LfCheckpoint,
    index: usize,
    buf: *mut c_char,
    cap: usize,
    len: *mut usize,
) -> LfStatus {
    guard(|| {
        let Some(c) = ckpt.as_ref() else {
            return fail(LfStatus::NullPointer, "null checkpoint");
        };
        match c.names.get(index) {
            Some(n) => emit_str(n, buf, cap, len),
            None => fail(LfStatus::NotFound, format!("tensor index {index} out of {}", c.names.len())),
        }
    })
}

unsafe fn tensor<'a>(ckpt: *const LfCheckpoint, name: *const c_char) -> Result<&'a lusoforge::autodiff::Tensor, LfStatus> {
    let Some(c) = ckpt.as_ref() else {
        return Err(fail(LfStatus::NullPointer, "null checkpoint"));
    };
    let name = string(name)?;
    c.inner.params.by_name(name).ok_or_else(|| fail(LfStatus::NotFound, format!("no tensor `{name}`")))
}

#[no_mangle]
pub unsafe extern "C" fn lf_checkpoint_tensor_shape(
    ckpt: *const LfCheckpoint,
    name: *const c_char,
    dims: *mut usize,
    cap: usize,
    ndim: *mut usize,
) -> LfStatus {
    guard(|| {
        let t = tri!(tensor(ckpt, name));
        emit(t.shape(), dims, cap, ndim)
    })
}

/// Row-major `f32` values of a tensor.
#[no_mangle]
pub unsafe extern "C" fn lf_checkpoint_tensor_data(
    ckpt: *const LfCheckpoint,
    name: *const c_char,
    data: *mut f32,
    cap: usize,
    len: *mut usize,
) -> LfStatus {
    guard(|| {
        let t = tri!(tensor(ckpt, name));
        emit(t.data(), data, cap, len)
    })
}
