//! C ABI for the rewritenet library.
//!
//! Models are opaque handles created by `rn_model_load` and released by
//! `rn_model_free`. Every fallible call returns an `RnStatus`; on failure
//! the message is retrievable with `rn_last_error_message` until the next
//! failing call on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;

use rewritenet::discrete::Fst;
use rewritenet::error::Error;
use rewritenet::flops::{flops_estimate, FlopParams, ModelKind};
use rewritenet::fstsim;
use rewritenet::layer::Model;

/// Result code for every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RnStatus {
    /// Call succeeded.
    RnOk = 0,
    /// A required pointer argument was null.
    RnNullPointer = 1,
    /// A string argument was not valid UTF-8.
    RnInvalidUtf8 = 2,
    /// An argument value was rejected.
    RnInvalidArgument = 3,
    /// A file could not be read or written.
    RnIo = 4,
    /// The output buffer is too small; see `rn_model_max_output_len`.
    RnBufferTooSmall = 5,
    /// Any other runtime failure.
    RnRuntime = 6,
}

/// Opaque model handle.
pub struct RnModel {
    inner: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: RnStatus, msg: &str) -> RnStatus {
    let c = CString::new(msg.replace('\0', "?")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
    status
}

fn fail_error(err: &Error) -> RnStatus {
    let status = match err {
        Error::InvalidArgument(_)
        | Error::Parse { .. }
        | Error::UnknownToken(_)
        | Error::VocabMismatch(_) => RnStatus::RnInvalidArgument,
        Error::Io { .. } => RnStatus::RnIo,
        _ => RnStatus::RnRuntime,
    };
    fail(status, &err.to_string())
}

/// # Safety
/// `ptr` must be null or a valid C string.
unsafe fn utf8_arg<'a>(ptr: *const c_char) -> Result<&'a str, RnStatus> {
    if ptr.is_null() {
        return Err(fail(RnStatus::RnNullPointer, "null string argument"));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(RnStatus::RnInvalidUtf8, "string argument is not UTF-8"))
}

/// Returns the message for the most recent failure on this thread.
///
/// The pointer stays valid until the next failing call on the same thread.
/// Never returns null.
#[no_mangle]
pub extern "C" fn rn_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a saved model from a checkpoint directory.
///
/// On success writes a handle into `out`; release it with `rn_model_free`.
///
/// # Safety
/// `dir` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rn_model_load(dir: *const c_char, out: *mut *mut RnModel) -> RnStatus {
    if out.is_null() {
        return fail(RnStatus::RnNullPointer, "null output pointer");
    }
    let dir = match utf8_arg(dir) {
        Ok(s) => s,
        Err(status) => return status,
    };
    match Model::load(Path::new(dir)) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(RnModel { inner }));
            RnStatus::RnOk
        }
        Err(e) => fail_error(&e),
    }
}

/// Releases a model handle. Passing null is a no-op.
///
/// # Safety
/// `model` must be null or a handle returned by `rn_model_load` that has
/// not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn rn_model_free(model: *mut RnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Largest number of token ids `rn_model_predict` can write.
///
/// Returns 0 if `model` is null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rn_model_max_output_len(model: *const RnModel) -> usize {
    if model.is_null() {
        return 0;
    }
    (*model).inner.config.max_output_len
}

/// Number of tokens in the model vocabulary; ids below this are valid inputs.
///
/// Returns 0 if `model` is null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rn_model_vocab_size(model: *const RnModel) -> usize {
    if model.is_null() {
        return 0;
    }
    (*model).inner.config.vocab.len()
}

/// Runs greedy decoding on one token-id sequence.
///
/// Writes at most `out_cap` ids into `out` and the count into `out_len`.
/// Padding and end markers are already stripped from the result. Fails
/// with `RnBufferTooSmall` when `out_cap` is less than the prediction
/// length; `rn_model_max_output_len` is always a sufficient capacity.
///
/// # Safety
/// `model` must be a live handle, `input` must point to `input_len` ids,
/// `out` must point to `out_cap` writable ids, `out_len` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rn_model_predict(
    model: *const RnModel,
    input: *const u32,
    input_len: usize,
    out: *mut u32,
    out_cap: usize,
    out_len: *mut usize,
) -> RnStatus {
    if model.is_null() || input.is_null() || out.is_null() || out_len.is_null() {
        return fail(RnStatus::RnNullPointer, "null argument to rn_model_predict");
    }
    let ids = std::slice::from_raw_parts(input, input_len);
    let pred = match (*model).inner.predict(ids) {
        Ok(p) => p,
        Err(e) => return fail_error(&e),
    };
    if pred.len() > out_cap {
        return fail(
            RnStatus::RnBufferTooSmall,
            &format!("prediction has {} ids, buffer holds {}", pred.len(), out_cap),
        );
    }
    std::ptr::copy_nonoverlapping(pred.as_ptr(), out, pred.len());
    *out_len = pred.len();
    RnStatus::RnOk
}

/// Analytic forward-pass cost of one model family, in GFLOPs.
///
/// `kind` is "rewritenet", "transformer", or "lstm". Dimensions not listed
/// here keep their library defaults.
///
/// # Safety
/// `kind` must be a valid C string and `out_gflops` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rn_flops_estimate(
    kind: *const c_char,
    batch: usize,
    n: usize,
    d: usize,
    rules: usize,
    lp: usize,
    lq: usize,
    layers: usize,
    out_gflops: *mut f64,
) -> RnStatus {
    if out_gflops.is_null() {
        return fail(RnStatus::RnNullPointer, "null output pointer");
    }
    let kind = match utf8_arg(kind) {
        Ok(s) => s,
        Err(status) => return status,
    };
    let kind = match ModelKind::parse(kind) {
        Ok(k) => k,
        Err(e) => return fail_error(&e),
    };
    let params = FlopParams {
        batch,
        n,
        d,
        rules,
        lp,
        lq,
        layers,
        ..FlopParams::default()
    };
    match flops_estimate(kind, &params) {
        Ok(report) => {
            *out_gflops = report.gflops();
            RnStatus::RnOk
        }
        Err(e) => fail_error(&e),
    }
}

/// Exhaustively checks a transducer file against its compiled rule banks.
///
/// Writes true into `out_pass` when every input of length at most
/// `max_len` transduces identically.
///
/// # Safety
/// `path` must be a valid C string and `out_pass` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rn_fst_check(
    path: *const c_char,
    max_len: usize,
    out_pass: *mut bool,
) -> RnStatus {
    if out_pass.is_null() {
        return fail(RnStatus::RnNullPointer, "null output pointer");
    }
    let path = match utf8_arg(path) {
        Ok(s) => s,
        Err(status) => return status,
    };
    let fst = match Fst::load(Path::new(path)) {
        Ok(f) => f,
        Err(e) => return fail_error(&e),
    };
    match fstsim::verify_exhaustive(&fst, max_len) {
        Ok(report) => {
            *out_pass = report.all_match();
            RnStatus::RnOk
        }
        Err(e) => fail_error(&e),
    }
}
