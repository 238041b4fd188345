//! C ABI over the selftune toolkit.
//!
//! Every fallible call returns an [`StStatus`]. On failure the message is kept
//! per thread and copied out with [`st_last_error`]. Matrices are row-major
//! `f64` buffers. Handles are opaque and released with their `_free` call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use selftune::config::ExperimentConfig;
use selftune::error::Error;
use selftune::keystore::KeyStore;
use selftune::losses::{
    cross_entropy_with_logits, info_nce_with_grad, pgc_with_grad, ContrastInstance,
};
use selftune::trainer::train;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Config = 4,
    Format = 5,
    Io = 6,
    Panic = 7,
}

/// Opaque class-partitioned key store.
pub struct StKeyStore(KeyStore);

struct Failure(StStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidArgument(_) => StStatus::InvalidArgument,
            Error::Shape(_) => StStatus::Shape,
            Error::Config(_) => StStatus::Config,
            Error::Format(_) | Error::Csv(_) | Error::Json(_) => StStatus::Format,
            Error::Io(_) => StStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

type Outcome = Result<(), Failure>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn guard(f: impl FnOnce() -> Outcome) -> StStatus {
    let failure = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            return StStatus::Ok;
        }
        Ok(Err(f)) => f,
        Err(payload) => {
            let what = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            Failure(StStatus::Panic, format!("panic: {what}"))
        }
    };
    set_last_error(failure.1);
    failure.0
}

fn null(what: &str) -> Failure {
    Failure(StStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `ptr` must be null only when `len` is 0, else point to `len` readable
/// values.
unsafe fn input<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    match (ptr.is_null(), len) {
        (_, 0) => Ok(&[]),
        (true, _) => Err(null(what)),
        (false, _) => Ok(std::slice::from_raw_parts(ptr, len)),
    }
}

/// # Safety
/// A non-null `ptr` must point to `len` writable values.
unsafe fn output<'a>(ptr: *mut f64, len: usize) -> Option<&'a mut [f64]> {
    (!ptr.is_null()).then(|| std::slice::from_raw_parts_mut(ptr, len))
}

/// # Safety
/// A non-null `ptr` must be a NUL-terminated string.
unsafe fn string<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Failure(StStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn rows(flat: &[f64], dim: usize) -> Vec<&[f64]> {
    flat.chunks_exact(dim).collect()
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len - 1` bytes). Returns the full message length, 0 when the
/// last call succeeded.
///
/// # Safety
/// A non-null `buf` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn st_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else {
            return 0;
        };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn st_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is a no-op.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn st_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates a store of `num_categories` FIFO queues holding
/// `keys_per_category` keys of length `key_dim`, seeded with random unit keys.
///
/// # Safety
/// `out` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn st_keystore_new(
    num_categories: usize,
    keys_per_category: usize,
    key_dim: usize,
    seed: u64,
    normalize_keys: bool,
    out: *mut *mut StKeyStore,
) -> StStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let store = KeyStore::new(num_categories, keys_per_category, key_dim, seed)?
            .with_normalize_keys(normalize_keys);
        *out = Box::into_raw(Box::new(StKeyStore(store)));
        Ok(())
    })
}

/// Reads a store written by [`st_keystore_save`] or the `train` command.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn st_keystore_load(
    path: *const c_char,
    out: *mut *mut StKeyStore,
) -> StStatus {
    guard(|| {
        let path = string(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = Box::into_raw(Box::new(StKeyStore(KeyStore::load(path)?)));
        Ok(())
    })
}

/// # Safety
/// `store` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn st_keystore_save(
    store: *const StKeyStore,
    path: *const c_char,
) -> StStatus {
    guard(|| {
        let store = store.as_ref().ok_or_else(|| null("store"))?;
        store.0.save(string(path, "path")?)?;
        Ok(())
    })
}

/// Releases a store. Null is a no-op.
///
/// # Safety
/// `store` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn st_keystore_free(store: *mut StKeyStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Writes the category count, keys per category and key length.
///
/// # Safety
/// `store` must be a live handle; each non-null output must be writable.
#[no_mangle]
pub unsafe extern "C" fn st_keystore_shape(
    store: *const StKeyStore,
    num_categories: *mut usize,
    keys_per_category: *mut usize,
    key_dim: *mut usize,
) -> StStatus {
    guard(|| {
        let s = &store.as_ref().ok_or_else(|| null("store"))?.0;
        for (p, v) in [
            (num_categories, s.num_categories()),
            (keys_per_category, s.keys_per_category()),
            (key_dim, s.key_dim()),
        ] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Overwrites the oldest key of `category` with `key`.
///
/// # Safety
/// `store` must be a live handle and `key` point to `key_len` values.
#[no_mangle]
pub unsafe extern "C" fn st_keystore_enqueue(
    store: *mut StKeyStore,
    category: usize,
    key: *const f64,
    key_len: usize,
) -> StStatus {
    guard(|| {
        let store = store.as_mut().ok_or_else(|| null("store"))?;
        store.0.enqueue(category, input(key, key_len, "key")?)?;
        Ok(())
    })
}

fn copy_keys(keys: Vec<Vec<f64>>, out: Option<&mut [f64]>) -> Outcome {
    let out = out.ok_or_else(|| null("out"))?;
    let need: usize = keys.iter().map(Vec::len).sum();
    if out.len() != need {
        return Err(Failure(
            StStatus::Shape,
            format!("out holds {} values, need {need}", out.len()),
        ));
    }
    for (dst, k) in out
        .chunks_exact_mut(keys.first().map_or(1, Vec::len))
        .zip(&keys)
    {
        dst.copy_from_slice(k);
    }
    Ok(())
}

/// Copies the positive group of `category`, oldest first, into `out` as a
/// `keys_per_category x key_dim` matrix.
///
/// # Safety
/// `store` must be a live handle and `out` point to `out_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn st_keystore_positives(
    store: *const StKeyStore,
    category: usize,
    out: *mut f64,
    out_len: usize,
) -> StStatus {
    guard(|| {
        let store = store.as_ref().ok_or_else(|| null("store"))?;
        copy_keys(store.0.positives(category)?, output(out, out_len))
    })
}

/// Copies the keys of every other category into `out` as a
/// `keys_per_category * (num_categories - 1) x key_dim` matrix.
///
/// # Safety
/// `store` must be a live handle and `out` point to `out_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn st_keystore_negatives(
    store: *const StKeyStore,
    category: usize,
    out: *mut f64,
    out_len: usize,
) -> StStatus {
    guard(|| {
        let store = store.as_ref().ok_or_else(|| null("store"))?;
        copy_keys(store.0.negatives(category)?, output(out, out_len))
    })
}

fn finish(value: f64, loss: *mut f64, grad: Option<&mut [f64]>, g: &[f64]) -> Outcome {
    // SAFETY: callers pass either null or a writable pointer
    let loss = unsafe { loss.as_mut() }.ok_or_else(|| null("loss"))?;
    *loss = value;
    if let Some(out) = grad {
        out.copy_from_slice(g);
    }
    Ok(())
}

/// Group contrast of `query` against `num_positives` positive and
/// `num_negatives` negative keys of length `dim`. Writes the loss and, when
/// `grad_query` is non-null, its `dim` query gradient.
///
/// # Safety
/// Buffers must hold the stated number of values; `loss` must be writable.
#[no_mangle]
pub unsafe extern "C" fn st_pgc(
    query: *const f64,
    dim: usize,
    positives: *const f64,
    num_positives: usize,
    negatives: *const f64,
    num_negatives: usize,
    temperature: f64,
    loss: *mut f64,
    grad_query: *mut f64,
) -> StStatus {
    guard(|| {
        let q = input(query, dim, "query")?;
        let pos = input(positives, num_positives * dim, "positives")?;
        let neg = input(negatives, num_negatives * dim, "negatives")?;
        if dim == 0 {
            return Err(Failure(StStatus::InvalidArgument, "dim must be > 0".into()));
        }
        let inst = ContrastInstance::new(q, rows(pos, dim), rows(neg, dim), temperature)?;
        let g = pgc_with_grad(&inst)?;
        finish(g.loss, loss, output(grad_query, dim), &g.query)
    })
}

/// Contrast of `query` against one positive `key` and `num_negatives`
/// negatives, all of length `dim`.
///
/// # Safety
/// Buffers must hold the stated number of values; `loss` must be writable.
#[no_mangle]
pub unsafe extern "C" fn st_info_nce(
    query: *const f64,
    key: *const f64,
    dim: usize,
    negatives: *const f64,
    num_negatives: usize,
    temperature: f64,
    loss: *mut f64,
    grad_query: *mut f64,
) -> StStatus {
    guard(|| {
        let q = input(query, dim, "query")?;
        let k = input(key, dim, "key")?;
        let neg = input(negatives, num_negatives * dim, "negatives")?;
        if dim == 0 {
            return Err(Failure(StStatus::InvalidArgument, "dim must be > 0".into()));
        }
        let g = info_nce_with_grad(q, k, &rows(neg, dim), temperature)?;
        finish(g.loss, loss, output(grad_query, dim), &g.query)
    })
}

/// Cross-entropy of softmax(`logits`) at `label`, with the optional logit
/// gradient.
///
/// # Safety
/// `logits` must hold `num_categories` values; `loss` must be writable.
#[no_mangle]
pub unsafe extern "C" fn st_cross_entropy(
    logits: *const f64,
    num_categories: usize,
    label: usize,
    loss: *mut f64,
    grad_logits: *mut f64,
) -> StStatus {
    guard(|| {
        let z = input(logits, num_categories, "logits")?;
        let (value, g) = cross_entropy_with_logits(z, label)?;
        finish(value, loss, output(grad_logits, num_categories), &g)
    })
}

/// Trains one run from an experiment config in JSON, using `train.seed` for
/// data and model. Writes the per-epoch report as CSV text (release with
/// [`st_string_free`]) and, when non-null, the final test accuracy.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `report_csv` writable.
#[no_mangle]
pub unsafe extern "C" fn st_train(
    config_json: *const c_char,
    report_csv: *mut *mut c_char,
    final_accuracy: *mut f64,
) -> StStatus {
    guard(|| {
        let config = ExperimentConfig::from_json(string(config_json, "config_json")?)?;
        if report_csv.is_null() {
            return Err(null("report_csv"));
        }
        let split = config.dataset.build(config.train.seed)?;
        let pretrained = config.pretrained(&split)?;
        let report = train(&config.train, &split, pretrained.as_ref())?;
        if let Some(acc) = final_accuracy.as_mut() {
            *acc = report.final_test_accuracy();
        }
        let csv = CString::new(report.to_csv()).expect("CSV has no NULs");
        *report_csv = csv.into_raw();
        Ok(())
    })
}
