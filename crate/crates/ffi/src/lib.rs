//! C ABI for the usmae library: opaque handles, integer error codes, no
//! exceptions across the boundary. See the generated include/usmae.h.

use std::ffi::{c_char, CStr};
use std::path::Path;
use std::ptr;
use usmae::checkpoint;
use usmae::labeling::tof_label;
use usmae::metrics::argmax;
use usmae::model::ModelConfig;
use usmae::signal::{dequantize_8bit, generate_dataset, shannon_entropy, DatasetSpec, SignalRecord};
use usmae::training::eval_logits;
use usmae::us1d;

/// Success.
pub const USMAE_OK: i32 = 0;
/// A required pointer argument was null.
pub const USMAE_ERR_NULL: i32 = -1;
/// Invalid argument (bad UTF-8, out-of-range value, bad spec).
pub const USMAE_ERR_INVALID: i32 = -2;
/// I/O or file-format failure.
pub const USMAE_ERR_IO: i32 = -3;
/// Numeric failure (non-finite values, labeling out of range).
pub const USMAE_ERR_NUMERIC: i32 = -4;
/// Shape/compatibility mismatch between dataset and model.
pub const USMAE_ERR_COMPAT: i32 = -5;
/// Index out of bounds.
pub const USMAE_ERR_RANGE: i32 = -6;

pub struct UsmaeDataset {
    records: Vec<SignalRecord>,
    sample_rate_hz: u32,
    labeled: bool,
}

pub struct UsmaeModel {
    config: ModelConfig,
    params: usmae::params::ParamSet,
}

unsafe fn path_arg<'a>(p: *const c_char) -> Option<&'a str> {
    if p.is_null() {
        return None;
    }
    unsafe { CStr::from_ptr(p) }.to_str().ok()
}

/// Generate a synthetic dataset with the default Table-1-style ranges.
/// On success writes a handle to `out` which must be released with
/// `usmae_dataset_free`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn usmae_dataset_generate(
    count: u32,
    seed: u64,
    out: *mut *mut UsmaeDataset,
) -> i32 {
    if out.is_null() {
        return USMAE_ERR_NULL;
    }
    let spec = DatasetSpec { count: count as usize, seed, ..DatasetSpec::default() };
    match generate_dataset(&spec) {
        Ok(records) => {
            let ds = UsmaeDataset {
                records,
                sample_rate_hz: spec.sample_rate_hz as u32,
                labeled: true,
            };
            unsafe { *out = Box::into_raw(Box::new(ds)) };
            USMAE_OK
        }
        Err(_) => USMAE_ERR_INVALID,
    }
}

/// Open a US1D file.
///
/// # Safety
/// `path` must be a valid NUL-terminated string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn usmae_dataset_open(
    path: *const c_char,
    out: *mut *mut UsmaeDataset,
) -> i32 {
    if out.is_null() {
        return USMAE_ERR_NULL;
    }
    let Some(path) = (unsafe { path_arg(path) }) else {
        return USMAE_ERR_INVALID;
    };
    match us1d::read_file(Path::new(path)) {
        Ok((header, records)) => {
            let ds = UsmaeDataset {
                records,
                sample_rate_hz: header.sample_rate_hz,
                labeled: header.labeled,
            };
            unsafe { *out = Box::into_raw(Box::new(ds)) };
            USMAE_OK
        }
        Err(_) => USMAE_ERR_IO,
    }
}

/// # Safety
/// `ds` must be a handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn usmae_dataset_free(ds: *mut UsmaeDataset) {
    if !ds.is_null() {
        drop(unsafe { Box::from_raw(ds) });
    }
}

/// Number of records, or a negative error code.
///
/// # Safety
/// `ds` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn usmae_dataset_len(ds: *const UsmaeDataset) -> i64 {
    if ds.is_null() {
        return USMAE_ERR_NULL as i64;
    }
    unsafe { &*ds }.records.len() as i64
}

/// Copy the 8-bit samples of one record into `buf` (capacity `buf_len`).
/// Returns the signal length, or a negative error code.
///
/// # Safety
/// `ds` must be a valid handle and `buf` must point to `buf_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn usmae_dataset_signal(
    ds: *const UsmaeDataset,
    index: u64,
    buf: *mut u8,
    buf_len: u64,
) -> i64 {
    if ds.is_null() || buf.is_null() {
        return USMAE_ERR_NULL as i64;
    }
    let ds = unsafe { &*ds };
    let Some(record) = ds.records.get(index as usize) else {
        return USMAE_ERR_RANGE as i64;
    };
    if (buf_len as usize) < record.samples.len() {
        return USMAE_ERR_RANGE as i64;
    }
    unsafe { ptr::copy_nonoverlapping(record.samples.as_ptr(), buf, record.samples.len()) };
    record.samples.len() as i64
}

/// ToF class label of one record, or a negative error code
/// (`USMAE_ERR_INVALID` when the dataset carries no labels).
///
/// # Safety
/// `ds` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn usmae_dataset_label(ds: *const UsmaeDataset, index: u64) -> i32 {
    if ds.is_null() {
        return USMAE_ERR_NULL;
    }
    let ds = unsafe { &*ds };
    if !ds.labeled {
        return USMAE_ERR_INVALID;
    }
    match ds.records.get(index as usize) {
        Some(r) => r.label as i32,
        None => USMAE_ERR_RANGE,
    }
}

/// Shannon entropy in bits of the pooled amplitude histogram.
///
/// # Safety
/// `ds` must be a valid handle, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn usmae_dataset_entropy(ds: *const UsmaeDataset, out: *mut f64) -> i32 {
    if ds.is_null() || out.is_null() {
        return USMAE_ERR_NULL;
    }
    let ds = unsafe { &*ds };
    match shannon_entropy(ds.records.iter().map(|r| r.samples.as_slice())) {
        Ok(bits) => {
            unsafe { *out = bits };
            USMAE_OK
        }
        Err(_) => USMAE_ERR_NUMERIC,
    }
}

/// Cross-correlation ToF label of `signal` against the reference
/// `excitation` (both `len` f64 samples). Returns the class, or a negative
/// error code.
///
/// # Safety
/// Both pointers must reference `len` f64 values.
#[no_mangle]
pub unsafe extern "C" fn usmae_tof_label(
    signal: *const f64,
    excitation: *const f64,
    len: u64,
) -> i32 {
    if signal.is_null() || excitation.is_null() {
        return USMAE_ERR_NULL;
    }
    let s = unsafe { std::slice::from_raw_parts(signal, len as usize) };
    let e = unsafe { std::slice::from_raw_parts(excitation, len as usize) };
    match tof_label(s, e) {
        Ok(label) => label as i32,
        Err(_) => USMAE_ERR_NUMERIC,
    }
}

/// Load a UMAE checkpoint. The handle must be released with
/// `usmae_model_free`.
///
/// # Safety
/// `path` must be a valid NUL-terminated string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn usmae_model_load(path: *const c_char, out: *mut *mut UsmaeModel) -> i32 {
    if out.is_null() {
        return USMAE_ERR_NULL;
    }
    let Some(path) = (unsafe { path_arg(path) }) else {
        return USMAE_ERR_INVALID;
    };
    match checkpoint::load(Path::new(path)) {
        Ok(ckpt) => {
            let model = UsmaeModel { config: ckpt.meta.model, params: ckpt.params };
            unsafe { *out = Box::into_raw(Box::new(model)) };
            USMAE_OK
        }
        Err(_) => USMAE_ERR_IO,
    }
}

/// # Safety
/// `model` must be a handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn usmae_model_free(model: *mut UsmaeModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Predicted ToF class for one 8-bit signal of `len` samples, or a negative
/// error code (`USMAE_ERR_COMPAT` when `len` mismatches the model).
///
/// # Safety
/// `model` must be a valid handle and `signal` must point to `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn usmae_model_classify(
    model: *const UsmaeModel,
    signal: *const u8,
    len: u64,
) -> i32 {
    if model.is_null() || signal.is_null() {
        return USMAE_ERR_NULL;
    }
    let model = unsafe { &*model };
    let samples = unsafe { std::slice::from_raw_parts(signal, len as usize) };
    if samples.len() != model.config.signal_length {
        return USMAE_ERR_COMPAT;
    }
    let record = SignalRecord { samples: samples.to_vec(), label: 0, params: None };
    match eval_logits(&model.params, &model.config, std::slice::from_ref(&record)) {
        Ok(logits) => argmax(&logits[0]) as i32,
        Err(_) => USMAE_ERR_NUMERIC,
    }
}

/// Mean dequantized amplitude helper used by binding smoke tests.
///
/// # Safety
/// `signal` must point to `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn usmae_dequantize_mean(signal: *const u8, len: u64) -> f64 {
    if signal.is_null() || len == 0 {
        return f64::NAN;
    }
    let s = unsafe { std::slice::from_raw_parts(signal, len as usize) };
    let d = dequantize_8bit(s);
    d.iter().sum::<f64>() / d.len() as f64
}
