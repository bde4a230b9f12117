//! C ABI for the rerouting attack workbench.
//!
//! The surface is handle-based: load a configuration, run the pipeline, read
//! metrics off the result handle. Every call returns an `rr_status` code;
//! the last error message is kept per thread and readable through
//! [`rr_last_error`]. Strings returned as `char*` are owned by the caller
//! and must be released with [`rr_string_free`].
//!
//! The matching header lives at `include/reroute.h`.

#![allow(non_camel_case_types)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;

use reroute_core::config::{validate_config, RunConfig};
use reroute_core::error::Error;
use reroute_core::pipeline::{
    resolve_run_dir, run_pipeline, PipelineOptions, RunSummary, SUMMARY_FILE,
};

/// Status codes mirrored in `include/reroute.h`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum rr_status {
    RR_STATUS_OK = 0,
    RR_STATUS_ERROR = 1,
    RR_STATUS_INVALID_CONFIG = 2,
    RR_STATUS_BUDGET_EXHAUSTED = 3,
    RR_STATUS_NUMERIC = 4,
    RR_STATUS_NULL_ARGUMENT = 5,
    RR_STATUS_INVALID_UTF8 = 6,
    RR_STATUS_UNKNOWN_METRIC = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> rr_status {
    match err.exit_code() {
        2 => rr_status::RR_STATUS_INVALID_CONFIG,
        3 => rr_status::RR_STATUS_BUDGET_EXHAUSTED,
        4 => rr_status::RR_STATUS_NUMERIC,
        _ => rr_status::RR_STATUS_ERROR,
    }
}

/// Opaque configuration handle.
pub struct rr_config {
    inner: RunConfig,
}

/// Opaque result handle for a finished pipeline run.
pub struct rr_run_result {
    summary: RunSummary,
    run_dir: PathBuf,
    summary_json: String,
}

unsafe fn utf8_arg<'a>(ptr: *const c_char) -> Result<&'a str, rr_status> {
    if ptr.is_null() {
        set_error("null pointer argument");
        return Err(rr_status::RR_STATUS_NULL_ARGUMENT);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("argument is not valid UTF-8");
        rr_status::RR_STATUS_INVALID_UTF8
    })
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rr_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Loads and fully validates a configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rr_config_load(path: *const c_char, out: *mut *mut rr_config) -> rr_status {
    if out.is_null() {
        set_error("null output pointer");
        return rr_status::RR_STATUS_NULL_ARGUMENT;
    }
    let path = match utf8_arg(path) {
        Ok(p) => p,
        Err(status) => return status,
    };
    match validate_config(std::path::Path::new(path)) {
        Ok(cfg) => {
            *out = Box::into_raw(Box::new(rr_config { inner: cfg }));
            rr_status::RR_STATUS_OK
        }
        Err(e) => {
            set_error(&e.to_string());
            *out = std::ptr::null_mut();
            status_of(&e)
        }
    }
}

/// Releases a configuration handle. Null is a no-op.
///
/// # Safety
/// `config` must have come from [`rr_config_load`] and not been freed.
#[no_mangle]
pub unsafe extern "C" fn rr_config_free(config: *mut rr_config) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Overrides the run directory.
///
/// # Safety
/// `config` must be a live handle; `out_dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rr_config_set_out_dir(
    config: *mut rr_config,
    out_dir: *const c_char,
) -> rr_status {
    if config.is_null() {
        set_error("null config handle");
        return rr_status::RR_STATUS_NULL_ARGUMENT;
    }
    let dir = match utf8_arg(out_dir) {
        Ok(d) => d,
        Err(status) => return status,
    };
    (*config).inner.out_dir = PathBuf::from(dir);
    rr_status::RR_STATUS_OK
}

/// Overrides the global seed.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rr_config_set_seed(config: *mut rr_config, seed: u64) -> rr_status {
    if config.is_null() {
        set_error("null config handle");
        return rr_status::RR_STATUS_NULL_ARGUMENT;
    }
    (*config).inner.seed = seed;
    rr_status::RR_STATUS_OK
}

/// Runs the full pipeline for a configuration and returns a result handle.
///
/// # Safety
/// `config` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rr_run_pipeline(
    config: *const rr_config,
    out: *mut *mut rr_run_result,
) -> rr_status {
    if config.is_null() || out.is_null() {
        set_error("null pointer argument");
        return rr_status::RR_STATUS_NULL_ARGUMENT;
    }
    *out = std::ptr::null_mut();
    let cfg = &(*config).inner;
    match run_pipeline(cfg, &PipelineOptions::default()) {
        Ok(_manifest) => {
            let run_dir = resolve_run_dir(&cfg.out_dir);
            let summary_path = run_dir.join(SUMMARY_FILE);
            let text = match std::fs::read_to_string(&summary_path) {
                Ok(t) => t,
                Err(e) => {
                    set_error(&format!("cannot read {}: {e}", summary_path.display()));
                    return rr_status::RR_STATUS_ERROR;
                }
            };
            let summary: RunSummary = match serde_json::from_str(&text) {
                Ok(s) => s,
                Err(e) => {
                    set_error(&format!("bad summary json: {e}"));
                    return rr_status::RR_STATUS_ERROR;
                }
            };
            *out = Box::into_raw(Box::new(rr_run_result {
                summary,
                run_dir,
                summary_json: text,
            }));
            rr_status::RR_STATUS_OK
        }
        Err(e) => {
            set_error(&e.to_string());
            status_of(&e)
        }
    }
}

/// Releases a result handle. Null is a no-op.
///
/// # Safety
/// `result` must have come from [`rr_run_pipeline`] and not been freed.
#[no_mangle]
pub unsafe extern "C" fn rr_run_result_free(result: *mut rr_run_result) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Reads one scalar metric off the result. Known names: `eval_in.asr`,
/// `eval_in.clean_asr`, `eval_in.delta`, `eval_ood.asr`,
/// `eval_ood.clean_asr`, `eval_ood.delta`, `cost_ratio`.
///
/// # Safety
/// `result` must be a live handle; `name` NUL-terminated; `value` valid.
#[no_mangle]
pub unsafe extern "C" fn rr_run_result_metric(
    result: *const rr_run_result,
    name: *const c_char,
    value: *mut f64,
) -> rr_status {
    if result.is_null() || value.is_null() {
        set_error("null pointer argument");
        return rr_status::RR_STATUS_NULL_ARGUMENT;
    }
    let name = match utf8_arg(name) {
        Ok(n) => n,
        Err(status) => return status,
    };
    let s = &(*result).summary;
    let metric = match name {
        "eval_in.asr" => Some(s.eval_in.asr),
        "eval_in.clean_asr" => Some(s.eval_in.clean_asr),
        "eval_in.delta" => Some(s.eval_in.delta),
        "eval_ood.asr" => Some(s.eval_ood.asr),
        "eval_ood.clean_asr" => Some(s.eval_ood.clean_asr),
        "eval_ood.delta" => Some(s.eval_ood.delta),
        "cost_ratio" => s.cost_ratio,
        _ => None,
    };
    match metric {
        Some(m) => {
            *value = m;
            rr_status::RR_STATUS_OK
        }
        None => {
            set_error(&format!("unknown or absent metric `{name}`"));
            rr_status::RR_STATUS_UNKNOWN_METRIC
        }
    }
}

fn to_owned_c_string(text: &str) -> *mut c_char {
    CString::new(text.replace('\0', " "))
        .map(CString::into_raw)
        .unwrap_or(std::ptr::null_mut())
}

/// The optimized suffix text. Free with [`rr_string_free`].
///
/// # Safety
/// `result` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rr_run_result_suffix(result: *const rr_run_result) -> *mut c_char {
    if result.is_null() {
        set_error("null result handle");
        return std::ptr::null_mut();
    }
    to_owned_c_string(&(*result).summary.suffix_text)
}

/// The merged metric summary as JSON. Free with [`rr_string_free`].
///
/// # Safety
/// `result` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rr_run_result_summary_json(result: *const rr_run_result) -> *mut c_char {
    if result.is_null() {
        set_error("null result handle");
        return std::ptr::null_mut();
    }
    to_owned_c_string(&(*result).summary_json)
}

/// The run directory the artifacts were written to. Free with
/// [`rr_string_free`].
///
/// # Safety
/// `result` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rr_run_result_dir(result: *const rr_run_result) -> *mut c_char {
    if result.is_null() {
        set_error("null result handle");
        return std::ptr::null_mut();
    }
    to_owned_c_string(&(*result).run_dir.display().to_string())
}

/// Releases a string returned by this library. Null is a no-op.
///
/// # Safety
/// `text` must have been returned by a `rr_*` function and not been freed.
#[no_mangle]
pub unsafe extern "C" fn rr_string_free(text: *mut c_char) {
    if !text.is_null() {
        drop(CString::from_raw(text));
    }
}
