//! C ABI over the core library: opaque handles, integer status codes, and
//! a thread-local last-error message. All strings are UTF-8 C strings;
//! strings returned by this library must be released with
//! `gw_string_free`, handles with their matching `_free` function.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::path::Path;

use geoworld::cache::compute_feature;
use geoworld::config::RunConfig;
use geoworld::scene::{generate_corpus, read_jsonl, write_jsonl, CorpusEntry};
use geoworld::teacher::Teacher;
use geoworld::tensor::{load_params, save_params, ParamStore};
use geoworld::train::{evaluate, method_teacher_config, train_prepared};

/// Status code for every fallible call. `GW_OK` is zero; anything else
/// leaves a message retrievable via `gw_last_error`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GwStatus {
    GwOk = 0,
    GwNullPointer = 1,
    GwInvalidArgument = 2,
    GwIoError = 3,
    GwNumericError = 4,
    GwBadUtf8 = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|c| *c != '\0').collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).unwrap());
}

fn fail(status: GwStatus, msg: impl AsRef<str>) -> GwStatus {
    set_error(msg.as_ref());
    status
}

/// Message for the most recent failure on this thread. Valid until the
/// next failing call on the same thread; never NULL; do not free.
#[no_mangle]
pub extern "C" fn gw_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Opaque run configuration.
pub struct GwConfig {
    inner: RunConfig,
}

/// Opaque QA corpus.
pub struct GwCorpus {
    inner: Vec<CorpusEntry>,
}

/// Opaque trained (or initialized) parameter set.
pub struct GwModel {
    inner: ParamStore,
}

unsafe fn cstr<'a>(p: *const c_char) -> Result<&'a str, GwStatus> {
    if p.is_null() {
        set_error("null string argument");
        return Err(GwStatus::GwNullPointer);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        GwStatus::GwBadUtf8
    })
}

fn out_string(s: String, out: *mut *mut c_char) -> GwStatus {
    let sanitized: String = s.chars().filter(|c| *c != '\0').collect();
    unsafe {
        *out = CString::new(sanitized).unwrap().into_raw();
    }
    GwStatus::GwOk
}

/// Release a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn gw_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Default configuration. Caller owns the handle.
#[no_mangle]
pub unsafe extern "C" fn gw_config_default(out: *mut *mut GwConfig) -> GwStatus {
    if out.is_null() {
        return fail(GwStatus::GwNullPointer, "null out pointer");
    }
    *out = Box::into_raw(Box::new(GwConfig {
        inner: RunConfig::default(),
    }));
    GwStatus::GwOk
}

/// Parse a configuration from JSON (strict schema, unknown keys rejected).
#[no_mangle]
pub unsafe extern "C" fn gw_config_from_json(
    json: *const c_char,
    out: *mut *mut GwConfig,
) -> GwStatus {
    if out.is_null() {
        return fail(GwStatus::GwNullPointer, "null out pointer");
    }
    let text = match cstr(json) {
        Ok(t) => t,
        Err(s) => return s,
    };
    let value: serde_json::Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) => return fail(GwStatus::GwInvalidArgument, e.to_string()),
    };
    match RunConfig::from_value(value) {
        Ok(cfg) => {
            *out = Box::into_raw(Box::new(GwConfig { inner: cfg }));
            GwStatus::GwOk
        }
        Err(e) => fail(GwStatus::GwInvalidArgument, e.to_string()),
    }
}

/// Serialize a configuration to JSON.
#[no_mangle]
pub unsafe extern "C" fn gw_config_to_json(
    cfg: *const GwConfig,
    out: *mut *mut c_char,
) -> GwStatus {
    if cfg.is_null() || out.is_null() {
        return fail(GwStatus::GwNullPointer, "null argument");
    }
    out_string(
        serde_json::to_string_pretty(&(*cfg).inner).expect("config serializes"),
        out,
    )
}

#[no_mangle]
pub unsafe extern "C" fn gw_config_free(cfg: *mut GwConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Generate `count` QA examples from successive scene seeds.
#[no_mangle]
pub unsafe extern "C" fn gw_corpus_generate(
    cfg: *const GwConfig,
    seed_start: u64,
    count: usize,
    out: *mut *mut GwCorpus,
) -> GwStatus {
    if cfg.is_null() || out.is_null() {
        return fail(GwStatus::GwNullPointer, "null argument");
    }
    match generate_corpus(seed_start, count, &(*cfg).inner.scene) {
        Ok(c) => {
            *out = Box::into_raw(Box::new(GwCorpus { inner: c }));
            GwStatus::GwOk
        }
        Err(e) => fail(GwStatus::GwNumericError, e.to_string()),
    }
}

#[no_mangle]
pub unsafe extern "C" fn gw_corpus_len(corpus: *const GwCorpus, out: *mut usize) -> GwStatus {
    if corpus.is_null() || out.is_null() {
        return fail(GwStatus::GwNullPointer, "null argument");
    }
    *out = (*corpus).inner.len();
    GwStatus::GwOk
}

#[no_mangle]
pub unsafe extern "C" fn gw_corpus_write_jsonl(
    corpus: *const GwCorpus,
    path: *const c_char,
) -> GwStatus {
    if corpus.is_null() {
        return fail(GwStatus::GwNullPointer, "null corpus");
    }
    let path = match cstr(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match write_jsonl(Path::new(path), &(*corpus).inner) {
        Ok(()) => GwStatus::GwOk,
        Err(e) => fail(GwStatus::GwIoError, e.to_string()),
    }
}

#[no_mangle]
pub unsafe extern "C" fn gw_corpus_read_jsonl(
    path: *const c_char,
    out: *mut *mut GwCorpus,
) -> GwStatus {
    if out.is_null() {
        return fail(GwStatus::GwNullPointer, "null out pointer");
    }
    let path = match cstr(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match read_jsonl(Path::new(path)) {
        Ok(c) => {
            *out = Box::into_raw(Box::new(GwCorpus { inner: c }));
            GwStatus::GwOk
        }
        Err(e) => fail(GwStatus::GwIoError, e.to_string()),
    }
}

#[no_mangle]
pub unsafe extern "C" fn gw_corpus_free(corpus: *mut GwCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Train one seed on an in-memory corpus. Teacher features (when the
/// configured method needs them) are computed in memory, no cache files.
#[no_mangle]
pub unsafe extern "C" fn gw_train(
    cfg: *const GwConfig,
    train_corpus: *const GwCorpus,
    seed: u64,
    out: *mut *mut GwModel,
) -> GwStatus {
    if cfg.is_null() || train_corpus.is_null() || out.is_null() {
        return fail(GwStatus::GwNullPointer, "null argument");
    }
    let cfg = &(*cfg).inner;
    let corpus = &(*train_corpus).inner;
    let features = match method_teacher_config(cfg) {
        None => None,
        Some(tcfg) => {
            let teacher = match Teacher::new(tcfg) {
                Ok(t) => t,
                Err(e) => return fail(GwStatus::GwInvalidArgument, e.to_string()),
            };
            let mut map = BTreeMap::new();
            for entry in corpus {
                match compute_feature(&teacher, entry) {
                    Ok(f) => {
                        map.insert(entry.id, f);
                    }
                    Err(e) => return fail(GwStatus::GwNumericError, e.to_string()),
                }
            }
            Some(map)
        }
    };
    match train_prepared(cfg, seed, corpus, features.as_ref()) {
        Ok(r) => {
            *out = Box::into_raw(Box::new(GwModel { inner: r.params }));
            GwStatus::GwOk
        }
        Err(e) => fail(GwStatus::GwNumericError, e.to_string()),
    }
}

/// Evaluate a model; writes the evaluation record as a JSON string.
#[no_mangle]
pub unsafe extern "C" fn gw_evaluate(
    model: *const GwModel,
    corpus: *const GwCorpus,
    seed: u64,
    out_json: *mut *mut c_char,
) -> GwStatus {
    if model.is_null() || corpus.is_null() || out_json.is_null() {
        return fail(GwStatus::GwNullPointer, "null argument");
    }
    match evaluate(&(*model).inner, &(*corpus).inner, "eval", seed) {
        Ok(rec) => out_string(
            serde_json::to_string_pretty(&rec).expect("record serializes"),
            out_json,
        ),
        Err(e) => fail(GwStatus::GwNumericError, e.to_string()),
    }
}

/// Save a model checkpoint (params.bin + manifest.json) into `dir`.
#[no_mangle]
pub unsafe extern "C" fn gw_model_save(model: *const GwModel, dir: *const c_char) -> GwStatus {
    if model.is_null() {
        return fail(GwStatus::GwNullPointer, "null model");
    }
    let dir = match cstr(dir) {
        Ok(d) => d,
        Err(s) => return s,
    };
    match save_params(Path::new(dir), &(*model).inner) {
        Ok(()) => GwStatus::GwOk,
        Err(e) => fail(GwStatus::GwIoError, e.to_string()),
    }
}

#[no_mangle]
pub unsafe extern "C" fn gw_model_load(dir: *const c_char, out: *mut *mut GwModel) -> GwStatus {
    if out.is_null() {
        return fail(GwStatus::GwNullPointer, "null out pointer");
    }
    let dir = match cstr(dir) {
        Ok(d) => d,
        Err(s) => return s,
    };
    match load_params(Path::new(dir)) {
        Ok(p) => {
            *out = Box::into_raw(Box::new(GwModel { inner: p }));
            GwStatus::GwOk
        }
        Err(e) => fail(GwStatus::GwIoError, e.to_string()),
    }
}

#[no_mangle]
pub unsafe extern "C" fn gw_model_free(model: *mut GwModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    #[test]
    fn config_json_roundtrip_through_abi() {
        unsafe {
            let mut cfg: *mut GwConfig = ptr::null_mut();
            assert_eq!(gw_config_default(&mut cfg), GwStatus::GwOk);
            let mut json: *mut c_char = ptr::null_mut();
            assert_eq!(gw_config_to_json(cfg, &mut json), GwStatus::GwOk);
            let mut cfg2: *mut GwConfig = ptr::null_mut();
            assert_eq!(gw_config_from_json(json, &mut cfg2), GwStatus::GwOk);
            assert_eq!((*cfg).inner.epochs, (*cfg2).inner.epochs);
            gw_string_free(json);
            gw_config_free(cfg);
            gw_config_free(cfg2);
        }
    }

    #[test]
    fn bad_config_sets_error_message() {
        unsafe {
            let bad = CString::new("{\"not_a_field\": 1}").unwrap();
            let mut cfg: *mut GwConfig = ptr::null_mut();
            let status = gw_config_from_json(bad.as_ptr(), &mut cfg);
            assert_eq!(status, GwStatus::GwInvalidArgument);
            let msg = CStr::from_ptr(gw_last_error()).to_str().unwrap();
            assert!(msg.contains("not_a_field"), "{}", msg);
        }
    }

    #[test]
    fn generate_train_evaluate_through_abi() {
        unsafe {
            let mut cfg: *mut GwConfig = ptr::null_mut();
            gw_config_default(&mut cfg);
            (*cfg).inner.method = geoworld::config::Method::FtOnly;
            (*cfg).inner.epochs = 1;

            let mut corpus: *mut GwCorpus = ptr::null_mut();
            assert_eq!(gw_corpus_generate(cfg, 3000, 8, &mut corpus), GwStatus::GwOk);
            let mut n = 0usize;
            gw_corpus_len(corpus, &mut n);
            assert_eq!(n, 8);

            let mut model: *mut GwModel = ptr::null_mut();
            assert_eq!(gw_train(cfg, corpus, 42, &mut model), GwStatus::GwOk);

            let mut json: *mut c_char = ptr::null_mut();
            assert_eq!(gw_evaluate(model, corpus, 42, &mut json), GwStatus::GwOk);
            let rec: serde_json::Value =
                serde_json::from_str(CStr::from_ptr(json).to_str().unwrap()).unwrap();
            assert_eq!(rec["total"], 8);

            gw_string_free(json);
            gw_model_free(model);
            gw_corpus_free(corpus);
            gw_config_free(cfg);
        }
    }

    #[test]
    fn model_save_load_roundtrip() {
        unsafe {
            let tmp = tempfile::tempdir().unwrap();
            let dir = CString::new(tmp.path().join("ckpt").to_str().unwrap()).unwrap();
            let mut cfg: *mut GwConfig = ptr::null_mut();
            gw_config_default(&mut cfg);
            (*cfg).inner.method = geoworld::config::Method::Base;
            let mut corpus: *mut GwCorpus = ptr::null_mut();
            gw_corpus_generate(cfg, 3100, 2, &mut corpus);
            let mut model: *mut GwModel = ptr::null_mut();
            gw_train(cfg, corpus, 42, &mut model);
            assert_eq!(gw_model_save(model, dir.as_ptr()), GwStatus::GwOk);
            let mut loaded: *mut GwModel = ptr::null_mut();
            assert_eq!(gw_model_load(dir.as_ptr(), &mut loaded), GwStatus::GwOk);
            assert_eq!((*model).inner.len(), (*loaded).inner.len());
            gw_model_free(model);
            gw_model_free(loaded);
            gw_corpus_free(corpus);
            gw_config_free(cfg);
        }
    }
}
