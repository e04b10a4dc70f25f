//! C ABI over the `clwe` library.
//!
//! Objects cross the boundary as opaque handles that the caller releases
//! with the matching `*_free` function. Every fallible call returns a
//! [`ClweStatus`]; on failure the message is available from
//! [`clwe_last_error`] on the same thread until the next failing call.
//! Configuration is passed as TOML text with the same `[mapping]`,
//! `[refine]` and `[eval]` tables the command-line tool reads; a null
//! pointer means defaults.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use clwe::cli::PipelineConfig;
use clwe::embed_io::{
    load_dictionary, load_embeddings, load_gold_dictionary, save_dictionary, save_embeddings, BilingualDictionary,
    Vocabulary,
};
use clwe::error::Error;
use clwe::eval::precision_at_k;
use clwe::mapping::{align, MappingResult};
use clwe::matrix::EmbeddingMatrix;
use clwe::preprocess::Preprocessing;
use clwe::refine::refine_pipeline;
use clwe::retrieval::RetrievalMethod;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClweStatus {
    Ok = 0,
    Io = 1,
    Format = 2,
    Contract = 3,
    Numerical = 4,
    Degenerate = 5,
    AlignmentCollapse = 6,
    Config = 7,
    NullArgument = 8,
    InvalidUtf8 = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClweRetrieval {
    Nn = 0,
    Csls = 1,
}

/// A vocabulary with its embedding matrix.
pub struct ClweSpace {
    vocab: Vocabulary,
    words: Vec<CString>,
    matrix: EmbeddingMatrix,
}

/// Word-index pairs between a source and a target space.
pub struct ClweDictionary {
    dict: BilingualDictionary,
}

/// Result of unsupervised alignment.
pub struct ClweMapping {
    result: MappingResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(ClweStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Io { .. } => ClweStatus::Io,
            Error::Format { .. } => ClweStatus::Format,
            Error::Contract(_) => ClweStatus::Contract,
            Error::Numerical(_) => ClweStatus::Numerical,
            Error::Degenerate(_) => ClweStatus::Degenerate,
            Error::AlignmentCollapse { .. } => ClweStatus::AlignmentCollapse,
            Error::Config(_) => ClweStatus::Config,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard<F>(f: F) -> ClweStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ClweStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(format!("internal error: {message}"));
            ClweStatus::Panic
        }
    }
}

fn null(name: &str) -> Failure {
    Failure(ClweStatus::NullArgument, format!("{name} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(ClweStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn config_arg(p: *const c_char) -> Result<PipelineConfig, Failure> {
    if p.is_null() {
        return Ok(PipelineConfig::default());
    }
    Ok(PipelineConfig::from_toml_str(str_arg(p, "config")?)?)
}

unsafe fn put<T>(out: *mut *mut T, value: T, name: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(name));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn make_space(vocab: Vocabulary, matrix: EmbeddingMatrix) -> Result<ClweSpace, Failure> {
    let words = vocab
        .words()
        .iter()
        .map(|w| CString::new(w.as_str()))
        .collect::<Result<_, _>>()
        .map_err(|_| Failure(ClweStatus::Format, "word contains a nul byte".into()))?;
    Ok(ClweSpace { vocab, words, matrix })
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn clwe_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn clwe_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a text embedding file. `max_vocab` of 0 reads every word.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn clwe_space_load(path: *const c_char, max_vocab: usize, out: *mut *mut ClweSpace) -> ClweStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let (vocab, matrix) = load_embeddings(path, (max_vocab > 0).then_some(max_vocab))?;
        put(out, make_space(vocab, matrix)?, "out")
    })
}

/// Builds a space from `rows` words and a row-major `rows × dim` array.
///
/// # Safety
/// `words` must hold `rows` nul-terminated strings and `data` `rows * dim`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn clwe_space_new(
    words: *const *const c_char,
    data: *const f64,
    rows: usize,
    dim: usize,
    out: *mut *mut ClweSpace,
) -> ClweStatus {
    guard(|| {
        if rows > 0 && (words.is_null() || data.is_null()) {
            return Err(null("words or data"));
        }
        let mut list = Vec::with_capacity(rows);
        for i in 0..rows {
            list.push(str_arg(*words.add(i), "word")?.to_string());
        }
        let values = if rows == 0 { Vec::new() } else { std::slice::from_raw_parts(data, rows * dim).to_vec() };
        let vocab = Vocabulary::from_words(list)?;
        let matrix = EmbeddingMatrix::new(rows, dim, values)?;
        put(out, make_space(vocab, matrix)?, "out")
    })
}

/// # Safety
/// `space` must come from this library; `path` must be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn clwe_space_save(space: *const ClweSpace, path: *const c_char) -> ClweStatus {
    guard(|| {
        let s = ref_arg(space, "space")?;
        save_embeddings(&s.vocab, &s.matrix, str_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `space` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn clwe_space_rows(space: *const ClweSpace) -> usize {
    space.as_ref().map_or(0, |s| s.matrix.rows())
}

/// # Safety
/// `space` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn clwe_space_dim(space: *const ClweSpace) -> usize {
    space.as_ref().map_or(0, |s| s.matrix.dim())
}

/// Row-major values, valid while the handle lives. Null for a null handle.
///
/// # Safety
/// `space` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn clwe_space_data(space: *const ClweSpace) -> *const f64 {
    space.as_ref().map_or(ptr::null(), |s| s.matrix.as_slice().as_ptr())
}

/// Word at `index`, valid while the handle lives. Null when out of range.
///
/// # Safety
/// `space` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn clwe_space_word(space: *const ClweSpace, index: usize) -> *const c_char {
    space
        .as_ref()
        .and_then(|s| s.words.get(index))
        .map_or(ptr::null(), |w| w.as_ptr())
}

/// Applies a comma-separated list of `unit` / `center` steps in place, e.g.
/// `"unit,center,unit"`. Null means that default sequence.
///
/// # Safety
/// `space` must be a live handle; `steps` null or nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn clwe_space_preprocess(space: *mut ClweSpace, steps: *const c_char) -> ClweStatus {
    guard(|| {
        let s = space.as_mut().ok_or_else(|| null("space"))?;
        let steps: Preprocessing = if steps.is_null() { Preprocessing::default() } else { str_arg(steps, "steps")?.parse()? };
        s.matrix = steps.apply(&s.matrix)?;
        Ok(())
    })
}

/// # Safety
/// `space` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn clwe_space_free(space: *mut ClweSpace) {
    if !space.is_null() {
        drop(Box::from_raw(space));
    }
}

/// Reads a "source target" word-pair file against two spaces; pairs with
/// unknown words are dropped.
///
/// # Safety
/// Handles must be live; `path` nul-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn clwe_dictionary_load(
    path: *const c_char,
    src: *const ClweSpace,
    trg: *const ClweSpace,
    out: *mut *mut ClweDictionary,
) -> ClweStatus {
    guard(|| {
        let (s, t) = (ref_arg(src, "src")?, ref_arg(trg, "trg")?);
        let dict = load_dictionary(str_arg(path, "path")?, &s.vocab, &t.vocab)?;
        put(out, ClweDictionary { dict }, "out")
    })
}

/// # Safety
/// Handles must be live; `path` nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn clwe_dictionary_save(
    dict: *const ClweDictionary,
    src: *const ClweSpace,
    trg: *const ClweSpace,
    path: *const c_char,
) -> ClweStatus {
    guard(|| {
        let d = ref_arg(dict, "dict")?;
        let (s, t) = (ref_arg(src, "src")?, ref_arg(trg, "trg")?);
        save_dictionary(&d.dict, &s.vocab, &t.vocab, str_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `dict` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn clwe_dictionary_len(dict: *const ClweDictionary) -> usize {
    dict.as_ref().map_or(0, |d| d.dict.len())
}

/// # Safety
/// `dict` must be a live handle; `source` and `target` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn clwe_dictionary_pair(
    dict: *const ClweDictionary,
    index: usize,
    source: *mut usize,
    target: *mut usize,
) -> ClweStatus {
    guard(|| {
        let d = ref_arg(dict, "dict")?;
        if source.is_null() || target.is_null() {
            return Err(null("source or target"));
        }
        let &(s, t) = d
            .dict
            .pairs()
            .get(index)
            .ok_or_else(|| Failure(ClweStatus::Contract, format!("pair {index} out of range")))?;
        *source = s;
        *target = t;
        Ok(())
    })
}

/// # Safety
/// `dict` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn clwe_dictionary_free(dict: *mut ClweDictionary) {
    if !dict.is_null() {
        drop(Box::from_raw(dict));
    }
}

/// Unsupervised alignment of two preprocessed spaces. `config` is TOML with
/// an optional `[mapping]` table, or null.
///
/// # Safety
/// Handles must be live; `config` null or nul-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn clwe_align(
    src: *const ClweSpace,
    trg: *const ClweSpace,
    config: *const c_char,
    out: *mut *mut ClweMapping,
) -> ClweStatus {
    guard(|| {
        let (s, t) = (ref_arg(src, "src")?, ref_arg(trg, "trg")?);
        let cfg = config_arg(config)?;
        let result = align(&s.matrix, &t.matrix, &cfg.mapping)?;
        put(out, ClweMapping { result }, "out")
    })
}

/// # Safety
/// `mapping` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn clwe_mapping_converged(mapping: *const ClweMapping) -> bool {
    mapping.as_ref().is_some_and(|m| m.result.converged)
}

/// # Safety
/// `mapping` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn clwe_mapping_iterations(mapping: *const ClweMapping) -> usize {
    mapping.as_ref().map_or(0, |m| m.result.iterations)
}

/// # Safety
/// `mapping` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn clwe_mapping_objective(mapping: *const ClweMapping) -> f64 {
    mapping.as_ref().map_or(f64::NAN, |m| m.result.objective)
}

/// Copy of the self-learned dictionary.
///
/// # Safety
/// `mapping` must be a live handle; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn clwe_mapping_dictionary(mapping: *const ClweMapping, out: *mut *mut ClweDictionary) -> ClweStatus {
    guard(|| {
        let m = ref_arg(mapping, "mapping")?;
        put(out, ClweDictionary { dict: m.result.dictionary.clone() }, "out")
    })
}

/// Maps a space into the shared space: the source transform when `source`
/// is true, the target transform otherwise.
///
/// # Safety
/// Handles must be live; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn clwe_mapping_apply(
    mapping: *const ClweMapping,
    space: *const ClweSpace,
    source: bool,
    out: *mut *mut ClweSpace,
) -> ClweStatus {
    guard(|| {
        let m = ref_arg(mapping, "mapping")?;
        let s = ref_arg(space, "space")?;
        let mapped = if source { m.result.map_source(&s.matrix)? } else { m.result.map_target(&s.matrix)? };
        put(out, make_space(s.vocab.clone(), mapped)?, "out")
    })
}

/// # Safety
/// `mapping` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn clwe_mapping_free(mapping: *mut ClweMapping) {
    if !mapping.is_null() {
        drop(Box::from_raw(mapping));
    }
}

/// Midpoint averaging over `dict` followed by per-space normalization.
/// `config` is TOML with an optional `[refine]` table, or null.
/// `pairs_averaged` may be null.
///
/// # Safety
/// Handles must be live; output pointers valid.
#[no_mangle]
pub unsafe extern "C" fn clwe_refine(
    src: *const ClweSpace,
    trg: *const ClweSpace,
    dict: *const ClweDictionary,
    config: *const c_char,
    out_src: *mut *mut ClweSpace,
    out_trg: *mut *mut ClweSpace,
    pairs_averaged: *mut usize,
) -> ClweStatus {
    guard(|| {
        let (s, t) = (ref_arg(src, "src")?, ref_arg(trg, "trg")?);
        let d = ref_arg(dict, "dict")?;
        let cfg = config_arg(config)?;
        if out_src.is_null() || out_trg.is_null() {
            return Err(null("out_src or out_trg"));
        }
        let r = refine_pipeline(&s.matrix, &t.matrix, &d.dict, &cfg.refine)?;
        let x = make_space(s.vocab.clone(), r.x_refined)?;
        let z = make_space(t.vocab.clone(), r.z_refined)?;
        put(out_src, x, "out_src")?;
        put(out_trg, z, "out_trg")?;
        if !pairs_averaged.is_null() {
            *pairs_averaged = r.pairs_averaged;
        }
        Ok(())
    })
}

/// P@k against a gold word-pair file, one value in [0, 1] per entry of `ks`
/// written to `precision`.
///
/// # Safety
/// Handles must be live; `ks` and `precision` must hold `n_ks` elements.
#[no_mangle]
pub unsafe extern "C" fn clwe_evaluate(
    src: *const ClweSpace,
    trg: *const ClweSpace,
    gold_path: *const c_char,
    ks: *const usize,
    n_ks: usize,
    method: ClweRetrieval,
    csls_k: usize,
    precision: *mut f64,
) -> ClweStatus {
    guard(|| {
        let (s, t) = (ref_arg(src, "src")?, ref_arg(trg, "trg")?);
        if ks.is_null() || precision.is_null() {
            return Err(null("ks or precision"));
        }
        let ks = std::slice::from_raw_parts(ks, n_ks);
        let gold = load_gold_dictionary(PathBuf::from(str_arg(gold_path, "gold_path")?), &s.vocab, &t.vocab)?;
        let method = match method {
            ClweRetrieval::Nn => RetrievalMethod::Nn,
            ClweRetrieval::Csls => RetrievalMethod::Csls,
        };
        let report = precision_at_k(&s.matrix, &t.matrix, &gold, ks, method, csls_k)?;
        for (i, k) in ks.iter().enumerate() {
            *precision.add(i) = report.precision_at[k];
        }
        Ok(())
    })
}
