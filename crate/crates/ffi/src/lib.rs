//! C ABI over `concept_gauge`.
//!
//! Every function returns a [`CgStatus`]; results go through out-pointers.
//! On failure the message is available from [`cg_last_error_message`] on the
//! same thread. Handles are opaque and must be released with their `_free`
//! function. Passing NULL to a `_free` function is a no-op.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use concept_gauge::backend::{open_backend, Backend, BackendSpec, TokenId};
use concept_gauge::concept::Concept;
use concept_gauge::faithfulness::{evaluate_faithfulness, FaithfulnessConfig};
use concept_gauge::measure::Measure;
use concept_gauge::meta_eval::{self, build_mtmm, MtmmReport, ScoreRow, ScoreTable};
use concept_gauge::perturbation;
use concept_gauge::pipeline::{run_pipeline, ConfigOverrides, PipelineConfig, RunOptions};
use concept_gauge::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// A statistic or score is undefined for these inputs (zero variance,
    /// no activation weight).
    Undefined = 3,
    /// Required cells are missing from a score table.
    Incomplete = 4,
    Config = 5,
    Backend = 6,
    Io = 7,
    NotConverged = 8,
    Panic = 9,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CgStatus {
    match e {
        Error::Undefined(_) | Error::AllBatchesSkipped => CgStatus::Undefined,
        Error::Incomplete(_) => CgStatus::Incomplete,
        Error::Config(_) => CgStatus::Config,
        Error::Backend(_) => CgStatus::Backend,
        Error::Io { .. } | Error::RawIo(_) => CgStatus::Io,
        Error::SolverDidNotConverge { .. } | Error::TrainingDidNotConverge { .. } => CgStatus::NotConverged,
        _ => CgStatus::InvalidArgument,
    }
}

struct Fail(CgStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CgStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            CgStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(CgStatus::NullPointer, format!("{what} is NULL"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(CgStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

fn give<T>(out: &mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn cg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

pub struct CgConcept {
    inner: Concept,
}

/// Linear concept `a(h) = vᵀh + b` over `len`-dimensional hidden states.
#[no_mangle]
pub unsafe extern "C" fn cg_concept_linear(
    id: *const c_char,
    v: *const f64,
    len: usize,
    b: f64,
    out: *mut *mut CgConcept,
) -> CgStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let c = Concept::linear(str_arg(id, "id")?, slice_arg(v, len, "v")?.to_vec(), b)?;
        give(out, CgConcept { inner: c });
        Ok(())
    })
}

/// ReLU-linear concept `a(h) = max(0, vᵀh + b)`.
#[no_mangle]
pub unsafe extern "C" fn cg_concept_relu_linear(
    id: *const c_char,
    v: *const f64,
    len: usize,
    b: f64,
    out: *mut *mut CgConcept,
) -> CgStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let c = Concept::relu_linear(str_arg(id, "id")?, slice_arg(v, len, "v")?.to_vec(), b)?;
        give(out, CgConcept { inner: c });
        Ok(())
    })
}

/// Single-neuron concept `a(h) = h[neuron]`.
#[no_mangle]
pub unsafe extern "C" fn cg_concept_one_hot(id: *const c_char, neuron: usize, out: *mut *mut CgConcept) -> CgStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        give(out, CgConcept { inner: Concept::one_hot(str_arg(id, "id")?, neuron)? });
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cg_concept_free(concept: *mut CgConcept) {
    if !concept.is_null() {
        drop(Box::from_raw(concept));
    }
}

#[no_mangle]
pub unsafe extern "C" fn cg_concept_activate(concept: *const CgConcept, h: *const f64, len: usize, out: *mut f64) -> CgStatus {
    guard(|| {
        let c = handle(concept, "concept")?;
        let out = out_arg(out, "out")?;
        *out = c.inner.activate(slice_arg(h, len, "h")?)?;
        Ok(())
    })
}

/// Writes the closest point to `h` with zero activation into `out[0..len]`.
#[no_mangle]
pub unsafe extern "C" fn cg_concept_ablate(concept: *const CgConcept, h: *const f64, len: usize, out: *mut f64) -> CgStatus {
    guard(|| {
        let c = handle(concept, "concept")?;
        let h = slice_arg(h, len, "h")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let r = perturbation::ablate(&c.inner, h)?;
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&r);
        Ok(())
    })
}

/// Writes `h` moved by `epsilon` along the direction of steepest
/// activation increase into `out[0..len]`.
#[no_mangle]
pub unsafe extern "C" fn cg_concept_epsilon_add(
    concept: *const CgConcept,
    h: *const f64,
    len: usize,
    epsilon: f64,
    out: *mut f64,
) -> CgStatus {
    guard(|| {
        let c = handle(concept, "concept")?;
        let h = slice_arg(h, len, "h")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let r = perturbation::epsilon_add(&c.inner, h, epsilon)?;
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&r);
        Ok(())
    })
}

pub struct CgBackend {
    inner: Box<dyn Backend>,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CgBackendInfo {
    pub hidden_width: usize,
    pub vocab_size: usize,
    pub layer_index: usize,
    pub max_length: usize,
}

/// Opens `toy:<seed>`, `cmd:<argv>` or `tcp:<host:port>`.
#[no_mangle]
pub unsafe extern "C" fn cg_backend_open(spec: *const c_char, out: *mut *mut CgBackend) -> CgStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let spec: BackendSpec = str_arg(spec, "spec")?.parse()?;
        give(out, CgBackend { inner: open_backend(&spec)? });
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cg_backend_free(backend: *mut CgBackend) {
    if !backend.is_null() {
        drop(Box::from_raw(backend));
    }
}

#[no_mangle]
pub unsafe extern "C" fn cg_backend_info(backend: *const CgBackend, out: *mut CgBackendInfo) -> CgStatus {
    guard(|| {
        let b = handle(backend, "backend")?;
        let out = out_arg(out, "out")?;
        let i = b.inner.info();
        *out = CgBackendInfo {
            hidden_width: i.hidden_width,
            vocab_size: i.vocab_size,
            layer_index: i.layer_index,
            max_length: i.max_length,
        };
        Ok(())
    })
}

/// Faithfulness measure `measure` (e.g. "ABL-Div") of `concept` on one
/// token sequence treated as a single batch, with default options.
#[no_mangle]
pub unsafe extern "C" fn cg_faithfulness(
    backend: *const CgBackend,
    concept: *const CgConcept,
    measure: *const c_char,
    tokens: *const u32,
    n_tokens: usize,
    out: *mut f64,
) -> CgStatus {
    guard(|| {
        let b = handle(backend, "backend")?;
        let c = handle(concept, "concept")?;
        let out = out_arg(out, "out")?;
        let Measure::Faithfulness(m) = str_arg(measure, "measure")?.parse::<Measure>()? else {
            return Err(Fail(CgStatus::InvalidArgument, "not a faithfulness measure".into()));
        };
        let tokens: &[TokenId] = slice_arg(tokens, n_tokens, "tokens")?;
        let concept = c.inner.clone().with_hidden_width(b.inner.info().hidden_width)?;
        let pass = b.inner.forward(tokens)?;
        *out = evaluate_faithfulness(&concept, &[vec![pass]], m, b.inner.as_ref(), &FaithfulnessConfig::default())?.score;
        Ok(())
    })
}

type Statistic = fn(&[f64], &[f64]) -> concept_gauge::Result<f64>;

unsafe fn correlation(f: Statistic, x: *const f64, y: *const f64, n: usize, out: *mut f64) -> CgStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = f(slice_arg(x, n, "x")?, slice_arg(y, n, "y")?)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cg_pearson(x: *const f64, y: *const f64, n: usize, out: *mut f64) -> CgStatus {
    correlation(meta_eval::pearson, x, y, n, out)
}

#[no_mangle]
pub unsafe extern "C" fn cg_spearman(x: *const f64, y: *const f64, n: usize, out: *mut f64) -> CgStatus {
    correlation(meta_eval::spearman, x, y, n, out)
}

/// Kendall's tau-a; ties contribute zero.
#[no_mangle]
pub unsafe extern "C" fn cg_kendall_tau(x: *const f64, y: *const f64, n: usize, out: *mut f64) -> CgStatus {
    correlation(meta_eval::kendall_tau, x, y, n, out)
}

/// Cronbach's alpha of `n_subsets` score vectors over `n_concepts`
/// concepts, stored row-major in `scores`.
#[no_mangle]
pub unsafe extern "C" fn cg_cronbach_alpha(scores: *const f64, n_subsets: usize, n_concepts: usize, out: *mut f64) -> CgStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let len = n_subsets
            .checked_mul(n_concepts)
            .ok_or_else(|| Fail(CgStatus::InvalidArgument, "size overflow".into()))?;
        let data = slice_arg(scores, len, "scores")?;
        let subsets: Vec<Vec<f64>> = data.chunks(n_concepts.max(1)).map(<[f64]>::to_vec).collect();
        *out = meta_eval::cronbach_alpha(&subsets)?;
        Ok(())
    })
}

pub struct CgScoreTable {
    inner: ScoreTable,
}

#[no_mangle]
pub unsafe extern "C" fn cg_scores_new(out: *mut *mut CgScoreTable) -> CgStatus {
    guard(|| {
        give(out_arg(out, "out")?, CgScoreTable { inner: ScoreTable::new() });
        Ok(())
    })
}

/// Reads a `concept_id,measure_id,batch_id,run_id,score` CSV file.
#[no_mangle]
pub unsafe extern "C" fn cg_scores_read_csv(path: *const c_char, out: *mut *mut CgScoreTable) -> CgStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let f = std::fs::File::open(path).map_err(|e| Fail(CgStatus::Io, format!("{path}: {e}")))?;
        give(out, CgScoreTable { inner: ScoreTable::read_csv(f)? });
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cg_scores_free(table: *mut CgScoreTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Adds one cell; duplicates and NaN are rejected.
#[no_mangle]
pub unsafe extern "C" fn cg_scores_insert(
    table: *mut CgScoreTable,
    concept_id: *const c_char,
    measure_id: *const c_char,
    batch_id: usize,
    run_id: *const c_char,
    score: f64,
) -> CgStatus {
    guard(|| {
        let t = table.as_mut().ok_or_else(|| null("table"))?;
        t.inner.insert(ScoreRow {
            concept_id: str_arg(concept_id, "concept_id")?.to_string(),
            measure_id: str_arg(measure_id, "measure_id")?.to_string(),
            batch_id,
            run_id: str_arg(run_id, "run_id")?.to_string(),
            score,
        })?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cg_scores_len(table: *const CgScoreTable, out: *mut usize) -> CgStatus {
    guard(|| {
        *out_arg(out, "out")? = handle(table, "table")?.inner.len();
        Ok(())
    })
}

pub struct CgMtmm {
    inner: MtmmReport,
}

/// MTMM table of a single-run score table. `measures` is a comma-separated
/// list giving the row order, or NULL for every measure in the table.
#[no_mangle]
pub unsafe extern "C" fn cg_mtmm_build(table: *const CgScoreTable, measures: *const c_char, out: *mut *mut CgMtmm) -> CgStatus {
    guard(|| {
        let t = handle(table, "table")?;
        let out = out_arg(out, "out")?;
        let ids: Vec<String> = if measures.is_null() {
            t.inner.measures().into_iter().collect()
        } else {
            str_arg(measures, "measures")?.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
        };
        give(out, CgMtmm { inner: build_mtmm(&t.inner, &ids)? });
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cg_mtmm_free(report: *mut CgMtmm) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

#[no_mangle]
pub unsafe extern "C" fn cg_mtmm_size(report: *const CgMtmm, out: *mut usize) -> CgStatus {
    guard(|| {
        *out_arg(out, "out")? = handle(report, "report")?.inner.measure_ids.len();
        Ok(())
    })
}

/// Cell (i, j). An undefined diagonal consistency yields `CG_STATUS_UNDEFINED`.
#[no_mangle]
pub unsafe extern "C" fn cg_mtmm_get(report: *const CgMtmm, i: usize, j: usize, out: *mut f64) -> CgStatus {
    guard(|| {
        let r = &handle(report, "report")?.inner;
        let out = out_arg(out, "out")?;
        let n = r.measure_ids.len();
        if i >= n || j >= n {
            return Err(Error::IndexOutOfRange { index: i.max(j), limit: n }.into());
        }
        *out = r.matrix[i][j].ok_or_else(|| Fail(CgStatus::Undefined, format!("cell ({i}, {j}) is undefined")))?;
        Ok(())
    })
}

/// Runs the pipeline described by a TOML config file. `complete` receives
/// whether every cell was scored and the MTMM table was written.
#[no_mangle]
pub unsafe extern "C" fn cg_run_pipeline(config_path: *const c_char, complete: *mut bool) -> CgStatus {
    guard(|| {
        let complete = out_arg(complete, "complete")?;
        let path = Path::new(str_arg(config_path, "config_path")?);
        let cfg = PipelineConfig::resolve(Some(path), ConfigOverrides::default())?;
        *complete = run_pipeline(&cfg, RunOptions::default())?.complete;
        Ok(())
    })
}
