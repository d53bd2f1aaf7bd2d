use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::corpus::{load_corpus, make_batches};
use crate::backend::{open_backend, Backend, BackendInfo, BackendSpec, ForwardPass, TokenId};
use crate::concept::{load_concepts, Concept};
use crate::faithfulness::{self, aggregate, FaithfulnessResult};
use crate::linalg::Matrix;
use crate::measure::{FaithfulnessMeasure, Measure, ReadabilityMeasure};
use crate::meta_eval::{build_mtmm, MtmmReport, ScoreRow, ScoreTable};
use crate::readability::{self, vocabulary_embeddings, TokenPattern};
use crate::{Error, Result};

pub const SCORES_LOG: &str = "scores.ndjson";
pub const SCORES_CSV: &str = "scores.csv";
pub const FAITHFULNESS: &str = "faithfulness.ndjson";
pub const FAILURES: &str = "failures.json";
pub const MTMM_CSV: &str = "mtmm.csv";
pub const MTMM_JSON: &str = "mtmm.json";
pub const MANIFEST: &str = "manifest.json";
pub const PATTERNS: &str = "patterns";

/// One line of the append-only score log. `score` is `None` when the cell
/// is undefined (no weighted token, or a pattern with fewer than two
/// tokens).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub concept_id: String,
    pub measure_id: String,
    pub batch_id: usize,
    pub run_id: String,
    pub score: Option<f64>,
    /// Tokens contributing to a faithfulness score.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub token_count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitFailure {
    pub concept_id: String,
    pub batch_id: usize,
    pub measures: Vec<String>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failures {
    pub failed_units: Vec<UnitFailure>,
    pub undefined_cells: Vec<String>,
    pub mtmm_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub run_id: String,
    pub config_hash: String,
    pub backend_spec: BackendSpec,
    pub backend: BackendInfo,
    pub backend_seed: Option<u64>,
    pub corpus: PathBuf,
    pub concepts: PathBuf,
    pub measures: Vec<Measure>,
    pub n_concepts: usize,
    pub n_batches: usize,
    pub units_total: usize,
    pub units_done: usize,
    pub complete: bool,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
}

/// Execution knobs that do not affect results.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads; `None` uses the `CONCEPT_GAUGE_WORKERS` variable or
    /// all cores.
    pub workers: Option<usize>,
    /// Stop after computing this many units, leaving the run resumable.
    pub max_units: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub table: ScoreTable,
    pub units_total: usize,
    pub units_resumed: usize,
    pub units_computed: usize,
    pub failures: Failures,
    pub mtmm: Option<MtmmReport>,
    pub complete: bool,
}

/// Workers requested through `CONCEPT_GAUGE_WORKERS`, if set.
pub fn workers_from_env() -> Result<Option<usize>> {
    match std::env::var("CONCEPT_GAUGE_WORKERS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!("CONCEPT_GAUGE_WORKERS must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(None),
    }
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// File-name-safe form of a concept id.
pub fn file_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect()
}

pub fn pattern_path(run_dir: &Path, concept_id: &str, pattern: &TokenPattern, batch: usize) -> PathBuf {
    let side = match pattern.side() {
        crate::measure::Side::Input => "input",
        crate::measure::Side::Output => "output",
    };
    run_dir.join(PATTERNS).join(format!("{}.{side}.b{batch}.json", file_stem(concept_id)))
}

/// Everything loaded and checked before any scoring starts.
pub struct Prepared {
    pub config: PipelineConfig,
    pub backend: Box<dyn Backend>,
    pub concepts: Vec<Concept>,
    pub batches: Vec<Vec<Vec<TokenId>>>,
}

impl Prepared {
    /// Loads inputs and opens the backend. Input problems are configuration
    /// errors; failing to reach the model is a backend error.
    pub fn load(config: &PipelineConfig) -> Result<Self> {
        config.validate()?;
        let concepts = load_concepts(&config.concepts).map_err(|e| Error::Config(format!("{}: {e}", config.concepts.display())))?;
        let docs = load_corpus(&config.corpus).map_err(|e| Error::Config(format!("{}: {e}", config.corpus.display())))?;
        let batches = make_batches(&docs, &config.batch)?;
        let backend = open_backend(&config.backend).map_err(|e| match e {
            Error::Backend(_) => e,
            other => Error::Backend(other.to_string()),
        })?;
        Self::with_backend(config, backend, concepts, batches)
    }

    pub fn with_backend(
        config: &PipelineConfig,
        backend: Box<dyn Backend>,
        concepts: Vec<Concept>,
        batches: Vec<Vec<Vec<TokenId>>>,
    ) -> Result<Self> {
        let info = backend.info().clone();
        info.validate()?;
        if concepts.is_empty() {
            return Err(Error::Config("concept file holds no concepts".into()));
        }
        let concepts = concepts
            .into_iter()
            .map(|c| {
                let id = c.id().to_string();
                c.with_hidden_width(info.hidden_width).map_err(|e| Error::Config(format!("concept {id}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut stems = BTreeSet::new();
        for c in &concepts {
            if !stems.insert(file_stem(c.id())) {
                return Err(Error::Config(format!("concept ids collide after sanitising: {}", c.id())));
            }
        }
        if config.batch.tokens_per_sentence > info.max_length {
            return Err(Error::Config(format!(
                "tokens per sentence {} exceed the backend's maximum length {}",
                config.batch.tokens_per_sentence, info.max_length
            )));
        }
        if let Some(bad) = batches.iter().flatten().flatten().find(|&&t| t as usize >= info.vocab_size) {
            return Err(Error::Config(format!("corpus token {bad} outside the vocabulary of size {}", info.vocab_size)));
        }
        if config.readability.baseline_token as usize >= info.vocab_size {
            return Err(Error::Config("baseline token outside the vocabulary".into()));
        }
        Ok(Self { config: config.clone(), backend, concepts, batches })
    }

    pub fn forward_all(&self, pool: &rayon::ThreadPool) -> Result<Vec<Vec<ForwardPass>>> {
        let backend = self.backend.as_ref();
        pool.install(|| {
            self.batches
                .iter()
                .map(|b| b.par_iter().map(|s| backend.forward(s)).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()
        })
        .map_err(|e| match e {
            Error::Backend(_) => e,
            other => Error::Backend(other.to_string()),
        })
    }
}

pub fn thread_pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let n = match workers {
        Some(n) => n,
        None => workers_from_env()?.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    };
    rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build().map_err(|e| Error::Config(e.to_string()))
}

struct Context<'a> {
    prepared: &'a Prepared,
    passes: &'a [Vec<ForwardPass>],
    embeddings: Option<&'a Matrix>,
    faith: Vec<FaithfulnessMeasure>,
    read: Vec<ReadabilityMeasure>,
    faith_cfg: faithfulness::FaithfulnessConfig,
}

struct UnitOutput {
    records: Vec<CellRecord>,
    patterns: Vec<(PathBuf, String)>,
}

impl Context<'_> {
    fn compute(&self, run_dir: &Path, c: usize, b: usize) -> Result<UnitOutput> {
        let cfg = &self.prepared.config;
        let concept = &self.prepared.concepts[c];
        let backend = self.prepared.backend.as_ref();
        let batch = &self.passes[b];
        let faith = faithfulness::evaluate_batch(concept, batch, &self.faith, backend, &self.faith_cfg)?;
        let mut patterns = Vec::new();
        let read = if self.read.is_empty() {
            Vec::new()
        } else {
            let e = self.embeddings.expect("embeddings loaded for readability measures");
            let r = readability::evaluate_batch(concept, batch, &self.read, backend, e, &cfg.readability)?;
            for p in [r.input.as_ref(), r.output.as_ref()].into_iter().flatten() {
                let mut text = serde_json::to_string_pretty(&p.to_file(concept.id()))?;
                text.push('\n');
                patterns.push((pattern_path(run_dir, concept.id(), p, b), text));
            }
            r.scores
        };
        let records = cfg
            .measures
            .iter()
            .map(|m| {
                let (score, token_count) = match m {
                    Measure::Faithfulness(f) => {
                        let s = faith[self.faith.iter().position(|x| x == f).expect("measure split")];
                        (s.score, Some(s.token_count))
                    }
                    Measure::Readability(r) => (read[self.read.iter().position(|x| x == r).expect("measure split")], None),
                };
                CellRecord {
                    concept_id: concept.id().to_string(),
                    measure_id: m.to_string(),
                    batch_id: b,
                    run_id: cfg.run_id.clone(),
                    score,
                    token_count,
                }
            })
            .collect();
        Ok(UnitOutput { records, patterns })
    }
}

/// Reads the score log, dropping a trailing partial line and any unit that
/// is missing measures, and rewrites the file to the kept records.
fn recover_log(path: &Path, measures: &[Measure]) -> Result<Vec<CellRecord>> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let complete_len = bytes.iter().rposition(|&c| c == b'\n').map_or(0, |i| i + 1);
    let text = std::str::from_utf8(&bytes[..complete_len]).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let r: CellRecord =
            serde_json::from_str(line).map_err(|e| Error::Parse(format!("{} line {}: {e}", path.display(), i + 1)))?;
        records.push(r);
    }
    let wanted: BTreeSet<String> = measures.iter().map(ToString::to_string).collect();
    let mut per_unit: BTreeMap<(String, usize), BTreeSet<String>> = BTreeMap::new();
    for r in &records {
        per_unit.entry((r.concept_id.clone(), r.batch_id)).or_default().insert(r.measure_id.clone());
    }
    let kept: Vec<CellRecord> = records
        .iter()
        .filter(|r| per_unit[&(r.concept_id.clone(), r.batch_id)] == wanted)
        .cloned()
        .collect();
    if kept.len() != records.len() || complete_len != bytes.len() {
        let tmp = path.with_extension("ndjson.tmp");
        let mut f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        for r in &kept {
            serde_json::to_writer(&mut f, r)?;
            f.write_all(b"\n")?;
        }
        f.sync_all()?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    }
    Ok(kept)
}

/// Runs every (concept, batch) unit for the configured measures.
///
/// Results land in `<out>/<run_id>/`. A run directory that already exists
/// with the same configuration is resumed: finished units are kept and only
/// the rest are computed. Records are written by a single writer in
/// (concept, batch) order, so an uninterrupted run is byte-reproducible.
pub fn run_pipeline(config: &PipelineConfig, options: RunOptions) -> Result<RunSummary> {
    let prepared = Prepared::load(config)?;
    run_prepared(&prepared, options)
}

pub fn run_prepared(prepared: &Prepared, options: RunOptions) -> Result<RunSummary> {
    let cfg = &prepared.config;
    let run_dir = cfg.run_dir();
    let hash = cfg.fingerprint()?;
    let manifest_path = run_dir.join(MANIFEST);
    if manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let old: Manifest = serde_json::from_str(&text)?;
        if old.config_hash != hash {
            return Err(Error::Config(format!(
                "run id {:?} already exists in {} with a different configuration",
                cfg.run_id,
                cfg.out.display()
            )));
        }
    }
    fs::create_dir_all(run_dir.join(PATTERNS)).map_err(|e| Error::io(&run_dir, e))?;

    let info = prepared.backend.info().clone();
    let n_concepts = prepared.concepts.len();
    let n_batches = prepared.batches.len();
    let units_total = n_concepts * n_batches;
    let mut manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        run_id: cfg.run_id.clone(),
        config_hash: hash,
        backend_spec: cfg.backend.clone(),
        backend: info,
        backend_seed: match cfg.backend {
            BackendSpec::Toy { seed } => Some(seed),
            _ => None,
        },
        corpus: cfg.corpus.clone(),
        concepts: cfg.concepts.clone(),
        measures: cfg.measures.clone(),
        n_concepts,
        n_batches,
        units_total,
        units_done: 0,
        complete: false,
        started_unix: now_unix(),
        finished_unix: None,
    };
    write_json(&manifest_path, &manifest)?;

    let log_path = run_dir.join(SCORES_LOG);
    let mut records = recover_log(&log_path, &cfg.measures)?;
    let done: BTreeSet<(String, usize)> = records.iter().map(|r| (r.concept_id.clone(), r.batch_id)).collect();
    let units_resumed = done.len();

    let pool = thread_pool(options.workers)?;
    let passes = prepared.forward_all(&pool)?;
    let read: Vec<ReadabilityMeasure> = cfg
        .measures
        .iter()
        .filter_map(|m| match m {
            Measure::Readability(r) => Some(*r),
            Measure::Faithfulness(_) => None,
        })
        .collect();
    let embeddings = if read.is_empty() {
        None
    } else {
        Some(vocabulary_embeddings(prepared.backend.as_ref()).map_err(|e| Error::Backend(e.to_string()))?)
    };
    let ctx = Context {
        prepared,
        passes: &passes,
        embeddings: embeddings.as_ref(),
        faith: cfg
            .measures
            .iter()
            .filter_map(|m| match m {
                Measure::Faithfulness(f) => Some(*f),
                Measure::Readability(_) => None,
            })
            .collect(),
        read,
        faith_cfg: cfg.faithfulness.to_config(),
    };

    let mut todo: Vec<(usize, usize)> = (0..n_concepts)
        .flat_map(|c| (0..n_batches).map(move |b| (c, b)))
        .filter(|&(c, b)| !done.contains(&(prepared.concepts[c].id().to_string(), b)))
        .collect();
    if let Some(max) = options.max_units {
        todo.truncate(max);
    }

    let mut log = OpenOptions::new().create(true).append(true).open(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut failed_units = Vec::new();
    let mut computed = 0;
    let chunk = pool.current_num_threads() * 2;
    for units in todo.chunks(chunk.max(1)) {
        let outputs: Vec<Result<UnitOutput>> =
            pool.install(|| units.par_iter().map(|&(c, b)| ctx.compute(&run_dir, c, b)).collect());
        for (&(c, b), out) in units.iter().zip(outputs) {
            match out {
                Ok(out) => {
                    for (path, text) in &out.patterns {
                        fs::write(path, text).map_err(|e| Error::io(path, e))?;
                    }
                    let mut buf = Vec::new();
                    for r in &out.records {
                        serde_json::to_writer(&mut buf, r)?;
                        buf.push(b'\n');
                    }
                    log.write_all(&buf).map_err(|e| Error::io(&log_path, e))?;
                    log.flush()?;
                    records.extend(out.records);
                    computed += 1;
                }
                Err(e) => {
                    let concept = &prepared.concepts[c];
                    log::error!("concept {} batch {b}: {e}", concept.id());
                    failed_units.push(UnitFailure {
                        concept_id: concept.id().to_string(),
                        batch_id: b,
                        measures: cfg.measures.iter().map(ToString::to_string).collect(),
                        error: e.to_string(),
                    });
                }
            }
        }
    }
    drop(log);

    finish(prepared, &run_dir, records, failed_units, units_resumed, computed, manifest_path, &mut manifest)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    prepared: &Prepared,
    run_dir: &Path,
    mut records: Vec<CellRecord>,
    failed_units: Vec<UnitFailure>,
    units_resumed: usize,
    units_computed: usize,
    manifest_path: PathBuf,
    manifest: &mut Manifest,
) -> Result<RunSummary> {
    let cfg = &prepared.config;
    let concept_order: BTreeMap<&str, usize> = prepared.concepts.iter().enumerate().map(|(i, c)| (c.id(), i)).collect();
    let measure_order: BTreeMap<String, usize> = cfg.measures.iter().enumerate().map(|(i, m)| (m.to_string(), i)).collect();
    records.sort_by_key(|r| (concept_order[r.concept_id.as_str()], r.batch_id, measure_order[&r.measure_id]));

    let table = ScoreTable::from_rows(records.iter().filter_map(|r| {
        r.score.map(|score| ScoreRow {
            concept_id: r.concept_id.clone(),
            measure_id: r.measure_id.clone(),
            batch_id: r.batch_id,
            run_id: r.run_id.clone(),
            score,
        })
    }))?;
    let csv_path = run_dir.join(SCORES_CSV);
    table.write_csv(File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?)?;

    let undefined_cells: Vec<String> = records
        .iter()
        .filter(|r| r.score.is_none())
        .map(|r| format!("concept={} measure={} batch={}", r.concept_id, r.measure_id, r.batch_id))
        .collect();

    // aggregated faithfulness per concept and measure, over batches present
    let faith_path = run_dir.join(FAITHFULNESS);
    let mut faith_out = Vec::new();
    for concept in &prepared.concepts {
        for m in &cfg.measures {
            let Measure::Faithfulness(f) = m else { continue };
            let cells: Vec<&CellRecord> =
                records.iter().filter(|r| r.concept_id == concept.id() && r.measure_id == m.to_string()).collect();
            if cells.len() != prepared.batches.len() {
                continue;
            }
            let per_batch: Vec<f64> = cells.iter().filter_map(|r| r.score).collect();
            let skipped: Vec<usize> = cells.iter().filter(|r| r.score.is_none()).map(|r| r.batch_id).collect();
            let tokens = cells.iter().filter_map(|r| r.token_count).sum();
            if let Ok(result) = aggregate(concept.id(), *f, per_batch, skipped, tokens) {
                let result: FaithfulnessResult = result;
                serde_json::to_writer(&mut faith_out, &result)?;
                faith_out.push(b'\n');
            }
        }
    }
    fs::write(&faith_path, faith_out).map_err(|e| Error::io(&faith_path, e))?;

    let measure_ids: Vec<String> = cfg.measures.iter().map(ToString::to_string).collect();
    let (mtmm, mtmm_error) = if failed_units.is_empty() && undefined_cells.is_empty() {
        match build_mtmm(&table, &measure_ids) {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, Some("score table incomplete; see failed_units and undefined_cells".to_string()))
    };
    for name in [MTMM_CSV, MTMM_JSON] {
        let p = run_dir.join(name);
        if p.exists() {
            fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
        }
    }
    if let Some(r) = &mtmm {
        let p = run_dir.join(MTMM_CSV);
        r.write_csv(File::create(&p).map_err(|e| Error::io(&p, e))?)?;
        write_json(&run_dir.join(MTMM_JSON), r)?;
    }

    let failures = Failures { failed_units, undefined_cells, mtmm_error };
    write_json(&run_dir.join(FAILURES), &failures)?;

    let done: BTreeSet<(&str, usize)> = records.iter().map(|r| (r.concept_id.as_str(), r.batch_id)).collect();
    let complete = mtmm.is_some();
    manifest.units_done = done.len();
    manifest.complete = complete;
    manifest.finished_unix = Some(now_unix());
    write_json(&manifest_path, manifest)?;

    Ok(RunSummary {
        run_dir: run_dir.to_path_buf(),
        table,
        units_total: manifest.units_total,
        units_resumed,
        units_computed,
        failures,
        mtmm,
        complete,
    })
}

/// Extracts and writes both patterns of every concept on every batch,
/// without scoring. Returns the files written.
pub fn write_patterns(prepared: &Prepared, options: RunOptions) -> Result<Vec<PathBuf>> {
    let cfg = &prepared.config;
    let run_dir = cfg.run_dir();
    fs::create_dir_all(run_dir.join(PATTERNS)).map_err(|e| Error::io(&run_dir, e))?;
    let pool = thread_pool(options.workers)?;
    let passes = prepared.forward_all(&pool)?;
    let backend = prepared.backend.as_ref();
    let units: Vec<(usize, usize)> =
        (0..prepared.concepts.len()).flat_map(|c| (0..passes.len()).map(move |b| (c, b))).collect();
    let patterns: Vec<Result<Vec<(PathBuf, String)>>> = pool.install(|| {
        units
            .par_iter()
            .map(|&(c, b)| {
                let concept = &prepared.concepts[c];
                let input = readability::extract_input_pattern(concept, &passes[b], backend, &cfg.readability)?;
                let output = readability::extract_output_pattern(concept, &passes[b], backend, &cfg.readability)?;
                [input, output]
                    .iter()
                    .map(|p| {
                        let mut text = serde_json::to_string_pretty(&p.to_file(concept.id()))?;
                        text.push('\n');
                        Ok((pattern_path(&run_dir, concept.id(), p, b), text))
                    })
                    .collect()
            })
            .collect()
    });
    let mut written = Vec::new();
    for unit in patterns {
        for (path, text) in unit? {
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}
