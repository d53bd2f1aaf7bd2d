use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::measure::Side;
use crate::meta_eval::{
    build_mtmm, concurrent_validity, criterion_means, cronbach_alpha, inter_rater, pearson, ratings_by_rater,
    CriterionRating, InterRater, ScoreTable, RELIABILITY_THRESHOLD,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportKind {
    Reliability,
    Mtmm,
    Concurrent,
    Summary,
}

impl FromStr for ReportKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reliability" => Ok(ReportKind::Reliability),
            "mtmm" => Ok(ReportKind::Mtmm),
            "concurrent" => Ok(ReportKind::Concurrent),
            "summary" => Ok(ReportKind::Summary),
            _ => Err(Error::Config(format!("unknown report kind `{s}`; use reliability, mtmm, concurrent or summary"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReliabilityRow {
    pub measure_id: String,
    /// Cronbach's alpha across batches, on the first run.
    pub subset_consistency: Option<f64>,
    /// Pearson correlation of concept means between the first two runs.
    pub test_retest: Option<f64>,
    /// Some defined reliability value is below the threshold.
    pub below_threshold: bool,
}

fn defined(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Undefined(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn require_rows(table: &ScoreTable) -> Result<()> {
    if table.is_empty() {
        return Err(Error::Empty("score table".into()));
    }
    Ok(())
}

/// Subset consistency per measure, and test-retest when the table holds
/// at least two runs.
pub fn reliability_report(table: &ScoreTable) -> Result<Vec<ReliabilityRow>> {
    require_rows(table)?;
    let runs: Vec<String> = table.runs().into_iter().collect();
    let first = table.for_run(&runs[0]);
    let concepts: Vec<String> = first.concepts().into_iter().collect();
    let batches: Vec<usize> = first.batches().into_iter().collect();
    let mut out = Vec::new();
    for m in table.measures() {
        let mut missing = Vec::new();
        let subsets: Vec<Vec<f64>> = batches
            .iter()
            .map(|&b| {
                concepts
                    .iter()
                    .map(|c| {
                        first.get(c, &m, b, &runs[0]).unwrap_or_else(|| {
                            missing.push(format!("concept={c} measure={m} batch={b} run={}", runs[0]));
                            f64::NAN
                        })
                    })
                    .collect()
            })
            .collect();
        if !missing.is_empty() {
            return Err(Error::Incomplete(missing));
        }
        let alpha = if batches.len() >= 2 { defined(cronbach_alpha(&subsets))? } else { None };
        let retest = if runs.len() >= 2 {
            let a = table.batch_means(&m, &runs[0]);
            let b = table.batch_means(&m, &runs[1]);
            if a.keys().ne(b.keys()) {
                return Err(Error::Precondition(format!("runs {} and {} scored different concepts for {m}", runs[0], runs[1])));
            }
            let x: Vec<f64> = a.into_values().collect();
            let y: Vec<f64> = b.into_values().collect();
            defined(pearson(&x, &y))?
        } else {
            None
        };
        let below_threshold = [alpha, retest].into_iter().flatten().any(|v| v < RELIABILITY_THRESHOLD);
        out.push(ReliabilityRow { measure_id: m, subset_consistency: alpha, test_retest: retest, below_threshold });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub measure_id: String,
    pub n_concepts: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub min: f64,
    pub max: f64,
}

/// Distribution of concept means (over batches) per measure, first run.
pub fn summary_report(table: &ScoreTable) -> Result<Vec<SummaryRow>> {
    require_rows(table)?;
    let run = table.runs().into_iter().next().expect("non-empty table");
    Ok(table
        .measures()
        .into_iter()
        .map(|m| {
            let v: Vec<f64> = table.batch_means(&m, &run).into_values().collect();
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            SummaryRow {
                measure_id: m,
                n_concepts: v.len(),
                mean,
                std_dev: var.sqrt(),
                min: v.iter().copied().fold(f64::INFINITY, f64::min),
                max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcurrentRow {
    pub measure_id: String,
    pub n_concepts: usize,
    pub kendall: Option<f64>,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcurrentReport {
    pub side: Side,
    pub measures: Vec<ConcurrentRow>,
    /// Agreement among the raters themselves; absent with a single rater.
    pub inter_rater: Option<InterRater>,
}

/// Correlation of every measure's concept means with the mean criterion
/// rating of one side.
pub fn concurrent_report(table: &ScoreTable, ratings: &[CriterionRating], side: Side) -> Result<ConcurrentReport> {
    require_rows(table)?;
    let run = table.runs().into_iter().next().expect("non-empty table");
    let criterion = criterion_means(ratings, side);
    if criterion.is_empty() {
        return Err(Error::Empty(format!("criterion ratings for side {side:?}")));
    }
    let measures = table
        .measures()
        .into_iter()
        .map(|m| {
            let v = concurrent_validity(&table.batch_means(&m, &run), &criterion)?;
            Ok(ConcurrentRow { measure_id: m, n_concepts: v.n_concepts, kendall: v.kendall, pearson: v.pearson, spearman: v.spearman })
        })
        .collect::<Result<Vec<_>>>()?;
    let by_rater = ratings_by_rater(ratings, side);
    let inter_rater = if by_rater.len() >= 2 { Some(inter_rater(&by_rater)?) } else { None };
    Ok(ConcurrentReport { side, measures, inter_rater })
}

fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(File::create(path).map_err(|e| Error::io(path, e))?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Inputs a report may need beyond the score table.
#[derive(Debug, Clone, Default)]
pub struct ReportInputs {
    pub criterion: Option<Vec<CriterionRating>>,
    pub side: Option<Side>,
    /// Measures for the MTMM table, in order; all measures when empty.
    pub measures: Vec<String>,
}

/// Writes `<kind>.csv` and `<kind>.json` into `out_dir`.
pub fn write_report(kind: ReportKind, table: &ScoreTable, inputs: &ReportInputs, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let (csv_path, json_path);
    match kind {
        ReportKind::Reliability => {
            let rows = reliability_report(table)?;
            csv_path = out_dir.join("reliability.csv");
            json_path = out_dir.join("reliability.json");
            write_csv_rows(&csv_path, &rows)?;
            #[derive(Serialize)]
            struct Doc<'a> {
                threshold: f64,
                runs: Vec<String>,
                measures: &'a [ReliabilityRow],
            }
            write_json(&json_path, &Doc { threshold: RELIABILITY_THRESHOLD, runs: table.runs().into_iter().collect(), measures: &rows })?;
        }
        ReportKind::Mtmm => {
            require_rows(table)?;
            let run = table.runs().into_iter().next().expect("non-empty table");
            let measures = if inputs.measures.is_empty() { table.measures().into_iter().collect() } else { inputs.measures.clone() };
            let report = build_mtmm(&table.for_run(&run), &measures)?;
            csv_path = out_dir.join("mtmm.csv");
            json_path = out_dir.join("mtmm.json");
            report.write_csv(File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?)?;
            write_json(&json_path, &report)?;
        }
        ReportKind::Concurrent => {
            let ratings = inputs
                .criterion
                .as_ref()
                .ok_or_else(|| Error::Config("the concurrent report needs criterion ratings".into()))?;
            let report = concurrent_report(table, ratings, inputs.side.unwrap_or(Side::Input))?;
            csv_path = out_dir.join("concurrent.csv");
            json_path = out_dir.join("concurrent.json");
            write_csv_rows(&csv_path, &report.measures)?;
            write_json(&json_path, &report)?;
        }
        ReportKind::Summary => {
            let rows = summary_report(table)?;
            csv_path = out_dir.join("summary.csv");
            json_path = out_dir.join("summary.json");
            write_csv_rows(&csv_path, &rows)?;
            write_json(&json_path, &rows)?;
        }
    }
    Ok(vec![csv_path, json_path])
}

/// Loads a score table from CSV or, for `.ndjson`, from score rows.
pub fn load_scores(paths: &[PathBuf]) -> Result<ScoreTable> {
    let mut table = ScoreTable::new();
    for path in paths {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let part = if path.extension().is_some_and(|e| e == "ndjson") {
            ScoreTable::read_ndjson(std::io::BufReader::new(file))?
        } else {
            ScoreTable::read_csv(file)?
        };
        for row in part.rows() {
            table.insert(row)?;
        }
    }
    Ok(table)
}

/// Concept means of a measure keyed by concept, for external use.
pub fn concept_means(table: &ScoreTable, measure: &str) -> Result<BTreeMap<String, f64>> {
    let run = table.single_run()?;
    Ok(table.batch_means(measure, &run))
}
