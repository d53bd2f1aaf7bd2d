use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::measure::Side;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub concept_id: String,
    pub measure_id: String,
    pub batch_id: usize,
    pub run_id: String,
    pub score: f64,
}

impl ScoreRow {
    fn key(&self) -> (String, String, usize, String) {
        (self.concept_id.clone(), self.measure_id.clone(), self.batch_id, self.run_id.clone())
    }
}

/// Scores keyed by (concept, measure, batch, run); every score finite.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    rows: BTreeMap<(String, String, usize, String), f64>,
}

impl ScoreTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, row: ScoreRow) -> Result<()> {
        if !row.score.is_finite() {
            return Err(Error::Parse(format!(
                "non-finite score for concept {} measure {} batch {}",
                row.concept_id, row.measure_id, row.batch_id
            )));
        }
        let key = row.key();
        if self.rows.contains_key(&key) {
            return Err(Error::Parse(format!(
                "duplicate score for concept {} measure {} batch {} run {}",
                key.0, key.1, key.2, key.3
            )));
        }
        self.rows.insert(key, row.score);
        Ok(())
    }

    pub fn from_rows<I: IntoIterator<Item = ScoreRow>>(rows: I) -> Result<Self> {
        let mut t = Self::new();
        for r in rows {
            t.insert(r)?;
        }
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows ordered by concept, measure, batch, run.
    pub fn rows(&self) -> impl Iterator<Item = ScoreRow> + '_ {
        self.rows.iter().map(|((c, m, b, r), &score)| ScoreRow {
            concept_id: c.clone(),
            measure_id: m.clone(),
            batch_id: *b,
            run_id: r.clone(),
            score,
        })
    }

    pub fn get(&self, concept: &str, measure: &str, batch: usize, run: &str) -> Option<f64> {
        self.rows.get(&(concept.to_string(), measure.to_string(), batch, run.to_string())).copied()
    }

    pub fn concepts(&self) -> BTreeSet<String> {
        self.rows.keys().map(|k| k.0.clone()).collect()
    }

    pub fn measures(&self) -> BTreeSet<String> {
        self.rows.keys().map(|k| k.1.clone()).collect()
    }

    pub fn batches(&self) -> BTreeSet<usize> {
        self.rows.keys().map(|k| k.2).collect()
    }

    pub fn runs(&self) -> BTreeSet<String> {
        self.rows.keys().map(|k| k.3.clone()).collect()
    }

    pub fn for_run(&self, run: &str) -> ScoreTable {
        ScoreTable { rows: self.rows.iter().filter(|(k, _)| k.3 == run).map(|(k, v)| (k.clone(), *v)).collect() }
    }

    /// The table's only run id; an error if it holds zero or several runs.
    pub fn single_run(&self) -> Result<String> {
        let runs = self.runs();
        match runs.len() {
            0 => Err(Error::Empty("score table".into())),
            1 => Ok(runs.into_iter().next().expect("one run")),
            _ => Err(Error::Precondition(format!("score table holds several runs: {runs:?}"))),
        }
    }

    /// Per-concept mean over batches for one measure within one run.
    pub fn batch_means(&self, measure: &str, run: &str) -> BTreeMap<String, f64> {
        let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for ((c, m, _, r), &s) in &self.rows {
            if m == measure && r == run {
                let e = acc.entry(c.clone()).or_default();
                e.0 += s;
                e.1 += 1;
            }
        }
        acc.into_iter().map(|(c, (s, n))| (c, s / n as f64)).collect()
    }

    pub fn read_ndjson<R: BufRead>(reader: R) -> Result<Self> {
        let mut t = Self::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: ScoreRow =
                serde_json::from_str(&line).map_err(|e| Error::Parse(format!("score line {}: {e}", i + 1)))?;
            t.insert(row)?;
        }
        Ok(t)
    }

    pub fn write_ndjson<W: Write>(&self, mut w: W) -> Result<()> {
        for row in self.rows() {
            serde_json::to_writer(&mut w, &row)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut t = Self::new();
        for row in csv::Reader::from_reader(reader).deserialize() {
            t.insert(row?)?;
        }
        Ok(t)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for row in self.rows() {
            out.serialize(row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// One human rating of a concept's pattern, on a 1–5 scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionRating {
    pub concept_id: String,
    pub rater_id: String,
    pub side: Side,
    pub score: u8,
}

/// Reads `concept_id,rater_id,side,score` rows.
pub fn read_criterion_csv<R: Read>(reader: R) -> Result<Vec<CriterionRating>> {
    let mut rd = csv::Reader::from_reader(reader);
    let headers = rd.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["concept_id", "rater_id", "side", "score"] {
        return Err(Error::Parse(format!("criterion header must be concept_id,rater_id,side,score, got {}", headers.iter().collect::<Vec<_>>().join(","))));
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, row) in rd.deserialize().enumerate() {
        let r: CriterionRating = row.map_err(|e| Error::Parse(format!("criterion row {}: {e}", i + 1)))?;
        if !(1..=5).contains(&r.score) {
            return Err(Error::Parse(format!("criterion row {}: score {} outside 1-5", i + 1, r.score)));
        }
        if !seen.insert((r.concept_id.clone(), r.rater_id.clone(), r.side)) {
            return Err(Error::Parse(format!("criterion row {}: duplicate rating", i + 1)));
        }
        out.push(r);
    }
    Ok(out)
}

/// Ratings of one side, as rater → concept → score.
pub fn ratings_by_rater(ratings: &[CriterionRating], side: Side) -> BTreeMap<String, BTreeMap<String, f64>> {
    let mut out: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for r in ratings.iter().filter(|r| r.side == side) {
        out.entry(r.rater_id.clone()).or_default().insert(r.concept_id.clone(), f64::from(r.score));
    }
    out
}

/// Mean rating per concept over raters, for one side.
pub fn criterion_means(ratings: &[CriterionRating], side: Side) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in ratings.iter().filter(|r| r.side == side) {
        let e = acc.entry(r.concept_id.clone()).or_default();
        e.0 += f64::from(r.score);
        e.1 += 1;
    }
    acc.into_iter().map(|(c, (s, n))| (c, s / n as f64)).collect()
}
