use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::BackendSpec;
use crate::faithfulness::{FaithfulnessConfig, Weighting};
use crate::measure::Measure;
use crate::perturbation::{PenaltyConfig, Solver};
use crate::readability::ReadabilityConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatchShape {
    pub n_batches: usize,
    pub sentences_per_batch: usize,
    pub tokens_per_sentence: usize,
}

impl Default for BatchShape {
    fn default() -> Self {
        Self { n_batches: 2, sentences_per_batch: 32, tokens_per_sentence: 64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SolverChoice {
    #[default]
    ClosedForm,
    Numeric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaithfulnessOptions {
    pub weighting: Weighting,
    pub relative_step: f64,
    pub solver: SolverChoice,
}

impl Default for FaithfulnessOptions {
    fn default() -> Self {
        let d = FaithfulnessConfig::default();
        Self { weighting: d.weighting, relative_step: d.relative_step, solver: SolverChoice::ClosedForm }
    }
}

impl FaithfulnessOptions {
    pub fn to_config(self) -> FaithfulnessConfig {
        FaithfulnessConfig {
            weighting: self.weighting,
            relative_step: self.relative_step,
            solver: match self.solver {
                SolverChoice::ClosedForm => Solver::ClosedForm,
                SolverChoice::Numeric => Solver::Numeric(PenaltyConfig::default()),
            },
        }
    }
}

fn default_measures() -> Vec<Measure> {
    Measure::all()
}

/// Everything a run depends on. Relative paths in a config file are
/// resolved against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub backend: BackendSpec,
    pub corpus: PathBuf,
    pub concepts: PathBuf,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_run_id")]
    pub run_id: String,
    #[serde(default = "default_measures")]
    pub measures: Vec<Measure>,
    #[serde(default)]
    pub batch: BatchShape,
    #[serde(default)]
    pub faithfulness: FaithfulnessOptions,
    #[serde(default)]
    pub readability: ReadabilityConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_run_id() -> String {
    "run".to_string()
}

/// Values given on the command line; each one that is set wins over the
/// config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigOverrides {
    pub backend: Option<BackendSpec>,
    pub corpus: Option<PathBuf>,
    pub concepts: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub measures: Option<Vec<Measure>>,
    pub run_id: Option<String>,
}

/// The subset of a config file that may leave required fields open, so
/// that flags can supply them.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialConfig {
    backend: Option<BackendSpec>,
    corpus: Option<PathBuf>,
    concepts: Option<PathBuf>,
    out: Option<PathBuf>,
    run_id: Option<String>,
    measures: Option<Vec<Measure>>,
    #[serde(default)]
    batch: BatchShape,
    #[serde(default)]
    faithfulness: FaithfulnessOptions,
    #[serde(default)]
    readability: ReadabilityConfig,
}

impl PipelineConfig {
    /// Merges defaults, an optional TOML file and command-line overrides,
    /// in increasing order of precedence, then validates the result.
    pub fn resolve(file: Option<&Path>, overrides: ConfigOverrides) -> Result<Self> {
        let partial = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let mut p: PartialConfig =
                    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                let base = path.parent().unwrap_or(Path::new(""));
                for field in [&mut p.corpus, &mut p.concepts, &mut p.out].into_iter().flatten() {
                    if field.is_relative() {
                        *field = base.join(&*field);
                    }
                }
                p
            }
            None => PartialConfig::default(),
        };
        let require = |v: Option<PathBuf>, name: &str| v.ok_or_else(|| Error::Config(format!("no {name} given")));
        let cfg = PipelineConfig {
            backend: overrides
                .backend
                .or(partial.backend)
                .ok_or_else(|| Error::Config("no backend given".into()))?,
            corpus: require(overrides.corpus.or(partial.corpus), "corpus")?,
            concepts: require(overrides.concepts.or(partial.concepts), "concept file")?,
            out: overrides.out.or(partial.out).unwrap_or_else(default_out),
            run_id: overrides.run_id.or(partial.run_id).unwrap_or_else(default_run_id),
            measures: overrides.measures.or(partial.measures).unwrap_or_else(default_measures),
            batch: partial.batch,
            faithfulness: partial.faithfulness,
            readability: partial.readability,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.batch;
        if b.n_batches == 0 || b.sentences_per_batch == 0 || b.tokens_per_sentence < 2 {
            return Err(Error::Config(format!(
                "batch shape must be positive with at least 2 tokens per sentence, got {b:?}"
            )));
        }
        if self.measures.is_empty() {
            return Err(Error::Config("empty measure list".into()));
        }
        for (i, m) in self.measures.iter().enumerate() {
            if self.measures[..i].contains(m) {
                return Err(Error::Config(format!("measure {m} listed twice")));
            }
        }
        if self.run_id.is_empty() || !self.run_id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
            return Err(Error::Config(format!("run id {:?} must be non-empty and use only [A-Za-z0-9._-]", self.run_id)));
        }
        let r = self.faithfulness.relative_step;
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::Config(format!("relative step must be positive, got {r}")));
        }
        self.readability.validate()
    }

    /// Hash of everything that determines the results: the config without
    /// the output directory, plus the contents of the corpus and concept
    /// files.
    pub fn fingerprint(&self) -> Result<String> {
        let mut hasher = Sha256::new();
        let mut scoped = self.clone();
        scoped.out = PathBuf::new();
        scoped.corpus = PathBuf::new();
        scoped.concepts = PathBuf::new();
        hasher.update(serde_json::to_vec(&scoped)?);
        for path in [&self.corpus, &self.concepts] {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            hasher.update(Sha256::digest(&bytes));
        }
        Ok(hex::encode(hasher.finalize()))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out.join(&self.run_id)
    }
}
