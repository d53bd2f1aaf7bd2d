//! Configuration, batch orchestration, score persistence and reports.

mod config;
mod corpus;
mod report;
mod run;

pub use config::{BatchShape, ConfigOverrides, FaithfulnessOptions, PipelineConfig, SolverChoice};
pub use corpus::{load_corpus, make_batches, read_corpus, write_corpus, Document};
pub use report::{
    concept_means, concurrent_report, load_scores, reliability_report, summary_report, write_report, ConcurrentReport,
    ConcurrentRow, ReliabilityRow, ReportInputs, ReportKind, SummaryRow,
};
pub use run::{
    file_stem, pattern_path, run_pipeline, run_prepared, thread_pool, workers_from_env, write_patterns, CellRecord,
    Failures, Manifest, Prepared, RunOptions, RunSummary, UnitFailure, FAILURES, FAITHFULNESS, MANIFEST, MTMM_CSV,
    MTMM_JSON, PATTERNS, SCORES_CSV, SCORES_LOG,
};
