use std::fs;
use std::io::{self, BufReader};
use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use concept_gauge::backend::{protocol, BackendSpec, ToyConfig, ToyTransformer};
use concept_gauge::concept::concepts_to_json;
use concept_gauge::measure::{Measure, Side};
use concept_gauge::meta_eval::read_criterion_csv;
use concept_gauge::pipeline::{
    load_scores, run_prepared, write_corpus, write_patterns, write_report, ConfigOverrides, PipelineConfig, Prepared,
    ReportInputs, ReportKind, RunOptions,
};
use concept_gauge::synthetic::{synthetic_concepts, synthetic_corpus, CorpusSpec};
use concept_gauge::{Error, Result};

const EXIT_CONFIG: u8 = 2;
const EXIT_BACKEND: u8 = 3;
const EXIT_PARTIAL: u8 = 4;

#[derive(Parser)]
#[command(name = "concept-gauge", version, about = "Score concept explanations of language models and meta-evaluate the scores")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score every concept on every batch with the selected measures.
    Run(RunArgs),
    /// Extract input and output token patterns without scoring.
    Patterns(RunArgs),
    /// Like `run`, restricted to faithfulness measures.
    Faithfulness(RunArgs),
    /// Like `run`, restricted to readability measures.
    Readability(RunArgs),
    /// Write every report the given score tables support.
    Meta(MetaArgs),
    /// Write one report.
    Report(ReportArgs),
    /// Write a seeded synthetic corpus and concept file for a backend.
    Synth(SynthArgs),
    /// Serve the toy model over the activation-exchange protocol.
    #[command(hide = true)]
    ServeToy(ServeArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// toy:<seed>, cmd:<argv> or tcp:<host:port>
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    concepts: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated measure ids, e.g. ABL-Div,IN-UCI
    #[arg(long)]
    measures: Option<String>,
    #[arg(long)]
    run_id: Option<String>,
}

#[derive(Args)]
struct ScoreInputs {
    /// Score tables (scores.csv or scores.ndjson); rows are merged.
    #[arg(long = "scores", required = true, num_args = 1..)]
    scores: Vec<PathBuf>,
    /// Criterion ratings CSV with header concept_id,rater_id,side,score
    #[arg(long)]
    criterion: Option<PathBuf>,
    /// Side of the criterion ratings to compare against.
    #[arg(long, value_parser = parse_side)]
    side: Option<Side>,
    /// Measures for the MTMM table, in order.
    #[arg(long)]
    measures: Option<String>,
    #[arg(long, default_value = "reports")]
    out: PathBuf,
}

#[derive(Args)]
struct MetaArgs {
    #[command(flatten)]
    inputs: ScoreInputs,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, value_parser = |s: &str| s.parse::<ReportKind>().map_err(|e| e.to_string()))]
    kind: ReportKind,
    #[command(flatten)]
    inputs: ScoreInputs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "toy:0")]
    backend: String,
    #[arg(long, default_value_t = 20)]
    n_concepts: usize,
    #[arg(long, default_value_t = 64)]
    n_docs: usize,
    #[arg(long, default_value_t = 64)]
    doc_length: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory receiving corpus.ndjson and concepts.json
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Listen on this address instead of stdin/stdout. The bound address is
    /// printed on the first line of stdout.
    #[arg(long)]
    tcp: Option<String>,
}

fn parse_side(s: &str) -> std::result::Result<Side, String> {
    match s {
        "input" => Ok(Side::Input),
        "output" => Ok(Side::Output),
        _ => Err(format!("side must be input or output, got `{s}`")),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::Parse(_)
        | Error::UnknownMeasure { .. }
        | Error::UnknownConceptKind(_)
        | Error::InvalidConcept { .. }
        | Error::UnsupportedCombination(_)
        | Error::Io { .. } => EXIT_CONFIG,
        Error::Backend(_) => EXIT_BACKEND,
        _ => 1,
    }
}

fn resolve(args: &RunArgs, keep: impl Fn(&Measure) -> bool) -> Result<PipelineConfig> {
    let overrides = ConfigOverrides {
        backend: args.backend.as_deref().map(str::parse).transpose()?,
        corpus: args.corpus.clone(),
        concepts: args.concepts.clone(),
        out: args.out.clone(),
        measures: args.measures.as_deref().map(Measure::parse_list).transpose()?,
        run_id: args.run_id.clone(),
    };
    let mut cfg = PipelineConfig::resolve(args.config.as_deref(), overrides)?;
    cfg.measures.retain(|m| keep(m));
    cfg.validate()?;
    Ok(cfg)
}

fn options() -> Result<RunOptions> {
    Ok(RunOptions { workers: concept_gauge::pipeline::workers_from_env()?, max_units: None })
}

fn score(args: &RunArgs, keep: impl Fn(&Measure) -> bool) -> Result<u8> {
    let cfg = resolve(args, keep)?;
    let prepared = Prepared::load(&cfg)?;
    let summary = run_prepared(&prepared, options()?)?;
    println!(
        "{}: {} of {} units ({} resumed), {} scores",
        summary.run_dir.display(),
        summary.units_resumed + summary.units_computed,
        summary.units_total,
        summary.units_resumed,
        summary.table.len()
    );
    if summary.complete {
        Ok(0)
    } else {
        let f = &summary.failures;
        eprintln!(
            "incomplete: {} failed units, {} undefined cells; see {}",
            f.failed_units.len(),
            f.undefined_cells.len(),
            summary.run_dir.join(concept_gauge::pipeline::FAILURES).display()
        );
        Ok(EXIT_PARTIAL)
    }
}

fn report_inputs(inputs: &ScoreInputs) -> Result<ReportInputs> {
    let criterion = match &inputs.criterion {
        Some(p) => {
            let f = fs::File::open(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            Some(read_criterion_csv(f)?)
        }
        None => None,
    };
    let measures = match &inputs.measures {
        Some(list) => Measure::parse_list(list)?.iter().map(ToString::to_string).collect(),
        None => Vec::new(),
    };
    Ok(ReportInputs { criterion, side: inputs.side, measures })
}

fn print_written(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn serve_toy(args: &ServeArgs) -> Result<u8> {
    let toy = Arc::new(ToyTransformer::new(ToyConfig::with_seed(args.seed)));
    match &args.tcp {
        None => {
            let stdin = io::stdin();
            protocol::serve(toy.as_ref(), stdin.lock(), io::stdout().lock())?;
        }
        Some(addr) => {
            let listener = TcpListener::bind(addr).map_err(|e| Error::Config(format!("cannot bind {addr}: {e}")))?;
            println!("{}", listener.local_addr()?);
            for stream in listener.incoming() {
                let stream = stream?;
                let toy = Arc::clone(&toy);
                std::thread::spawn(move || {
                    let Ok(reader) = stream.try_clone() else { return };
                    if let Err(e) = protocol::serve(toy.as_ref(), BufReader::new(reader), stream) {
                        log::warn!("connection closed: {e}");
                    }
                });
            }
        }
    }
    Ok(0)
}

fn execute(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Run(args) => score(&args, |_| true),
        Command::Faithfulness(args) => score(&args, |m| matches!(m, Measure::Faithfulness(_))),
        Command::Readability(args) => score(&args, |m| matches!(m, Measure::Readability(_))),
        Command::Patterns(args) => {
            let cfg = resolve(&args, |_| true)?;
            let prepared = Prepared::load(&cfg)?;
            let written = write_patterns(&prepared, options()?)?;
            println!("{} pattern files in {}", written.len(), cfg.run_dir().display());
            Ok(0)
        }
        Command::Meta(args) => {
            let table = load_scores(&args.inputs.scores)?;
            let inputs = report_inputs(&args.inputs)?;
            let mut kinds = vec![ReportKind::Summary, ReportKind::Reliability, ReportKind::Mtmm];
            if inputs.criterion.is_some() {
                kinds.push(ReportKind::Concurrent);
            }
            let mut failed = false;
            for kind in kinds {
                match write_report(kind, &table, &inputs, &args.inputs.out) {
                    Ok(paths) => print_written(&paths),
                    Err(e) => {
                        eprintln!("{kind:?} report: {e}");
                        failed = true;
                    }
                }
            }
            Ok(if failed { EXIT_PARTIAL } else { 0 })
        }
        Command::Report(args) => {
            let table = load_scores(&args.inputs.scores)?;
            let inputs = report_inputs(&args.inputs)?;
            print_written(&write_report(args.kind, &table, &inputs, &args.inputs.out)?);
            Ok(0)
        }
        Command::Synth(args) => {
            let spec: BackendSpec = args.backend.parse()?;
            let backend = concept_gauge::backend::open_backend(&spec)?;
            let info = backend.info().clone();
            let docs = synthetic_corpus(&CorpusSpec::new(args.n_docs, args.doc_length, info.vocab_size, args.seed))?;
            let concepts = synthetic_concepts(backend.as_ref(), args.n_concepts, args.seed)?;
            fs::create_dir_all(&args.out).map_err(|e| Error::Config(format!("{}: {e}", args.out.display())))?;
            let corpus_path = args.out.join("corpus.ndjson");
            write_corpus(io::BufWriter::new(fs::File::create(&corpus_path)?), &docs)?;
            let concepts_path = args.out.join("concepts.json");
            fs::write(&concepts_path, concepts_to_json(&concepts)? + "\n")?;
            print_written(&[corpus_path, concepts_path]);
            Ok(0)
        }
        Command::ServeToy(args) => serve_toy(&args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
