mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use concept_gauge::concept::Concept;

const EXE: &str = env!("CARGO_BIN_EXE_concept-gauge");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(EXE).current_dir(dir).args(args).env("CONCEPT_GAUGE_WORKERS", "1").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const CONFIG: &str = "backend = \"toy:0\"\ncorpus = \"corpus.ndjson\"\nconcepts = \"concepts.json\"\nrun_id = \"from-file\"\n[batch]\nn_batches = 2\nsentences_per_batch = 4\ntokens_per_sentence = 16\n";

fn synth(dir: &Path) {
    let o = run(dir, &["synth", "--n-concepts", "4", "--n-docs", "12", "--doc-length", "32", "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    fs::write(dir.join("c.toml"), CONFIG).unwrap();
}

#[test]
fn run_then_reports() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let o = run(dir.path(), &["run", "--config", "c.toml"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let run_dir = dir.path().join("out/from-file");
    assert!(run_dir.join("mtmm.csv").exists());

    let o = run(dir.path(), &["run", "--config", "c.toml", "--run-id", "flagged", "--measures", "ABL-Div,IN-EmbCos"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("out/flagged/scores.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 * 2 * 2);

    let scores = run_dir.join("scores.csv");
    let o = run(dir.path(), &["meta", "--scores", scores.to_str().unwrap(), "--out", "meta"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["summary.csv", "summary.json", "reliability.csv", "reliability.json", "mtmm.csv", "mtmm.json"] {
        assert!(dir.path().join("meta").join(f).exists(), "{f}");
    }

    fs::write(
        dir.path().join("ratings.csv"),
        "concept_id,rater_id,side,score\nc000,r1,input,1\nc001,r1,input,4\nc002,r1,input,2\nc003,r1,input,5\nc000,r2,input,2\nc001,r2,input,4\nc002,r2,input,1\nc003,r2,input,5\n",
    )
    .unwrap();
    let o = run(
        dir.path(),
        &["report", "--kind", "concurrent", "--scores", scores.to_str().unwrap(), "--criterion", "ratings.csv", "--out", "conc"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("conc/concurrent.json")).unwrap()).unwrap();
    assert_eq!(json["measures"].as_array().unwrap().len(), 13);
    assert_eq!(json["inter_rater"]["pairs"][0]["kendall_tau"], 2.0 / 3.0);

    let o = run(dir.path(), &["report", "--kind", "plots", "--scores", scores.to_str().unwrap()]);
    assert_ne!(code(&o), 0);
}

#[test]
fn restricted_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let o = run(dir.path(), &["faithfulness", "--config", "c.toml", "--run-id", "f"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("out/f/scores.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.contains(",ABL-") || l.contains(",GRAD-")));
    assert_eq!(csv.lines().count(), 1 + 4 * 7 * 2);

    let o = run(dir.path(), &["readability", "--config", "c.toml", "--run-id", "r", "--measures", "ABL-Div,OUT-EmbCos"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("out/r/scores.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 * 2);

    let o = run(dir.path(), &["readability", "--config", "c.toml", "--run-id", "x", "--measures", "ABL-Div"]);
    assert_eq!(code(&o), 2);

    let o = run(dir.path(), &["patterns", "--config", "c.toml", "--run-id", "p"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let n = fs::read_dir(dir.path().join("out/p/patterns")).unwrap().count();
    assert_eq!(n, 4 * 2 * 2);
    let file: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/p/patterns/c000.output.b1.json")).unwrap()).unwrap();
    assert_eq!(file["side"], "output");
    assert_eq!(file["tokens"].as_array().unwrap().len(), 10);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());

    let o = run(dir.path(), &["run", "--config", "c.toml", "--measures", "ABL-Div,GRAD-Div"]);
    assert_eq!(code(&o), 2);
    let o = run(dir.path(), &["run", "--config", "c.toml", "--measures", "ABL-Vibes"]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("ABL-Vibes") && err.contains("IN-UMass") && err.contains("GRAD-TClass"), "{err}");
    assert!(!dir.path().join("out").exists(), "config errors abort before any output");

    let o = run(dir.path(), &["run", "--config", "missing.toml"]);
    assert_eq!(code(&o), 2);
    let o = run(dir.path(), &["run", "--config", "c.toml", "--backend", "warp:9"]);
    assert_eq!(code(&o), 2);

    let o = run(dir.path(), &["run", "--config", "c.toml", "--backend", "cmd:/nonexistent/model-server"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let o = run(dir.path(), &["run", "--config", "c.toml", "--backend", "tcp:127.0.0.1:1"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));

    let mut v = vec![0.0; 32];
    v[1] = 1.0;
    let concepts = vec![Concept::one_hot("n", 2).unwrap(), Concept::relu_linear("off", v, -1e6).unwrap()];
    fs::write(dir.path().join("dead.json"), concept_gauge::concept::concepts_to_json(&concepts).unwrap()).unwrap();
    let o = run(dir.path(), &["run", "--config", "c.toml", "--concepts", "dead.json", "--run-id", "partial"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(dir.path().join("out/partial/failures.json").exists());

    // same run id, different concept file
    let o = run(dir.path(), &["run", "--config", "c.toml", "--run-id", "partial"]);
    assert_eq!(code(&o), 2);

    fs::write(dir.path().join("empty.csv"), "concept_id,measure_id,batch_id,run_id,score\n").unwrap();
    let o = run(dir.path(), &["report", "--kind", "summary", "--scores", "empty.csv"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("empty"));
}
