#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use concept_gauge::backend::{ToyConfig, ToyTransformer};
use concept_gauge::concept::{concepts_to_json, Concept};
use concept_gauge::pipeline::{write_corpus, BatchShape, ConfigOverrides, PipelineConfig};
use concept_gauge::synthetic::{synthetic_concepts, synthetic_corpus, CorpusSpec};

pub struct Inputs {
    pub corpus: PathBuf,
    pub concepts: PathBuf,
}

pub fn write_inputs(dir: &Path, n_concepts: usize, n_docs: usize, seed: u64) -> Inputs {
    let toy = ToyTransformer::new(ToyConfig::with_seed(seed));
    let concepts = synthetic_concepts(&toy, n_concepts, seed).unwrap();
    write_inputs_with(dir, &concepts, n_docs, seed)
}

pub fn write_inputs_with(dir: &Path, concepts: &[Concept], n_docs: usize, seed: u64) -> Inputs {
    let docs = synthetic_corpus(&CorpusSpec::new(n_docs, 32, 101, seed)).unwrap();
    let corpus = dir.join("corpus.ndjson");
    write_corpus(fs::File::create(&corpus).unwrap(), &docs).unwrap();
    let path = dir.join("concepts.json");
    fs::write(&path, concepts_to_json(concepts).unwrap()).unwrap();
    Inputs { corpus, concepts: path }
}

pub fn config(inputs: &Inputs, out: &Path, seed: u64, shape: BatchShape) -> PipelineConfig {
    let mut cfg = PipelineConfig::resolve(
        None,
        ConfigOverrides {
            backend: Some(format!("toy:{seed}").parse().unwrap()),
            corpus: Some(inputs.corpus.clone()),
            concepts: Some(inputs.concepts.clone()),
            out: Some(out.to_path_buf()),
            ..Default::default()
        },
    )
    .unwrap();
    cfg.batch = shape;
    cfg
}

/// Every file under `dir` with its contents, sorted by relative path.
pub fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
