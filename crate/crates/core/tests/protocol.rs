mod common;

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};

use concept_gauge::backend::{Backend, ProtocolClient, ToyConfig, ToyTransformer};
use concept_gauge::linalg::Matrix;
use concept_gauge::pipeline::{run_pipeline, BatchShape, RunOptions};

const EXE: &str = env!("CARGO_BIN_EXE_concept-gauge");

fn argv(seed: u64) -> Vec<String> {
    vec![EXE.to_string(), "serve-toy".into(), "--seed".into(), seed.to_string()]
}

struct Server {
    child: Child,
    address: String,
}

impl Server {
    fn start(seed: u64) -> Self {
        let mut child = Command::new(EXE)
            .args(["serve-toy", "--seed", &seed.to_string(), "--tcp", "127.0.0.1:0"])
            .stdout(Stdio::piped())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        Server { child, address: line.trim().to_string() }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.child.kill().ok();
        self.child.wait().ok();
    }
}

fn assert_same_model(remote: &dyn Backend, local: &ToyTransformer) {
    assert_eq!(remote.info(), local.info());
    let tokens = [5, 17, 3, 88, 42, 0, 9];
    let (r, l) = (remote.forward(&tokens).unwrap(), local.forward(&tokens).unwrap());
    // floats cross the wire without loss
    assert_eq!(r, l);
    let mut hidden = l.sequence.hidden.truncated(4);
    hidden.set(3, 2, hidden.get(3, 2) + 0.25);
    assert_eq!(remote.decode(&hidden, 3).unwrap(), local.decode(&hidden, 3).unwrap());
    assert_eq!(remote.decode(&l.sequence.hidden, 6).unwrap().logits, l.logits[6].logits);
    assert_eq!(remote.embed(&[0, 1, 100]).unwrap(), local.embed(&[0, 1, 100]).unwrap());
}

#[test]
fn child_process_backend_matches_local_model() {
    let client = ProtocolClient::spawn(&argv(4)).unwrap();
    assert_same_model(&client, &ToyTransformer::new(ToyConfig::with_seed(4)));
    let err = client.decode(&Matrix::zeros(2, 5), 0).unwrap_err().to_string();
    assert!(err.contains("dimension"), "{err}");
    // the connection survives a rejected request
    assert_eq!(client.embed(&[2]).unwrap().rows(), 1);
}

#[test]
fn tcp_backend_matches_local_model() {
    let server = Server::start(6);
    let client = ProtocolClient::connect(&server.address).unwrap();
    assert_same_model(&client, &ToyTransformer::new(ToyConfig::with_seed(6)));
    // a second, concurrent connection is independent
    let other = ProtocolClient::connect(&server.address).unwrap();
    assert_eq!(other.embed(&[7]).unwrap(), client.embed(&[7]).unwrap());
}

#[test]
fn malformed_requests_get_error_replies() {
    let server = Server::start(1);
    let stream = TcpStream::connect(&server.address).unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut writer = stream;
    let mut ask = |line: &str| {
        writer.write_all(line.as_bytes()).unwrap();
        writer.write_all(b"\n").unwrap();
        let mut reply = String::new();
        reader.read_line(&mut reply).unwrap();
        serde_json::from_str::<serde_json::Value>(&reply).unwrap()
    };
    for bad in [
        "not json",
        "{\"op\":\"teleport\"}",
        "{\"op\":\"forward\",\"tokens\":[1,100000]}",
        "{\"op\":\"forward\",\"tokens\":[]}",
        "{\"op\":\"decode\",\"hidden\":[[1.0,2.0]],\"position\":0}",
        "{\"op\":\"decode\",\"hidden\":[],\"position\":0}",
    ] {
        let reply = ask(bad);
        assert_eq!(reply["ok"], false, "{bad}");
        assert!(reply["error"].as_str().is_some_and(|e| !e.is_empty()));
    }
    let info = ask("{\"op\":\"info\"}");
    assert_eq!(info["ok"], true);
    assert_eq!(info["hidden_width"], 32);
    assert_eq!(info["vocab_size"], 101);
}

#[test]
fn pipeline_over_protocol_matches_in_process_run() {
    let dir = tempfile::tempdir().unwrap();
    let inputs = common::write_inputs(dir.path(), 3, 12, 2);
    let shape = BatchShape { n_batches: 2, sentences_per_batch: 3, tokens_per_sentence: 12 };
    let local = common::config(&inputs, &dir.path().join("local"), 2, shape);
    let mut remote = local.clone();
    remote.out = dir.path().join("remote");
    remote.backend = format!("cmd:{EXE} serve-toy --seed 2").parse().unwrap();
    let opts = RunOptions { workers: Some(2), max_units: None };
    let a = run_pipeline(&local, opts).unwrap();
    let b = run_pipeline(&remote, opts).unwrap();
    assert_eq!(a.failures, b.failures);
    assert_eq!(a.table, b.table);
    assert!(a.table.len() > 60);
}
