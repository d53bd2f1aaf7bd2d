//! Activation-exchange protocol.
//!
//! Newline-delimited JSON over a byte stream (child-process pipes or TCP).
//! One request per line, one response per line:
//!
//! ```text
//! {"op":"info"}                          -> {"ok":true,"name":..,"hidden_width":m,"vocab_size":k,"layer_index":l,"max_length":n}
//! {"op":"forward","tokens":[..]}         -> {"ok":true,"hidden":[[..]..],"logits":[[..]..]}
//! {"op":"decode","hidden":[[..]],"position":p} -> {"ok":true,"position":p,"logits":[..]}
//! {"op":"embed","ids":[..]}              -> {"ok":true,"embeddings":[[..]..]}
//! failure                                -> {"ok":false,"error":"..."}
//! ```
//!
//! Floats use the shortest decimal form that parses back to the same `f64`,
//! so values survive the round trip exactly.

use std::io::{self, BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendInfo, ForwardPass, HiddenSequence, LogitRow, TokenId};
use crate::linalg::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Request {
    Info,
    Forward { tokens: Vec<TokenId> },
    Decode { hidden: Vec<Vec<f64>>, position: usize },
    Embed { ids: Vec<TokenId> },
}

#[derive(Debug, Serialize, Deserialize)]
struct InfoReply {
    #[serde(flatten)]
    info: BackendInfo,
}

#[derive(Debug, Serialize, Deserialize)]
struct ForwardReply {
    hidden: Vec<Vec<f64>>,
    logits: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DecodeReply {
    position: usize,
    logits: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbedReply {
    embeddings: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct Ok<T> {
    ok: bool,
    #[serde(flatten)]
    body: T,
}

#[derive(Serialize)]
struct Failure<'a> {
    ok: bool,
    error: &'a str,
}

/// Serialises `value` as one protocol line (without the trailing newline).
pub fn to_line<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string(value)?)
}

fn rows_of(rows: &[Vec<f64>], cols: usize) -> Result<Matrix> {
    Matrix::from_rows(rows, cols)
}

fn handle<B: Backend + ?Sized>(backend: &B, line: &str) -> Result<String> {
    let request: Request = serde_json::from_str(line).map_err(|e| Error::Parse(format!("malformed request: {e}")))?;
    let wrap = |body| to_line(&Ok { ok: true, body });
    match request {
        Request::Info => to_line(&Ok { ok: true, body: InfoReply { info: backend.info().clone() } }),
        Request::Forward { tokens } => {
            let out = backend.forward(&tokens)?;
            to_line(&Ok {
                ok: true,
                body: ForwardReply {
                    hidden: out.sequence.hidden.to_rows(),
                    logits: out.logits.into_iter().map(|r| r.logits).collect(),
                },
            })
        }
        Request::Decode { hidden, position } => {
            let m = backend.info().hidden_width;
            let hidden = rows_of(&hidden, m)?;
            let row = backend.decode(&hidden, position)?;
            to_line(&Ok { ok: true, body: DecodeReply { position: row.position, logits: row.logits } })
        }
        Request::Embed { ids } => {
            let e = backend.embed(&ids)?;
            wrap(EmbedReply { embeddings: e.to_rows() })
        }
    }
}

/// Answers requests from `reader` until end of input. Bad requests get an
/// `{"ok":false}` reply and the loop continues.
pub fn serve<B, R, W>(backend: &B, reader: R, mut writer: W) -> Result<()>
where
    B: Backend + ?Sized,
    R: BufRead,
    W: Write,
{
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match handle(backend, &line) {
            Result::Ok(reply) => reply,
            Err(e) => to_line(&Failure { ok: false, error: &e.to_string() })?,
        };
        writer.write_all(reply.as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}

struct Channel {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
}

/// Backend that forwards every call over the protocol.
///
/// Requests are serialised per connection; open several clients for
/// parallel use.
pub struct ProtocolClient {
    channel: Mutex<Channel>,
    info: BackendInfo,
    child: Option<Mutex<Child>>,
}

impl std::fmt::Debug for ProtocolClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProtocolClient").field("info", &self.info).finish_non_exhaustive()
    }
}

impl ProtocolClient {
    pub fn from_streams(reader: Box<dyn BufRead + Send>, writer: Box<dyn Write + Send>) -> Result<Self> {
        Self::handshake(Channel { reader, writer }, None)
    }

    pub fn spawn(argv: &[String]) -> Result<Self> {
        let (program, args) = argv.split_first().ok_or_else(|| Error::Config("empty backend command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Backend(format!("cannot start `{}`: {e}", argv.join(" "))))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let channel = Channel { reader: Box::new(BufReader::new(stdout)), writer: Box::new(stdin) };
        Self::handshake(channel, Some(Mutex::new(child)))
    }

    pub fn connect(address: &str) -> Result<Self> {
        let stream = TcpStream::connect(address).map_err(|e| Error::Backend(format!("cannot connect to {address}: {e}")))?;
        stream.set_nodelay(true).ok();
        let reader = stream.try_clone().map_err(|e| Error::Backend(e.to_string()))?;
        Self::from_streams(Box::new(BufReader::new(reader)), Box::new(stream))
    }

    fn handshake(channel: Channel, child: Option<Mutex<Child>>) -> Result<Self> {
        let mut client = Self {
            channel: Mutex::new(channel),
            info: BackendInfo { name: String::new(), hidden_width: 1, vocab_size: 2, layer_index: 0, max_length: 1 },
            child,
        };
        let reply: InfoReply = client.call(&Request::Info)?;
        reply.info.validate()?;
        client.info = reply.info;
        Ok(client)
    }

    fn call<T: for<'de> Deserialize<'de>>(&self, request: &Request) -> Result<T> {
        let line = to_line(request)?;
        let mut channel = self.channel.lock().map_err(|_| Error::Backend("connection poisoned".into()))?;
        let io_err = |e: io::Error| Error::Backend(format!("protocol i/o: {e}"));
        channel.writer.write_all(line.as_bytes()).map_err(io_err)?;
        channel.writer.write_all(b"\n").map_err(io_err)?;
        channel.writer.flush().map_err(io_err)?;
        let mut reply = String::new();
        if channel.reader.read_line(&mut reply).map_err(io_err)? == 0 {
            return Err(Error::Backend("backend closed the connection".into()));
        }
        drop(channel);
        let value: serde_json::Value =
            serde_json::from_str(&reply).map_err(|e| Error::Backend(format!("malformed reply: {e}")))?;
        match value.get("ok").and_then(serde_json::Value::as_bool) {
            Some(true) => serde_json::from_value(value).map_err(|e| Error::Backend(format!("unexpected reply shape: {e}"))),
            _ => {
                let msg = value.get("error").and_then(serde_json::Value::as_str).unwrap_or("unspecified error");
                Err(Error::Backend(msg.to_string()))
            }
        }
    }

    fn matrix(&self, rows: &[Vec<f64>], cols: usize) -> Result<Matrix> {
        rows_of(rows, cols).map_err(|e| Error::Backend(format!("reply shape: {e}")))
    }
}

impl Drop for ProtocolClient {
    fn drop(&mut self) {
        if let Some(child) = &self.child {
            if let Result::Ok(mut child) = child.lock() {
                // closing stdin lets a well-behaved server exit on its own
                if let Result::Ok(mut ch) = self.channel.lock() {
                    ch.writer = Box::new(io::sink());
                }
                let _ = child.wait();
            }
        }
    }
}

impl Backend for ProtocolClient {
    fn info(&self) -> &BackendInfo {
        &self.info
    }

    fn forward(&self, tokens: &[TokenId]) -> Result<ForwardPass> {
        let reply: ForwardReply = self.call(&Request::Forward { tokens: tokens.to_vec() })?;
        let hidden = self.matrix(&reply.hidden, self.info.hidden_width)?;
        if hidden.rows() != tokens.len() || reply.logits.len() != tokens.len() {
            return Err(Error::Backend("forward reply length does not match the request".into()));
        }
        let logits = reply
            .logits
            .into_iter()
            .enumerate()
            .map(|(position, logits)| {
                if logits.len() != self.info.vocab_size {
                    return Err(Error::Backend(format!("logit row of length {}", logits.len())));
                }
                Result::Ok(LogitRow { position, logits })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ForwardPass { sequence: HiddenSequence::new(tokens.to_vec(), hidden)?, logits })
    }

    fn decode(&self, hidden: &Matrix, position: usize) -> Result<LogitRow> {
        let reply: DecodeReply = self.call(&Request::Decode { hidden: hidden.to_rows(), position })?;
        if reply.logits.len() != self.info.vocab_size {
            return Err(Error::Backend(format!("logit row of length {}", reply.logits.len())));
        }
        Ok(LogitRow { position: reply.position, logits: reply.logits })
    }

    fn embed(&self, ids: &[TokenId]) -> Result<Matrix> {
        let reply: EmbedReply = self.call(&Request::Embed { ids: ids.to_vec() })?;
        let m = self.matrix(&reply.embeddings, self.info.hidden_width)?;
        if m.rows() != ids.len() {
            return Err(Error::Backend("embed reply length does not match the request".into()));
        }
        Ok(m)
    }
}
