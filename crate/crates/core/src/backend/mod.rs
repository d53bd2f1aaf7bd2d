//! Black-box model access: layer-l hidden states, logits from (possibly
//! perturbed) hidden states, and token embeddings.

mod linear;
pub mod protocol;
mod toy;

use std::fmt;
use std::str::FromStr;

pub use linear::LinearReadout;
pub use protocol::ProtocolClient;
pub use toy::{ToyConfig, ToyTransformer};

use crate::linalg::Matrix;
use crate::{Error, Result};

pub type TokenId = u32;

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BackendInfo {
    pub name: String,
    pub hidden_width: usize,
    pub vocab_size: usize,
    pub layer_index: usize,
    pub max_length: usize,
}

impl BackendInfo {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_width == 0 || self.vocab_size < 2 || self.max_length == 0 {
            return Err(Error::Backend(format!("implausible backend metadata: {self:?}")));
        }
        Ok(())
    }
}

/// Hidden representations at the interpreted layer for one token sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenSequence {
    pub token_ids: Vec<TokenId>,
    pub hidden: Matrix,
    /// Ground-truth next token per position; `None` at the last position.
    pub next_token_ids: Vec<Option<TokenId>>,
}

impl HiddenSequence {
    pub fn new(token_ids: Vec<TokenId>, hidden: Matrix) -> Result<Self> {
        if hidden.rows() != token_ids.len() {
            return Err(Error::dims(token_ids.len(), hidden.rows()));
        }
        let next_token_ids = (0..token_ids.len()).map(|t| token_ids.get(t + 1).copied()).collect();
        Ok(Self { token_ids, hidden, next_token_ids })
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogitRow {
    pub position: usize,
    pub logits: Vec<f64>,
}

impl LogitRow {
    pub fn log_softmax(&self) -> Vec<f64> {
        log_softmax(&self.logits)
    }

    pub fn softmax(&self) -> Vec<f64> {
        self.log_softmax().into_iter().map(f64::exp).collect()
    }

    /// Index of the largest logit; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &x) in self.logits.iter().enumerate() {
            if x > self.logits[best] {
                best = i;
            }
        }
        best
    }
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum = logits.iter().fold(0.0, |acc, &x| acc + (x - max).exp());
    let lse = max + sum.ln();
    logits.iter().map(|&x| x - lse).collect()
}

/// Hidden states plus the per-position logits produced from them.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass {
    pub sequence: HiddenSequence,
    pub logits: Vec<LogitRow>,
}

pub trait Backend: Send + Sync {
    fn info(&self) -> &BackendInfo;

    fn forward(&self, tokens: &[TokenId]) -> Result<ForwardPass>;

    /// Re-runs the model from the interpreted layer on `hidden` and returns
    /// the logits at `position`.
    fn decode(&self, hidden: &Matrix, position: usize) -> Result<LogitRow>;

    fn embed(&self, ids: &[TokenId]) -> Result<Matrix>;

    /// Decode with row `position` of `base` replaced by `row`. Rows after
    /// `position` are dropped: the model is causal.
    fn decode_replaced(&self, base: &Matrix, position: usize, row: &[f64]) -> Result<LogitRow> {
        if position >= base.rows() {
            return Err(Error::IndexOutOfRange { index: position, limit: base.rows() });
        }
        let mut hidden = base.truncated(position + 1);
        hidden.row_mut(position).copy_from_slice(row);
        self.decode(&hidden, position)
    }
}

pub(crate) fn check_tokens(info: &BackendInfo, tokens: &[TokenId]) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::Backend("empty token sequence".into()));
    }
    if tokens.len() > info.max_length {
        return Err(Error::Backend(format!(
            "sequence length {} exceeds maximum {}",
            tokens.len(),
            info.max_length
        )));
    }
    check_ids(info, tokens)
}

pub(crate) fn check_ids(info: &BackendInfo, ids: &[TokenId]) -> Result<()> {
    if let Some(&bad) = ids.iter().find(|&&t| t as usize >= info.vocab_size) {
        return Err(Error::Backend(format!(
            "token id {bad} out of vocabulary (size {})",
            info.vocab_size
        )));
    }
    Ok(())
}

pub(crate) fn check_decode(info: &BackendInfo, hidden: &Matrix, position: usize) -> Result<()> {
    if hidden.cols() != info.hidden_width {
        return Err(Error::dims(info.hidden_width, hidden.cols()));
    }
    if position >= hidden.rows() {
        return Err(Error::IndexOutOfRange { index: position, limit: hidden.rows() });
    }
    if hidden.rows() > info.max_length {
        return Err(Error::Backend(format!("{} hidden rows exceed maximum length {}", hidden.rows(), info.max_length)));
    }
    if !crate::linalg::all_finite(hidden.as_slice()) {
        return Err(Error::NonFinite("hidden states"));
    }
    Ok(())
}

/// Where the model comes from: `toy:<seed>`, `cmd:<argv>` or `tcp:<host:port>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Toy { seed: u64 },
    Command { argv: Vec<String> },
    Tcp { address: String },
}

impl FromStr for BackendSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (scheme, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("backend `{s}` must look like toy:<seed>, cmd:<argv> or tcp:<host:port>")))?;
        match scheme {
            "toy" => rest
                .parse()
                .map(|seed| BackendSpec::Toy { seed })
                .map_err(|_| Error::Config(format!("toy backend seed `{rest}` is not an unsigned integer"))),
            "cmd" => {
                let argv: Vec<String> = rest.split_whitespace().map(str::to_string).collect();
                if argv.is_empty() {
                    return Err(Error::Config("cmd backend needs a command".into()));
                }
                Ok(BackendSpec::Command { argv })
            }
            "tcp" if !rest.is_empty() => Ok(BackendSpec::Tcp { address: rest.to_string() }),
            _ => Err(Error::Config(format!("unknown backend `{s}`"))),
        }
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Toy { seed } => write!(f, "toy:{seed}"),
            BackendSpec::Command { argv } => write!(f, "cmd:{}", argv.join(" ")),
            BackendSpec::Tcp { address } => write!(f, "tcp:{address}"),
        }
    }
}

impl serde::Serialize for BackendSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for BackendSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn open_backend(spec: &BackendSpec) -> Result<Box<dyn Backend>> {
    Ok(match spec {
        BackendSpec::Toy { seed } => Box::new(ToyTransformer::new(ToyConfig::with_seed(*seed))),
        BackendSpec::Command { argv } => Box::new(ProtocolClient::spawn(argv)?),
        BackendSpec::Tcp { address } => Box::new(ProtocolClient::connect(address)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_backend_specs() {
        assert_eq!("toy:7".parse::<BackendSpec>().unwrap(), BackendSpec::Toy { seed: 7 });
        assert_eq!(
            "cmd:python bridge.py --layer 3".parse::<BackendSpec>().unwrap(),
            BackendSpec::Command { argv: vec!["python".into(), "bridge.py".into(), "--layer".into(), "3".into()] }
        );
        assert_eq!(
            "tcp:127.0.0.1:9000".parse::<BackendSpec>().unwrap(),
            BackendSpec::Tcp { address: "127.0.0.1:9000".into() }
        );
        for bad in ["toy:x", "gpu:1", "cmd:", "tcp:", "plain"] {
            assert!(bad.parse::<BackendSpec>().is_err(), "{bad}");
        }
        assert_eq!("toy:3".parse::<BackendSpec>().unwrap().to_string(), "toy:3");
    }

    #[test]
    fn softmax_is_a_distribution() {
        let row = LogitRow { position: 0, logits: vec![1000.0, -3.0, 2.5, 0.0] };
        let p = row.softmax();
        assert!(p.iter().all(|&x| x >= 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(row.argmax(), 0);
    }

    #[test]
    fn next_tokens_shift() {
        let seq = HiddenSequence::new(vec![4, 5, 6], Matrix::zeros(3, 2)).unwrap();
        assert_eq!(seq.next_token_ids, vec![Some(5), Some(6), None]);
        assert!(HiddenSequence::new(vec![1], Matrix::zeros(2, 2)).is_err());
    }
}
