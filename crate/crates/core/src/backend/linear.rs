use super::{check_decode, check_ids, check_tokens, Backend, BackendInfo, ForwardPass, HiddenSequence, LogitRow, TokenId};
use crate::linalg::{self, Matrix};
use crate::{Error, Result};

/// Single linear layer model: `h_t = E[x_t]`, `logits_t = W h_t + c`.
///
/// Logits are exactly affine in the hidden state, which makes analytic
/// directional derivatives available for checking finite-difference code.
#[derive(Debug, Clone)]
pub struct LinearReadout {
    info: BackendInfo,
    embedding: Matrix,
    weight: Matrix,
    bias: Vec<f64>,
}

impl LinearReadout {
    /// `embedding` is `k × m`, `weight` is `k × m`, `bias` has length `k`.
    pub fn new(embedding: Matrix, weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        let (k, m) = (embedding.rows(), embedding.cols());
        if weight.rows() != k || bias.len() != k {
            return Err(Error::dims(k, weight.rows().min(bias.len())));
        }
        if weight.cols() != m {
            return Err(Error::dims(m, weight.cols()));
        }
        let info = BackendInfo {
            name: "linear-readout".into(),
            hidden_width: m,
            vocab_size: k,
            layer_index: 0,
            max_length: 1024,
        };
        info.validate()?;
        Ok(Self { info, embedding, weight, bias })
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn logits_of(&self, h: &[f64]) -> Vec<f64> {
        linalg::axpy(&self.bias, 1.0, &self.weight.mul_vec(h))
    }
}

impl Backend for LinearReadout {
    fn info(&self) -> &BackendInfo {
        &self.info
    }

    fn forward(&self, tokens: &[TokenId]) -> Result<ForwardPass> {
        check_tokens(&self.info, tokens)?;
        let hidden = self.embed(tokens)?;
        let logits = hidden
            .iter_rows()
            .enumerate()
            .map(|(position, h)| LogitRow { position, logits: self.logits_of(h) })
            .collect();
        Ok(ForwardPass { sequence: HiddenSequence::new(tokens.to_vec(), hidden)?, logits })
    }

    fn decode(&self, hidden: &Matrix, position: usize) -> Result<LogitRow> {
        check_decode(&self.info, hidden, position)?;
        Ok(LogitRow { position, logits: self.logits_of(hidden.row(position)) })
    }

    fn embed(&self, ids: &[TokenId]) -> Result<Matrix> {
        check_ids(&self.info, ids)?;
        let rows: Vec<Vec<f64>> = ids.iter().map(|&t| self.embedding.row(t as usize).to_vec()).collect();
        Matrix::from_rows(&rows, self.info.hidden_width)
    }
}
