//! Deterministic two-block transformer used as a local model.
//!
//! token embedding + position → block 0 → [interpreted layer] → block 1 →
//! tied unembedding. Each block is causal single-head attention followed by a
//! GELU MLP, both with residual connections and no normalisation. The
//! interpreted hidden state is the residual stream after block 0's MLP, so
//! `decode` can resume from it without any other state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{check_decode, check_ids, check_tokens, Backend, BackendInfo, ForwardPass, HiddenSequence, LogitRow, TokenId};
use crate::linalg::{self, Matrix};
use crate::Result;

#[derive(Debug, Clone)]
pub struct ToyConfig {
    pub seed: u64,
    pub hidden_width: usize,
    pub vocab_size: usize,
    pub ff_width: usize,
    pub max_length: usize,
    /// Non-pad tokens are dealt round-robin into this many embedding clusters.
    pub clusters: usize,
    /// Per-token noise around the cluster centroid, relative to the centroid norm.
    pub cluster_spread: f64,
    pub embedding_norm: f64,
    pub weight_scale: f64,
    /// `(token, neuron, value)`: force `embedding[token][neuron] = value`.
    pub planted: Vec<(TokenId, usize, f64)>,
    /// Hidden coordinates that cannot influence the logits.
    pub dead_neurons: Vec<usize>,
}

impl ToyConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            hidden_width: 32,
            vocab_size: 101,
            ff_width: 64,
            max_length: 128,
            clusters: 10,
            cluster_spread: 0.35,
            embedding_norm: 2.0,
            weight_scale: 0.5,
            planted: Vec::new(),
            dead_neurons: Vec::new(),
        }
    }

    /// Token assigned to the pad/baseline role.
    pub const PAD: TokenId = 0;

    /// Embedding cluster for a token; `None` for the pad token.
    pub fn cluster_of(&self, token: TokenId) -> Option<usize> {
        if token == Self::PAD || self.clusters == 0 {
            None
        } else {
            Some((token as usize - 1) % self.clusters)
        }
    }

    pub fn cluster_members(&self, cluster: usize) -> Vec<TokenId> {
        (1..self.vocab_size as TokenId).filter(|&t| self.cluster_of(t) == Some(cluster)).collect()
    }
}

#[derive(Debug, Clone)]
struct Block {
    wq: Matrix,
    wk: Matrix,
    wv: Matrix,
    wo: Matrix,
    w1: Matrix,
    b1: Vec<f64>,
    w2: Matrix,
}

#[derive(Debug, Clone)]
pub struct ToyTransformer {
    config: ToyConfig,
    info: BackendInfo,
    embedding: Matrix,
    positions: Matrix,
    blocks: [Block; 2],
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    let normal = Normal::new(0.0, std).expect("positive std");
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| normal.sample(rng)).collect())
}

fn normalize(v: &mut [f64], target: f64) {
    let n = linalg::norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x *= target / n);
    }
}

impl Block {
    fn random(rng: &mut ChaCha8Rng, m: usize, ff: usize, scale: f64) -> Self {
        let s_m = scale / (m as f64).sqrt();
        let s_ff = scale / (ff as f64).sqrt();
        Self {
            wq: random_matrix(rng, m, m, s_m),
            wk: random_matrix(rng, m, m, s_m),
            wv: random_matrix(rng, m, m, s_m),
            wo: random_matrix(rng, m, m, s_m),
            w1: random_matrix(rng, m, ff, s_m),
            b1: random_matrix(rng, 1, ff, 0.1).as_slice().to_vec(),
            w2: random_matrix(rng, ff, m, s_ff),
        }
    }

    /// Zero every weight that reads hidden coordinate `i`.
    fn disconnect_input(&mut self, i: usize) {
        for w in [&mut self.wq, &mut self.wk, &mut self.wv, &mut self.w1] {
            w.row_mut(i).iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Outputs for positions `0..x.rows()` restricted to `positions`.
    /// Keys and values are computed per row, so the result at position `p`
    /// depends only on rows `0..=p` and is bit-identical however many rows
    /// follow.
    fn apply(&self, x: &Matrix, positions: std::ops::Range<usize>) -> Matrix {
        let m = x.cols();
        let keys: Vec<Vec<f64>> = (0..positions.end).map(|s| self.wk.left_mul(x.row(s))).collect();
        let values: Vec<Vec<f64>> = (0..positions.end).map(|s| self.wv.left_mul(x.row(s))).collect();
        let inv_sqrt = 1.0 / (m as f64).sqrt();
        let mut out = Matrix::zeros(positions.len(), m);
        for (o, p) in positions.enumerate() {
            let q = self.wq.left_mul(x.row(p));
            let scores: Vec<f64> = keys[..=p].iter().map(|k| linalg::dot(&q, k) * inv_sqrt).collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let total = weights.iter().fold(0.0, |a, w| a + w);
            let mut mixed = vec![0.0; m];
            for (w, v) in weights.iter().zip(&values) {
                for (acc, vi) in mixed.iter_mut().zip(v) {
                    *acc += w / total * vi;
                }
            }
            let attn = self.wo.left_mul(&mixed);
            let resid: Vec<f64> = x.row(p).iter().zip(&attn).map(|(a, b)| a + b).collect();
            let pre: Vec<f64> = self.w1.left_mul(&resid).iter().zip(&self.b1).map(|(a, b)| gelu(a + b)).collect();
            let mlp = self.w2.left_mul(&pre);
            for ((dst, r), y) in out.row_mut(o).iter_mut().zip(&resid).zip(&mlp) {
                *dst = r + y;
            }
        }
        out
    }
}

impl ToyTransformer {
    pub fn new(config: ToyConfig) -> Self {
        let (m, k, ff) = (config.hidden_width, config.vocab_size, config.ff_width);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

        let centroids = random_matrix(&mut rng, config.clusters.max(1), m, 1.0);
        let noise = random_matrix(&mut rng, k, m, 1.0);
        let mut embedding = Matrix::zeros(k, m);
        for t in 0..k {
            let row = embedding.row_mut(t);
            match config.cluster_of(t as TokenId) {
                Some(c) => {
                    let mut centre = centroids.row(c).to_vec();
                    normalize(&mut centre, 1.0);
                    let mut jitter = noise.row(t).to_vec();
                    normalize(&mut jitter, config.cluster_spread);
                    for ((dst, a), b) in row.iter_mut().zip(&centre).zip(&jitter) {
                        *dst = a + b;
                    }
                }
                None => row.copy_from_slice(noise.row(t)),
            }
            normalize(row, config.embedding_norm);
        }
        for &(token, neuron, value) in &config.planted {
            embedding.set(token as usize, neuron, value);
        }

        let positions = random_matrix(&mut rng, config.max_length, m, 0.1);
        let mut blocks = [
            Block::random(&mut rng, m, ff, config.weight_scale),
            Block::random(&mut rng, m, ff, config.weight_scale),
        ];
        for &i in &config.dead_neurons {
            for t in 0..k {
                embedding.set(t, i, 0.0);
            }
            blocks[1].disconnect_input(i);
        }

        let info = BackendInfo {
            name: format!("toy-transformer(seed={})", config.seed),
            hidden_width: m,
            vocab_size: k,
            layer_index: 0,
            max_length: config.max_length,
        };
        Self { config, info, embedding, positions, blocks }
    }

    pub fn config(&self) -> &ToyConfig {
        &self.config
    }

    pub fn embedding_matrix(&self) -> &Matrix {
        &self.embedding
    }

    fn unembed(&self, z: &[f64], position: usize) -> LogitRow {
        LogitRow { position, logits: self.embedding.mul_vec(z) }
    }

    fn interpreted(&self, tokens: &[TokenId]) -> Matrix {
        let m = self.config.hidden_width;
        let mut x = Matrix::zeros(tokens.len(), m);
        for (t, &tok) in tokens.iter().enumerate() {
            for ((dst, e), p) in x.row_mut(t).iter_mut().zip(self.embedding.row(tok as usize)).zip(self.positions.row(t)) {
                *dst = e + p;
            }
        }
        self.blocks[0].apply(&x, 0..tokens.len())
    }
}

impl Backend for ToyTransformer {
    fn info(&self) -> &BackendInfo {
        &self.info
    }

    fn forward(&self, tokens: &[TokenId]) -> Result<ForwardPass> {
        check_tokens(&self.info, tokens)?;
        let hidden = self.interpreted(tokens);
        let out = self.blocks[1].apply(&hidden, 0..tokens.len());
        let logits = out.iter_rows().enumerate().map(|(p, z)| self.unembed(z, p)).collect();
        Ok(ForwardPass { sequence: HiddenSequence::new(tokens.to_vec(), hidden)?, logits })
    }

    fn decode(&self, hidden: &Matrix, position: usize) -> Result<LogitRow> {
        check_decode(&self.info, hidden, position)?;
        let out = self.blocks[1].apply(hidden, position..position + 1);
        Ok(self.unembed(out.row(0), position))
    }

    fn embed(&self, ids: &[TokenId]) -> Result<Matrix> {
        check_ids(&self.info, ids)?;
        let rows: Vec<Vec<f64>> = ids.iter().map(|&t| self.embedding.row(t as usize).to_vec()).collect();
        Matrix::from_rows(&rows, self.config.hidden_width)
    }
}
