//! A desk-scale signal-conditioned autoregressive policy.
//!
//! The signal is cut into non-overlapping patches and run through a small
//! bidirectional transformer encoder, then mapped into the decoder embedding
//! space by a two-layer GELU perceptron. The projected rows are concatenated
//! with the query token embeddings and a causal transformer decoder predicts
//! the trace tokens. Everything is `f64` with hand-written backward passes.

mod checkpoint;
mod model;
mod ops;
mod params;
mod sample;
mod tokenizer;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use model::{
    assemble_input, encode_signal, encode_signal_vjp, forward_logprobs, logprob_grad, project,
    sequence_logprobs, EmbeddedInput,
};
pub use ops::gelu;
pub use params::{BlockLayout, Layout, PolicyParams};
pub use sample::{sample_group, Decoding, Rollout};
pub use tokenizer::{TokenSequence, Tokenizer, BASE_WORDS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }
}

/// A multichannel signal, `T` time steps by `C` channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SignalRecord {
    samples: Matrix,
}

impl SignalRecord {
    pub fn new(samples: Matrix) -> Result<Self> {
        if samples.rows == 0 || samples.cols == 0 {
            return Err(Error::Shape(
                "signal needs at least one step and one channel".into(),
            ));
        }
        if let Some(i) = samples.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite signal value at flat index {i}"
            )));
        }
        Ok(SignalRecord { samples })
    }

    pub fn zeros(steps: usize, channels: usize) -> Self {
        SignalRecord {
            samples: Matrix::zeros(steps, channels),
        }
    }

    pub fn steps(&self) -> usize {
        self.samples.rows
    }

    pub fn channels(&self) -> usize {
        self.samples.cols
    }

    pub fn samples(&self) -> &Matrix {
        &self.samples
    }

    pub fn at(&self, t: usize, c: usize) -> f64 {
        self.samples.get(t, c)
    }
}

impl TryFrom<Vec<Vec<f64>>> for SignalRecord {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        let steps = rows.len();
        let channels = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != channels) {
            return Err(Error::Shape("ragged signal rows".into()));
        }
        SignalRecord::new(Matrix::from_vec(steps, channels, rows.concat())?)
    }
}

impl From<SignalRecord> for Vec<Vec<f64>> {
    fn from(s: SignalRecord) -> Self {
        s.samples
            .data
            .chunks(s.samples.cols)
            .map(<[f64]>::to_vec)
            .collect()
    }
}

/// Shape of the policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub patch_len: usize,
    pub channels: usize,
    /// Upper bound on signal patches; sizes the encoder position table.
    pub max_patches: usize,
    pub enc_layers: usize,
    pub enc_dim: usize,
    pub dec_layers: usize,
    pub dec_dim: usize,
    pub heads: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Toy defaults sized for a 256-step, 4-channel signal.
    pub fn for_vocab(vocab_size: usize) -> Self {
        ModelConfig {
            patch_len: 16,
            channels: 4,
            max_patches: 16,
            enc_layers: 2,
            enc_dim: 32,
            dec_layers: 2,
            dec_dim: 32,
            heads: 4,
            vocab_size,
            max_seq: 128,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("patch_len", self.patch_len),
            ("channels", self.channels),
            ("max_patches", self.max_patches),
            ("enc_dim", self.enc_dim),
            ("dec_dim", self.dec_dim),
            ("heads", self.heads),
            ("vocab_size", self.vocab_size),
            ("max_seq", self.max_seq),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidInput(format!(
                "model config: {name} must be positive"
            )));
        }
        if !self.enc_dim.is_multiple_of(self.heads) || !self.dec_dim.is_multiple_of(self.heads) {
            return Err(Error::InvalidInput(format!(
                "model config: enc_dim {} and dec_dim {} must be divisible by heads {}",
                self.enc_dim, self.dec_dim, self.heads
            )));
        }
        if self.max_seq <= self.max_patches {
            return Err(Error::InvalidInput(
                "model config: max_seq must exceed max_patches".into(),
            ));
        }
        Ok(())
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_len * self.channels
    }
}
