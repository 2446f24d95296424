use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{token_row, EmbeddedInput};
use super::ops::{gelu, layer_norm, linear, log_softmax_in_place, softmax_prefix};
use super::{PolicyParams, TokenSequence};
use crate::error::{Error, Result};

/// How the next token is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decoding {
    /// Argmax at every step (the zero-temperature limit).
    Greedy,
    /// Ancestral sampling from `softmax(logits / temperature)`.
    Temperature(f64),
}

/// One sampled continuation with the policy's own (untempered) per-token
/// log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub tokens: TokenSequence,
    pub logprobs: Vec<f64>,
}

impl Rollout {
    pub fn total_logprob(&self) -> f64 {
        self.logprobs.iter().sum()
    }
}

/// Per-layer keys and values of every row processed so far.
#[derive(Clone)]
struct DecodeState {
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    len: usize,
}

impl DecodeState {
    fn new(layers: usize) -> Self {
        DecodeState {
            keys: vec![Vec::new(); layers],
            values: vec![Vec::new(); layers],
            len: 0,
        }
    }

    /// Pushes one row through the decoder. Returns next-token log-probs when
    /// asked for them.
    fn step(&mut self, p: &PolicyParams, mut x: Vec<f64>, want_logits: bool) -> Option<Vec<f64>> {
        let cfg = p.config();
        let l = p.layout();
        let (d, heads) = (cfg.dec_dim, cfg.heads);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let i = self.len;
        let mut scores = vec![0.0; i + 1];
        let mut probs = vec![0.0; i + 1];
        for (layer, bl) in l.dec_blocks.iter().enumerate() {
            let (a, _) = layer_norm(&x, 1, d, p.slice(&bl.ln1_g), p.slice(&bl.ln1_b));
            let q = linear(&a, 1, d, p.slice(&bl.wq), d, None);
            let k = linear(&a, 1, d, p.slice(&bl.wk), d, None);
            let v = linear(&a, 1, d, p.slice(&bl.wv), d, None);
            self.keys[layer].extend_from_slice(&k);
            self.values[layer].extend_from_slice(&v);
            let keys = &self.keys[layer];
            let values = &self.values[layer];
            let mut mixed = vec![0.0; d];
            for h in 0..heads {
                let off = h * dh;
                let qi = &q[off..off + dh];
                for j in 0..=i {
                    let kj = &keys[j * d + off..j * d + off + dh];
                    scores[j] = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                }
                softmax_prefix(&scores, &mut probs);
                let out = &mut mixed[off..off + dh];
                for (j, &pj) in probs.iter().enumerate() {
                    let vj = &values[j * d + off..j * d + off + dh];
                    for (o, &vv) in out.iter_mut().zip(vj) {
                        *o += pj * vv;
                    }
                }
            }
            let att = linear(&mixed, 1, d, p.slice(&bl.wo), d, Some(p.slice(&bl.bo)));
            let x1: Vec<f64> = x.iter().zip(&att).map(|(a, b)| a + b).collect();
            let (m, _) = layer_norm(&x1, 1, d, p.slice(&bl.ln2_g), p.slice(&bl.ln2_b));
            let u = linear(&m, 1, d, p.slice(&bl.w1), 4 * d, Some(p.slice(&bl.b1)));
            let hidden: Vec<f64> = u.iter().map(|&z| gelu(z)).collect();
            let f = linear(&hidden, 1, 4 * d, p.slice(&bl.w2), d, Some(p.slice(&bl.b2)));
            x = x1.iter().zip(&f).map(|(a, b)| a + b).collect();
        }
        self.len += 1;
        if !want_logits {
            return None;
        }
        let (normed, _) = layer_norm(&x, 1, d, p.slice(&l.dec_ln_g), p.slice(&l.dec_ln_b));
        let mut logp = linear(
            &normed,
            1,
            d,
            p.slice(&l.head_w),
            cfg.vocab_size,
            Some(p.slice(&l.head_b)),
        );
        log_softmax_in_place(&mut logp);
        Some(logp)
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn draw(logp: &[f64], temperature: f64, rng: &mut ChaCha8Rng) -> usize {
    let max = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logp
        .iter()
        .map(|&l| ((l - max) / temperature).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    // Rounding left u just past the last bucket.
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Draws `g` continuations of `input`, each ending at the end token or after
/// `max_new` tokens (or when the context is full). Sample `i` uses RNG stream
/// `i` of `rng_seed`, so results do not depend on generation order.
pub fn sample_group(
    input: &EmbeddedInput,
    g: usize,
    decoding: Decoding,
    max_new: usize,
    eos: usize,
    params: &PolicyParams,
    rng_seed: u64,
) -> Result<Vec<Rollout>> {
    if g == 0 {
        return Err(Error::InvalidInput("group size must be at least 1".into()));
    }
    if let Decoding::Temperature(t) = decoding {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "temperature must be positive, got {t}"
            )));
        }
    }
    let cfg = params.config();
    if input.is_empty() || input.rows.cols != cfg.dec_dim {
        return Err(Error::Shape("input rows do not match the decoder".into()));
    }
    if input.len() > cfg.max_seq {
        return Err(Error::InvalidInput("input exceeds max_seq".into()));
    }
    // Token t (1-based) is predicted from row input.len() + t - 2.
    let budget = max_new.min(cfg.max_seq + 1 - input.len());

    let mut prefix = DecodeState::new(cfg.dec_layers);
    let mut first = None;
    for r in 0..input.len() {
        first = prefix.step(params, input.rows.row(r).to_vec(), r + 1 == input.len());
    }
    let first = first.expect("input is non-empty");

    (0..g)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            rng.set_stream(i as u64);
            let mut state = prefix.clone();
            let mut logp = first.clone();
            let mut tokens = Vec::new();
            let mut logprobs = Vec::new();
            while tokens.len() < budget {
                let tok = match decoding {
                    Decoding::Greedy => argmax(&logp),
                    Decoding::Temperature(t) => draw(&logp, t, &mut rng),
                };
                tokens.push(tok);
                logprobs.push(logp[tok]);
                if tok == eos || tokens.len() == budget {
                    break;
                }
                let pos = state.len;
                logp = state
                    .step(params, token_row(params, tok, pos), true)
                    .expect("logits requested");
            }
            Ok(Rollout {
                tokens: TokenSequence::new(tokens),
                logprobs,
            })
        })
        .collect()
}
