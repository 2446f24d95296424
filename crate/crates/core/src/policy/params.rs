use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::error::{Error, Result};

/// Offsets of one pre-norm transformer block inside the flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    pub ln1_g: Range<usize>,
    pub ln1_b: Range<usize>,
    pub wq: Range<usize>,
    pub wk: Range<usize>,
    pub wv: Range<usize>,
    pub wo: Range<usize>,
    pub bo: Range<usize>,
    pub ln2_g: Range<usize>,
    pub ln2_b: Range<usize>,
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
}

/// Named tensor offsets for every parameter group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub patch_w: Range<usize>,
    pub patch_b: Range<usize>,
    pub enc_pos: Range<usize>,
    pub enc_blocks: Vec<BlockLayout>,
    pub enc_ln_g: Range<usize>,
    pub enc_ln_b: Range<usize>,
    pub proj_w1: Range<usize>,
    pub proj_b1: Range<usize>,
    pub proj_w2: Range<usize>,
    pub proj_b2: Range<usize>,
    pub tok_emb: Range<usize>,
    pub dec_pos: Range<usize>,
    pub dec_blocks: Vec<BlockLayout>,
    pub dec_ln_g: Range<usize>,
    pub dec_ln_b: Range<usize>,
    pub head_w: Range<usize>,
    pub head_b: Range<usize>,
    /// (name, range, rows, cols) in storage order.
    pub tensors: Vec<(String, Range<usize>, usize, usize)>,
    pub total: usize,
}

#[derive(Clone, Copy)]
enum Init {
    Zeros,
    Ones,
    Normal(f64),
}

struct Builder {
    tensors: Vec<(String, Range<usize>, usize, usize)>,
    inits: Vec<Init>,
    total: usize,
}

impl Builder {
    fn add(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        init: Init,
    ) -> Range<usize> {
        let range = self.total..self.total + rows * cols;
        self.total = range.end;
        self.tensors.push((name.into(), range.clone(), rows, cols));
        self.inits.push(init);
        range
    }

    fn block(&mut self, prefix: &str, d: usize, depth: usize) -> BlockLayout {
        let w = Init::Normal(1.0 / (d as f64).sqrt());
        let out = Init::Normal(1.0 / (d as f64).sqrt() / (2.0 * depth as f64).sqrt());
        let hidden = 4 * d;
        BlockLayout {
            ln1_g: self.add(format!("{prefix}.ln1.g"), 1, d, Init::Ones),
            ln1_b: self.add(format!("{prefix}.ln1.b"), 1, d, Init::Zeros),
            wq: self.add(format!("{prefix}.attn.wq"), d, d, w),
            wk: self.add(format!("{prefix}.attn.wk"), d, d, w),
            wv: self.add(format!("{prefix}.attn.wv"), d, d, w),
            wo: self.add(format!("{prefix}.attn.wo"), d, d, out),
            bo: self.add(format!("{prefix}.attn.bo"), 1, d, Init::Zeros),
            ln2_g: self.add(format!("{prefix}.ln2.g"), 1, d, Init::Ones),
            ln2_b: self.add(format!("{prefix}.ln2.b"), 1, d, Init::Zeros),
            w1: self.add(format!("{prefix}.mlp.w1"), d, hidden, w),
            b1: self.add(format!("{prefix}.mlp.b1"), 1, hidden, Init::Zeros),
            w2: self.add(
                format!("{prefix}.mlp.w2"),
                hidden,
                d,
                Init::Normal(1.0 / (hidden as f64).sqrt() / (2.0 * depth as f64).sqrt()),
            ),
            b2: self.add(format!("{prefix}.mlp.b2"), 1, d, Init::Zeros),
        }
    }
}

fn build(cfg: &ModelConfig) -> (Layout, Vec<Init>) {
    let mut b = Builder {
        tensors: Vec::new(),
        inits: Vec::new(),
        total: 0,
    };
    let (de, dd, v) = (cfg.enc_dim, cfg.dec_dim, cfg.vocab_size);
    let pd = cfg.patch_dim();
    let patch_w = b.add(
        "enc.patch.w",
        pd,
        de,
        Init::Normal(1.0 / (pd as f64).sqrt()),
    );
    let patch_b = b.add("enc.patch.b", 1, de, Init::Zeros);
    let enc_pos = b.add("enc.pos", cfg.max_patches, de, Init::Normal(0.1));
    let enc_blocks = (0..cfg.enc_layers)
        .map(|i| b.block(&format!("enc.{i}"), de, cfg.enc_layers))
        .collect();
    let enc_ln_g = b.add("enc.ln.g", 1, de, Init::Ones);
    let enc_ln_b = b.add("enc.ln.b", 1, de, Init::Zeros);
    let proj_w1 = b.add("proj.w1", de, dd, Init::Normal(1.0 / (de as f64).sqrt()));
    let proj_b1 = b.add("proj.b1", 1, dd, Init::Zeros);
    let proj_w2 = b.add("proj.w2", dd, dd, Init::Normal(1.0 / (dd as f64).sqrt()));
    let proj_b2 = b.add("proj.b2", 1, dd, Init::Zeros);
    let tok_emb = b.add("dec.tok_emb", v, dd, Init::Normal(1.0));
    let dec_pos = b.add("dec.pos", cfg.max_seq, dd, Init::Normal(0.1));
    let dec_blocks = (0..cfg.dec_layers)
        .map(|i| b.block(&format!("dec.{i}"), dd, cfg.dec_layers))
        .collect();
    let dec_ln_g = b.add("dec.ln.g", 1, dd, Init::Ones);
    let dec_ln_b = b.add("dec.ln.b", 1, dd, Init::Zeros);
    let head_w = b.add("head.w", dd, v, Init::Normal(1.0 / (dd as f64).sqrt()));
    let head_b = b.add("head.b", 1, v, Init::Zeros);
    let layout = Layout {
        patch_w,
        patch_b,
        enc_pos,
        enc_blocks,
        enc_ln_g,
        enc_ln_b,
        proj_w1,
        proj_b1,
        proj_w2,
        proj_b2,
        tok_emb,
        dec_pos,
        dec_blocks,
        dec_ln_g,
        dec_ln_b,
        head_w,
        head_b,
        tensors: b.tensors,
        total: b.total,
    };
    (layout, b.inits)
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        build(cfg).0
    }
}

/// All trainable scalars of the policy, one flat vector plus named views.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    config: ModelConfig,
    layout: Layout,
    data: Vec<f64>,
}

impl PolicyParams {
    /// Seeded initialization; identical configs give identical parameters.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let (layout, inits) = build(config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut data = vec![0.0; layout.total];
        for ((_, range, _, _), init) in layout.tensors.iter().zip(inits) {
            match init {
                Init::Zeros => {}
                Init::Ones => data[range.clone()].fill(1.0),
                Init::Normal(std) => {
                    let normal = Normal::new(0.0, std).expect("positive std");
                    for v in &mut data[range.clone()] {
                        *v = normal.sample(&mut rng);
                    }
                }
            }
        }
        Ok(PolicyParams {
            config: config.clone(),
            layout,
            data,
        })
    }

    pub fn unflatten(config: &ModelConfig, data: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        if data.len() != layout.total {
            return Err(Error::Shape(format!(
                "{} parameters given, config needs {}",
                data.len(),
                layout.total
            )));
        }
        Ok(PolicyParams {
            config: config.clone(),
            layout,
            data,
        })
    }

    pub fn flatten(&self) -> &[f64] {
        &self.data
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn slice(&self, range: &Range<usize>) -> &[f64] {
        &self.data[range.clone()]
    }

    /// Looks a tensor up by its dotted name, e.g. `dec.0.attn.wq`.
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .tensors
            .iter()
            .find(|(n, ..)| n == name)
            .map(|(_, r, ..)| &self.data[r.clone()])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self
            .layout
            .tensors
            .iter()
            .find(|(n, ..)| n == name)
            .map(|(_, r, ..)| r.clone())?;
        Some(&mut self.data[range])
    }

    /// Name of the tensor holding flat coordinate `i`.
    pub fn name_of(&self, i: usize) -> Option<&str> {
        self.layout
            .tensors
            .iter()
            .find(|(_, r, ..)| r.contains(&i))
            .map(|(n, ..)| n.as_str())
    }

    /// Zeroes the output head so every next-token distribution is uniform.
    pub fn zero_head(&mut self) {
        let (w, b) = (self.layout.head_w.clone(), self.layout.head_b.clone());
        self.data[w].fill(0.0);
        self.data[b].fill(0.0);
    }

    pub fn max_abs_diff(&self, other: &PolicyParams) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
