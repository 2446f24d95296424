//! Dense row-major kernels and their hand-written backward passes.
//!
//! Forward kernels accumulate in a fixed loop order so that the full-sequence
//! path and the one-row incremental path used while sampling produce the same
//! bits.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

pub const LN_EPS: f64 = 1e-5;

/// `x (n×k) · w (k×m) + b`.
pub fn linear(x: &[f64], n: usize, k: usize, w: &[f64], m: usize, b: Option<&[f64]>) -> Vec<f64> {
    debug_assert_eq!(x.len(), n * k);
    debug_assert_eq!(w.len(), k * m);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        if let Some(b) = b {
            row.copy_from_slice(b);
        }
        for (p, &xv) in x[i * k..(i + 1) * k].iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (o, &wv) in row.iter_mut().zip(&w[p * m..(p + 1) * m]) {
                *o += xv * wv;
            }
        }
    }
    out
}

/// Accumulates gradients of `y = x·w + b` given `dy`. Any of the outputs may
/// be skipped.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward(
    x: &[f64],
    n: usize,
    k: usize,
    w: &[f64],
    m: usize,
    dy: &[f64],
    dx: Option<&mut [f64]>,
    dw: &mut [f64],
    db: Option<&mut [f64]>,
) {
    if let Some(dx) = dx {
        for i in 0..n {
            let dyr = &dy[i * m..(i + 1) * m];
            for p in 0..k {
                let wr = &w[p * m..(p + 1) * m];
                dx[i * k + p] += dyr.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
    for i in 0..n {
        let dyr = &dy[i * m..(i + 1) * m];
        for (p, &xv) in x[i * k..(i + 1) * k].iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (g, &d) in dw[p * m..(p + 1) * m].iter_mut().zip(dyr) {
                *g += xv * d;
            }
        }
    }
    if let Some(db) = db {
        for i in 0..n {
            for (g, &d) in db.iter_mut().zip(&dy[i * m..(i + 1) * m]) {
                *g += d;
            }
        }
    }
}

/// Exact-erf GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

pub struct LayerNormCache {
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub fn layer_norm(
    x: &[f64],
    n: usize,
    d: usize,
    g: &[f64],
    b: &[f64],
) -> (Vec<f64>, LayerNormCache) {
    let mut y = vec![0.0; n * d];
    let mut xhat = vec![0.0; n * d];
    let mut rstd = vec![0.0; n];
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd[i] = r;
        for j in 0..d {
            let h = (row[j] - mean) * r;
            xhat[i * d + j] = h;
            y[i * d + j] = h * g[j] + b[j];
        }
    }
    (y, LayerNormCache { xhat, rstd })
}

pub fn layer_norm_backward(
    dy: &[f64],
    n: usize,
    d: usize,
    g: &[f64],
    cache: &LayerNormCache,
    dx: &mut [f64],
    dg: &mut [f64],
    db: &mut [f64],
) {
    for i in 0..n {
        let dyr = &dy[i * d..(i + 1) * d];
        let xh = &cache.xhat[i * d..(i + 1) * d];
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for j in 0..d {
            dg[j] += dyr[j] * xh[j];
            db[j] += dyr[j];
            let dxh = dyr[j] * g[j];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xh[j];
        }
        mean_dxhat /= d as f64;
        mean_dxhat_xhat /= d as f64;
        let r = cache.rstd[i];
        for j in 0..d {
            let dxh = dyr[j] * g[j];
            dx[i * d + j] += r * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
}

/// In-place log-softmax of one row; returns nothing, row becomes log-probs.
pub fn log_softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
    let lse = max + sum.ln();
    for v in row.iter_mut() {
        *v -= lse;
    }
}

/// Softmax over the first `len` entries of `scores` into `probs`.
pub fn softmax_prefix(scores: &[f64], probs: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (p, &s) in probs.iter_mut().zip(scores) {
        *p = (s - max).exp();
        sum += *p;
    }
    for p in probs.iter_mut() {
        *p /= sum;
    }
}

/// Multi-head self-attention intermediates for one sequence.
pub struct AttentionCache {
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// heads × n × n, zero above the diagonal when causal.
    pub probs: Vec<f64>,
    pub mixed: Vec<f64>,
}

/// Attention core on already projected q, k, v (each n×d). Returns the
/// concatenated head outputs (n×d) and the attention weights.
pub fn attend(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    n: usize,
    d: usize,
    heads: usize,
    causal: bool,
) -> (Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut mixed = vec![0.0; n * d];
    let mut probs = vec![0.0; heads * n * n];
    let mut scores = vec![0.0; n];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..n {
            let len = if causal { i + 1 } else { n };
            let qi = &q[i * d + off..i * d + off + dh];
            for j in 0..len {
                let kj = &k[j * d + off..j * d + off + dh];
                scores[j] = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
            }
            let p = &mut probs[(h * n + i) * n..(h * n + i) * n + len];
            softmax_prefix(&scores[..len], p);
            let out = &mut mixed[i * d + off..i * d + off + dh];
            for (j, &pj) in p.iter().enumerate() {
                let vj = &v[j * d + off..j * d + off + dh];
                for (o, &vv) in out.iter_mut().zip(vj) {
                    *o += pj * vv;
                }
            }
        }
    }
    (mixed, probs)
}

/// Backward through the attention core. Accumulates into dq, dk, dv.
#[allow(clippy::too_many_arguments)]
pub fn attend_backward(
    cache: &AttentionCache,
    dmixed: &[f64],
    n: usize,
    d: usize,
    heads: usize,
    causal: bool,
    dq: &mut [f64],
    dk: &mut [f64],
    dv: &mut [f64],
) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dp = vec![0.0; n];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..n {
            let len = if causal { i + 1 } else { n };
            let p = &cache.probs[(h * n + i) * n..(h * n + i) * n + len];
            let dout = &dmixed[i * d + off..i * d + off + dh];
            let mut dot = 0.0;
            for j in 0..len {
                let vj = &cache.v[j * d + off..j * d + off + dh];
                dp[j] = dout.iter().zip(vj).map(|(a, b)| a * b).sum::<f64>();
                dot += p[j] * dp[j];
                for (g, &o) in dv[j * d + off..j * d + off + dh].iter_mut().zip(dout) {
                    *g += p[j] * o;
                }
            }
            let qi = &cache.q[i * d + off..i * d + off + dh];
            for j in 0..len {
                let ds = p[j] * (dp[j] - dot) * scale;
                if ds == 0.0 {
                    continue;
                }
                let kj = &cache.k[j * d + off..j * d + off + dh];
                for t in 0..dh {
                    dq[i * d + off + t] += ds * kj[t];
                    dk[j * d + off + t] += ds * qi[t];
                }
            }
        }
    }
}
