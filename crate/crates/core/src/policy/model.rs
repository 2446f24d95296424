use std::ops::Range;

use super::ops::{
    attend, attend_backward, gelu, gelu_grad, layer_norm, layer_norm_backward, linear,
    linear_backward, log_softmax_in_place, AttentionCache, LayerNormCache,
};
use super::{BlockLayout, Matrix, PolicyParams, SignalRecord, TokenSequence};
use crate::error::{Error, Result};

/// Decoder-space rows `[H_signal ; E(query)]` with positional embeddings added.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedInput {
    pub rows: Matrix,
    /// Number of leading rows that came from the signal.
    pub signal_rows: usize,
}

impl EmbeddedInput {
    pub fn len(&self) -> usize {
        self.rows.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.rows == 0
    }
}

fn pair_mut<'a>(
    v: &'a mut [f64],
    a: &Range<usize>,
    b: &Range<usize>,
) -> (&'a mut [f64], &'a mut [f64]) {
    debug_assert!(a.end <= b.start);
    let (lo, hi) = v.split_at_mut(b.start);
    (&mut lo[a.clone()], &mut hi[..b.len()])
}

pub(super) struct BlockCache {
    ln1: LayerNormCache,
    a: Vec<f64>,
    attn: AttentionCache,
    ln2: LayerNormCache,
    m: Vec<f64>,
    u: Vec<f64>,
    hidden: Vec<f64>,
}

pub(super) fn block_forward(
    p: &PolicyParams,
    bl: &BlockLayout,
    x: Vec<f64>,
    n: usize,
    d: usize,
    causal: bool,
) -> (Vec<f64>, BlockCache) {
    let heads = p.config().heads;
    let (a, ln1) = layer_norm(&x, n, d, p.slice(&bl.ln1_g), p.slice(&bl.ln1_b));
    let q = linear(&a, n, d, p.slice(&bl.wq), d, None);
    let k = linear(&a, n, d, p.slice(&bl.wk), d, None);
    let v = linear(&a, n, d, p.slice(&bl.wv), d, None);
    let (mixed, probs) = attend(&q, &k, &v, n, d, heads, causal);
    let att = linear(&mixed, n, d, p.slice(&bl.wo), d, Some(p.slice(&bl.bo)));
    let x1: Vec<f64> = x.iter().zip(&att).map(|(a, b)| a + b).collect();
    let (m, ln2) = layer_norm(&x1, n, d, p.slice(&bl.ln2_g), p.slice(&bl.ln2_b));
    let hdim = 4 * d;
    let u = linear(&m, n, d, p.slice(&bl.w1), hdim, Some(p.slice(&bl.b1)));
    let hidden: Vec<f64> = u.iter().map(|&z| gelu(z)).collect();
    let f = linear(&hidden, n, hdim, p.slice(&bl.w2), d, Some(p.slice(&bl.b2)));
    let x2 = x1.iter().zip(&f).map(|(a, b)| a + b).collect();
    let cache = BlockCache {
        ln1,
        a,
        attn: AttentionCache {
            q,
            k,
            v,
            probs,
            mixed,
        },
        ln2,
        m,
        u,
        hidden,
    };
    (x2, cache)
}

pub(super) fn block_backward(
    p: &PolicyParams,
    bl: &BlockLayout,
    c: &BlockCache,
    dy: &[f64],
    n: usize,
    d: usize,
    causal: bool,
    grad: &mut [f64],
) -> Vec<f64> {
    let heads = p.config().heads;
    let hdim = 4 * d;
    // MLP branch.
    let mut dhidden = vec![0.0; n * hdim];
    {
        let (dw2, db2) = pair_mut(grad, &bl.w2, &bl.b2);
        linear_backward(
            &c.hidden,
            n,
            hdim,
            p.slice(&bl.w2),
            d,
            dy,
            Some(&mut dhidden),
            dw2,
            Some(db2),
        );
    }
    let du: Vec<f64> = dhidden
        .iter()
        .zip(&c.u)
        .map(|(g, &z)| g * gelu_grad(z))
        .collect();
    let mut dm = vec![0.0; n * d];
    {
        let (dw1, db1) = pair_mut(grad, &bl.w1, &bl.b1);
        linear_backward(
            &c.m,
            n,
            d,
            p.slice(&bl.w1),
            hdim,
            &du,
            Some(&mut dm),
            dw1,
            Some(db1),
        );
    }
    let mut dx1 = dy.to_vec();
    {
        let (dg, db) = pair_mut(grad, &bl.ln2_g, &bl.ln2_b);
        layer_norm_backward(&dm, n, d, p.slice(&bl.ln2_g), &c.ln2, &mut dx1, dg, db);
    }
    // Attention branch.
    let mut dmixed = vec![0.0; n * d];
    {
        let (dwo, dbo) = pair_mut(grad, &bl.wo, &bl.bo);
        linear_backward(
            &c.attn.mixed,
            n,
            d,
            p.slice(&bl.wo),
            d,
            &dx1,
            Some(&mut dmixed),
            dwo,
            Some(dbo),
        );
    }
    let mut dq = vec![0.0; n * d];
    let mut dk = vec![0.0; n * d];
    let mut dv = vec![0.0; n * d];
    attend_backward(
        &c.attn, &dmixed, n, d, heads, causal, &mut dq, &mut dk, &mut dv,
    );
    let mut da = vec![0.0; n * d];
    for (w, dproj) in [(&bl.wq, &dq), (&bl.wk, &dk), (&bl.wv, &dv)] {
        linear_backward(
            &c.a,
            n,
            d,
            p.slice(w),
            d,
            dproj,
            Some(&mut da),
            &mut grad[w.clone()],
            None,
        );
    }
    let mut dx = dx1;
    {
        let (dg, db) = pair_mut(grad, &bl.ln1_g, &bl.ln1_b);
        layer_norm_backward(&da, n, d, p.slice(&bl.ln1_g), &c.ln1, &mut dx, dg, db);
    }
    dx
}

struct EncoderCache {
    patches: Vec<f64>,
    n: usize,
    blocks: Vec<BlockCache>,
    ln: LayerNormCache,
}

fn check_signal(x: &SignalRecord, p: &PolicyParams) -> Result<usize> {
    let cfg = p.config();
    if x.channels() != cfg.channels {
        return Err(Error::Shape(format!(
            "signal has {} channels, model expects {}",
            x.channels(),
            cfg.channels
        )));
    }
    if !x.steps().is_multiple_of(cfg.patch_len) {
        return Err(Error::Shape(format!(
            "signal length {} is not a multiple of patch length {}",
            x.steps(),
            cfg.patch_len
        )));
    }
    let n = x.steps() / cfg.patch_len;
    if n > cfg.max_patches {
        return Err(Error::Shape(format!(
            "{n} patches exceed the model's {} positions",
            cfg.max_patches
        )));
    }
    Ok(n)
}

fn encoder_forward(x: &SignalRecord, p: &PolicyParams) -> Result<(Vec<f64>, EncoderCache)> {
    let n = check_signal(x, p)?;
    let cfg = p.config();
    let l = p.layout();
    let (pd, d) = (cfg.patch_dim(), cfg.enc_dim);
    // Row-major T×C storage makes each patch a contiguous run.
    let patches = x.samples().data.clone();
    let mut h = linear(
        &patches,
        n,
        pd,
        p.slice(&l.patch_w),
        d,
        Some(p.slice(&l.patch_b)),
    );
    for (v, pos) in h.iter_mut().zip(p.slice(&l.enc_pos)) {
        *v += pos;
    }
    let mut blocks = Vec::with_capacity(l.enc_blocks.len());
    for bl in &l.enc_blocks {
        let (next, cache) = block_forward(p, bl, h, n, d, false);
        blocks.push(cache);
        h = next;
    }
    let (z, ln) = layer_norm(&h, n, d, p.slice(&l.enc_ln_g), p.slice(&l.enc_ln_b));
    Ok((
        z,
        EncoderCache {
            patches,
            n,
            blocks,
            ln,
        },
    ))
}

fn encoder_backward(p: &PolicyParams, c: &EncoderCache, dz: &[f64], grad: &mut [f64]) -> Vec<f64> {
    let cfg = p.config();
    let l = p.layout();
    let (pd, d, n) = (cfg.patch_dim(), cfg.enc_dim, c.n);
    let mut dh = vec![0.0; n * d];
    {
        let (dg, db) = pair_mut(grad, &l.enc_ln_g, &l.enc_ln_b);
        layer_norm_backward(dz, n, d, p.slice(&l.enc_ln_g), &c.ln, &mut dh, dg, db);
    }
    for (bl, cache) in l.enc_blocks.iter().zip(&c.blocks).rev() {
        dh = block_backward(p, bl, cache, &dh, n, d, false, grad);
    }
    for (g, &v) in grad[l.enc_pos.start..l.enc_pos.start + n * d]
        .iter_mut()
        .zip(&dh)
    {
        *g += v;
    }
    let mut dpatches = vec![0.0; n * pd];
    let (dw, db) = pair_mut(grad, &l.patch_w, &l.patch_b);
    linear_backward(
        &c.patches,
        n,
        pd,
        p.slice(&l.patch_w),
        d,
        &dh,
        Some(&mut dpatches),
        dw,
        Some(db),
    );
    dpatches
}

/// Patch-level features `L × enc_dim`.
pub fn encode_signal(x: &SignalRecord, params: &PolicyParams) -> Result<Matrix> {
    let (z, c) = encoder_forward(x, params)?;
    Matrix::from_vec(c.n, params.config().enc_dim, z)
}

/// Vector-Jacobian product of [`encode_signal`]: given a cotangent on the
/// encoder output, returns its pullback onto the signal and onto every
/// parameter.
pub fn encode_signal_vjp(
    x: &SignalRecord,
    params: &PolicyParams,
    dz: &Matrix,
) -> Result<(Matrix, Vec<f64>)> {
    let (_, cache) = encoder_forward(x, params)?;
    if dz.rows != cache.n || dz.cols != params.config().enc_dim {
        return Err(Error::Shape(
            "cotangent does not match encoder output".into(),
        ));
    }
    let mut grad = vec![0.0; params.len()];
    let dpatches = encoder_backward(params, &cache, &dz.data, &mut grad);
    Ok((Matrix::from_vec(x.steps(), x.channels(), dpatches)?, grad))
}

struct ProjectorCache {
    z: Vec<f64>,
    u: Vec<f64>,
    g: Vec<f64>,
}

fn projector_forward(z: &[f64], n: usize, p: &PolicyParams) -> (Vec<f64>, ProjectorCache) {
    let cfg = p.config();
    let l = p.layout();
    let (de, dd) = (cfg.enc_dim, cfg.dec_dim);
    let u = linear(z, n, de, p.slice(&l.proj_w1), dd, Some(p.slice(&l.proj_b1)));
    let g: Vec<f64> = u.iter().map(|&v| gelu(v)).collect();
    let h = linear(
        &g,
        n,
        dd,
        p.slice(&l.proj_w2),
        dd,
        Some(p.slice(&l.proj_b2)),
    );
    (
        h,
        ProjectorCache {
            z: z.to_vec(),
            u,
            g,
        },
    )
}

fn projector_backward(
    p: &PolicyParams,
    c: &ProjectorCache,
    n: usize,
    dh: &[f64],
    grad: &mut [f64],
) -> Vec<f64> {
    let cfg = p.config();
    let l = p.layout();
    let (de, dd) = (cfg.enc_dim, cfg.dec_dim);
    let mut dg = vec![0.0; n * dd];
    {
        let (dw, db) = pair_mut(grad, &l.proj_w2, &l.proj_b2);
        linear_backward(
            &c.g,
            n,
            dd,
            p.slice(&l.proj_w2),
            dd,
            dh,
            Some(&mut dg),
            dw,
            Some(db),
        );
    }
    let du: Vec<f64> = dg
        .iter()
        .zip(&c.u)
        .map(|(g, &u)| g * gelu_grad(u))
        .collect();
    let mut dz = vec![0.0; n * de];
    let (dw, db) = pair_mut(grad, &l.proj_w1, &l.proj_b1);
    linear_backward(
        &c.z,
        n,
        de,
        p.slice(&l.proj_w1),
        dd,
        &du,
        Some(&mut dz),
        dw,
        Some(db),
    );
    dz
}

/// Row-wise two-layer GELU perceptron into the decoder embedding space.
pub fn project(z: &Matrix, params: &PolicyParams) -> Result<Matrix> {
    if z.cols != params.config().enc_dim {
        return Err(Error::Shape(format!(
            "projector expects {} columns, got {}",
            params.config().enc_dim,
            z.cols
        )));
    }
    let (h, _) = projector_forward(&z.data, z.rows, params);
    Matrix::from_vec(z.rows, params.config().dec_dim, h)
}

fn add_token_row(out: &mut [f64], params: &PolicyParams, token: usize, position: usize) {
    let l = params.layout();
    let d = params.config().dec_dim;
    let emb = &params.slice(&l.tok_emb)[token * d..(token + 1) * d];
    let pos = &params.slice(&l.dec_pos)[position * d..(position + 1) * d];
    for ((o, e), q) in out.iter_mut().zip(emb).zip(pos) {
        *o = e + q;
    }
}

pub(super) fn token_row(params: &PolicyParams, token: usize, position: usize) -> Vec<f64> {
    let mut row = vec![0.0; params.config().dec_dim];
    add_token_row(&mut row, params, token, position);
    row
}

fn check_tokens(seq: &TokenSequence, params: &PolicyParams) -> Result<()> {
    let v = params.config().vocab_size;
    match seq.ids.iter().find(|&&t| t >= v) {
        Some(t) => Err(Error::InvalidInput(format!(
            "token id {t} outside vocabulary of {v}"
        ))),
        None => Ok(()),
    }
}

/// Concatenates projected signal rows and query embeddings along the
/// sequence axis and adds positional embeddings over the joint sequence.
pub fn assemble_input(
    h_signal: &Matrix,
    query: &TokenSequence,
    params: &PolicyParams,
) -> Result<EmbeddedInput> {
    let cfg = params.config();
    let d = cfg.dec_dim;
    if h_signal.cols != d {
        return Err(Error::Shape(format!(
            "signal rows have {} columns, decoder uses {d}",
            h_signal.cols
        )));
    }
    check_tokens(query, params)?;
    let n = h_signal.rows + query.len();
    if n > cfg.max_seq {
        return Err(Error::InvalidInput(format!(
            "input of {n} rows exceeds max_seq {}",
            cfg.max_seq
        )));
    }
    let mut rows = Matrix::zeros(n, d);
    let pos = params.slice(&params.layout().dec_pos);
    for i in 0..h_signal.rows {
        for ((o, h), q) in rows
            .row_mut(i)
            .iter_mut()
            .zip(h_signal.row(i))
            .zip(&pos[i * d..(i + 1) * d])
        {
            *o = h + q;
        }
    }
    for (j, &tok) in query.ids.iter().enumerate() {
        let i = h_signal.rows + j;
        add_token_row(rows.row_mut(i), params, tok, i);
    }
    Ok(EmbeddedInput {
        rows,
        signal_rows: h_signal.rows,
    })
}

struct DecoderCache {
    n: usize,
    first_out: usize,
    blocks: Vec<BlockCache>,
    ln: LayerNormCache,
    normed: Vec<f64>,
    /// Log-probabilities for rows `first_out..n`.
    logp: Vec<f64>,
}

/// Runs the decoder over `x0` (n×dec_dim) and returns log-softmax rows from
/// `first_out` onward.
fn decoder_forward(p: &PolicyParams, x0: Vec<f64>, n: usize, first_out: usize) -> DecoderCache {
    let cfg = p.config();
    let l = p.layout();
    let (d, v) = (cfg.dec_dim, cfg.vocab_size);
    let mut h = x0;
    let mut blocks = Vec::with_capacity(l.dec_blocks.len());
    for bl in &l.dec_blocks {
        let (next, cache) = block_forward(p, bl, h, n, d, true);
        blocks.push(cache);
        h = next;
    }
    let (normed, ln) = layer_norm(&h, n, d, p.slice(&l.dec_ln_g), p.slice(&l.dec_ln_b));
    let m = n - first_out;
    let mut logp = linear(
        &normed[first_out * d..],
        m,
        d,
        p.slice(&l.head_w),
        v,
        Some(p.slice(&l.head_b)),
    );
    for row in logp.chunks_mut(v) {
        log_softmax_in_place(row);
    }
    DecoderCache {
        n,
        first_out,
        blocks,
        ln,
        normed,
        logp,
    }
}

fn decoder_backward(
    p: &PolicyParams,
    c: &DecoderCache,
    dlogits: &[f64],
    grad: &mut [f64],
) -> Vec<f64> {
    let cfg = p.config();
    let l = p.layout();
    let (d, v, n) = (cfg.dec_dim, cfg.vocab_size, c.n);
    let m = n - c.first_out;
    let mut dnormed = vec![0.0; n * d];
    {
        let (dw, db) = pair_mut(grad, &l.head_w, &l.head_b);
        linear_backward(
            &c.normed[c.first_out * d..],
            m,
            d,
            p.slice(&l.head_w),
            v,
            dlogits,
            Some(&mut dnormed[c.first_out * d..]),
            dw,
            Some(db),
        );
    }
    let mut dh = vec![0.0; n * d];
    {
        let (dg, db) = pair_mut(grad, &l.dec_ln_g, &l.dec_ln_b);
        layer_norm_backward(&dnormed, n, d, p.slice(&l.dec_ln_g), &c.ln, &mut dh, dg, db);
    }
    for (bl, cache) in l.dec_blocks.iter().zip(&c.blocks).rev() {
        dh = block_backward(p, bl, cache, &dh, n, d, true, grad);
    }
    dh
}

fn decoder_rows(
    input: &EmbeddedInput,
    target: &TokenSequence,
    params: &PolicyParams,
) -> Result<(Vec<f64>, usize)> {
    let cfg = params.config();
    check_tokens(target, params)?;
    if input.is_empty() {
        return Err(Error::InvalidInput("empty input sequence".into()));
    }
    if target.is_empty() {
        return Err(Error::InvalidInput("empty target sequence".into()));
    }
    let n = input.len() + target.len() - 1;
    if n > cfg.max_seq {
        return Err(Error::InvalidInput(format!(
            "input plus target ({n} rows) exceeds max_seq {}",
            cfg.max_seq
        )));
    }
    let d = cfg.dec_dim;
    let mut x0 = vec![0.0; n * d];
    x0[..input.len() * d].copy_from_slice(&input.rows.data);
    for (t, &tok) in target.ids[..target.len() - 1].iter().enumerate() {
        let i = input.len() + t;
        add_token_row(&mut x0[i * d..(i + 1) * d], params, tok, i);
    }
    Ok((x0, n))
}

fn gather(c: &DecoderCache, target: &TokenSequence, v: usize) -> Vec<f64> {
    target
        .ids
        .iter()
        .enumerate()
        .map(|(t, &y)| c.logp[t * v + y])
        .collect()
}

/// Per-token `log p(y_t | I, y_<t)` for a target continuing `input`.
pub fn forward_logprobs(
    input: &EmbeddedInput,
    target: &TokenSequence,
    params: &PolicyParams,
) -> Result<Vec<f64>> {
    let (x0, n) = decoder_rows(input, target, params)?;
    let cache = decoder_forward(params, x0, n, input.len() - 1);
    Ok(gather(&cache, target, params.config().vocab_size))
}

/// Full-path convenience: encode, project, assemble, score.
pub fn sequence_logprobs(
    signal: &SignalRecord,
    query: &TokenSequence,
    target: &TokenSequence,
    params: &PolicyParams,
) -> Result<Vec<f64>> {
    let z = encode_signal(signal, params)?;
    let h = project(&z, params)?;
    let input = assemble_input(&h, query, params)?;
    forward_logprobs(&input, target, params)
}

/// Per-token log-probabilities and the gradient of `Σ_t weights[t]·log p_t`
/// with respect to every parameter, accumulated into `grad`.
pub fn logprob_grad(
    signal: &SignalRecord,
    query: &TokenSequence,
    target: &TokenSequence,
    weights: &[f64],
    params: &PolicyParams,
    grad: &mut [f64],
) -> Result<Vec<f64>> {
    if weights.len() != target.len() {
        return Err(Error::Shape(format!(
            "{} weights for {} target tokens",
            weights.len(),
            target.len()
        )));
    }
    if grad.len() != params.len() {
        return Err(Error::Shape(
            "gradient buffer does not match parameters".into(),
        ));
    }
    let cfg = params.config();
    let l = params.layout();
    let (d, v) = (cfg.dec_dim, cfg.vocab_size);

    let (z, enc_cache) = encoder_forward(signal, params)?;
    let nsig = enc_cache.n;
    let (h, proj_cache) = projector_forward(&z, nsig, params);
    let input = assemble_input(&Matrix::from_vec(nsig, d, h)?, query, params)?;
    let (x0, n) = decoder_rows(&input, target, params)?;
    let first_out = input.len() - 1;
    let dec_cache = decoder_forward(params, x0, n, first_out);
    let logp = gather(&dec_cache, target, v);

    let mut dlogits = vec![0.0; target.len() * v];
    for (t, (&y, &w)) in target.ids.iter().zip(weights).enumerate() {
        if w == 0.0 {
            continue;
        }
        let row = &mut dlogits[t * v..(t + 1) * v];
        for (g, &lp) in row.iter_mut().zip(&dec_cache.logp[t * v..(t + 1) * v]) {
            *g = -w * lp.exp();
        }
        row[y] += w;
    }
    let dx0 = decoder_backward(params, &dec_cache, &dlogits, grad);

    // Scatter the input-row gradient onto positions, token embeddings and
    // the projected signal rows.
    for (g, &dv) in grad[l.dec_pos.start..l.dec_pos.start + n * d]
        .iter_mut()
        .zip(&dx0)
    {
        *g += dv;
    }
    let tokens = query.ids.iter().chain(&target.ids[..target.len() - 1]);
    for (j, &tok) in tokens.enumerate() {
        let i = nsig + j;
        let dst = l.tok_emb.start + tok * d;
        for (g, &dv) in grad[dst..dst + d].iter_mut().zip(&dx0[i * d..(i + 1) * d]) {
            *g += dv;
        }
    }
    let dz = projector_backward(params, &proj_cache, nsig, &dx0[..nsig * d], grad);
    encoder_backward(params, &enc_cache, &dz, grad);
    Ok(logp)
}
