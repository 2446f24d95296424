use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::policy::{logprob_grad, sequence_logprobs, PolicyParams, SignalRecord, TokenSequence};

/// One supervised example: signal, query tokens, tokenized teacher trace.
#[derive(Debug, Clone, PartialEq)]
pub struct SftExample {
    pub signal: SignalRecord,
    pub query: TokenSequence,
    pub target: TokenSequence,
}

/// Mean per-token negative log-likelihood over a batch and its gradient.
pub fn sft_loss_and_grad(batch: &[SftExample], params: &PolicyParams) -> Result<(f64, Vec<f64>)> {
    let tokens = count_tokens(batch)?;
    let w = -1.0 / tokens as f64;
    let mut grad = vec![0.0; params.len()];
    let mut nll = 0.0;
    for ex in batch {
        let weights = vec![w; ex.target.len()];
        let logp = logprob_grad(
            &ex.signal, &ex.query, &ex.target, &weights, params, &mut grad,
        )?;
        nll -= logp.iter().sum::<f64>();
    }
    Ok((nll / tokens as f64, grad))
}

/// Loss only, without the backward pass.
pub fn sft_loss(batch: &[SftExample], params: &PolicyParams) -> Result<f64> {
    let tokens = count_tokens(batch)?;
    let mut nll = 0.0;
    for ex in batch {
        nll -= sequence_logprobs(&ex.signal, &ex.query, &ex.target, params)?
            .iter()
            .sum::<f64>();
    }
    Ok(nll / tokens as f64)
}

fn count_tokens(batch: &[SftExample]) -> Result<usize> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty SFT batch".into()));
    }
    let tokens: usize = batch.iter().map(|ex| ex.target.len()).sum();
    if tokens == 0 {
        return Err(Error::InvalidInput("SFT batch has no target tokens".into()));
    }
    Ok(tokens)
}

/// Mean of the mini-batch losses seen during one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SftEpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct SftOutcome {
    pub params: PolicyParams,
    /// Full-dataset loss before the first update.
    pub initial_loss: f64,
    pub epochs: Vec<SftEpochLog>,
}

/// Seeded shuffled mini-batch Adam over `sft_epochs` passes.
pub fn train_sft(
    dataset: &[SftExample],
    cfg: &TrainConfig,
    params: PolicyParams,
) -> Result<SftOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidInput("empty SFT dataset".into()));
    }
    let mut params = params;
    let initial_loss = sft_loss(dataset, &params)?;
    if !initial_loss.is_finite() {
        return Err(Error::NonFiniteLoss { step: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new(params.len());
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.sft_epochs);
    let mut step = 0;
    for epoch in 1..=cfg.sft_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(cfg.sft_batch) {
            let batch: Vec<SftExample> = chunk.iter().map(|&i| dataset[i].clone()).collect();
            let (loss, grad) = sft_loss_and_grad(&batch, &params)?;
            step += 1;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            adam_step(params.flat_mut(), &grad, &mut state, cfg.sft_lr)?;
            total += loss;
            steps += 1;
        }
        epochs.push(SftEpochLog {
            epoch,
            steps,
            loss: total / steps as f64,
        });
    }
    Ok(SftOutcome {
        params,
        initial_loss,
        epochs,
    })
}
