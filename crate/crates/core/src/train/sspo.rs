use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::policy::{
    assemble_input, encode_signal, logprob_grad, project, sample_group, sequence_logprobs,
    Decoding, PolicyParams, SignalRecord, TokenSequence, Tokenizer,
};
use crate::reward::{composite_reward, group_advantages, GroupAdvantages};
use crate::trace::{parse_trace, LabelSet};

/// A frozen copy of the policy, used as the reference or the sampler.
#[derive(Debug, Clone)]
pub struct PolicySnapshot {
    params: PolicyParams,
}

impl PolicySnapshot {
    pub fn capture(params: &PolicyParams) -> Self {
        PolicySnapshot {
            params: params.clone(),
        }
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn logprobs(
        &self,
        signal: &SignalRecord,
        query: &TokenSequence,
        target: &TokenSequence,
    ) -> Result<Vec<f64>> {
        sequence_logprobs(signal, query, target, &self.params)
    }
}

/// One group member: the sampled continuation and its per-token log-probs
/// under the sampling policy.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSample {
    pub tokens: TokenSequence,
    pub old_logprobs: Vec<f64>,
}

/// Per-sample pieces of the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTerms {
    pub ratio: f64,
    pub surrogate: f64,
    /// Per-token `x − ln x − 1` with `x = π_ref / π_θ`.
    pub kl_tokens: Vec<f64>,
    pub kl: f64,
}

#[derive(Debug, Clone)]
pub struct SspoObjective {
    pub objective: f64,
    /// Gradient of `objective` (ascent direction).
    pub grad: Vec<f64>,
    pub samples: Vec<SampleTerms>,
}

/// `min(ρA, clip(ρ, 1 − ε, 1 + ε)A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip_eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
    (ratio * advantage).min(clipped * advantage)
}

/// Whether the clipped branch is the minimum and flat in `ratio`.
fn clip_active(ratio: f64, advantage: f64, clip_eps: f64) -> bool {
    (advantage > 0.0 && ratio > 1.0 + clip_eps) || (advantage < 0.0 && ratio < 1.0 - clip_eps)
}

/// `x − ln x − 1` for `ln x = log_ratio`, written to stay accurate near 0.
pub fn k3_term(log_ratio: f64) -> f64 {
    log_ratio.exp_m1() - log_ratio
}

/// Group objective `(1/G) Σ_i [min(ρ_i A_i, clip(ρ_i) A_i) − β·KL_i]` with a
/// sequence-level ratio and token-averaged k3 penalty, and its gradient.
pub fn sspo_objective_and_grad(
    signal: &SignalRecord,
    query: &TokenSequence,
    group: &[GroupSample],
    advantages: &GroupAdvantages,
    params: &PolicyParams,
    reference: &PolicySnapshot,
    cfg: &TrainConfig,
) -> Result<SspoObjective> {
    if group.len() != advantages.len() {
        return Err(Error::Shape(format!(
            "{} samples but {} advantages",
            group.len(),
            advantages.len()
        )));
    }
    if group.is_empty() {
        return Err(Error::InvalidInput("empty group".into()));
    }
    let g = group.len() as f64;
    let beta = cfg.kl_beta;
    let mut grad = vec![0.0; params.len()];
    let mut objective = 0.0;
    let mut samples = Vec::with_capacity(group.len());
    for (s, &a) in group.iter().zip(&advantages.advantages) {
        if s.old_logprobs.len() != s.tokens.len() {
            return Err(Error::Shape(format!(
                "{} old log-probs for {} tokens",
                s.old_logprobs.len(),
                s.tokens.len()
            )));
        }
        let cur = sequence_logprobs(signal, query, &s.tokens, params)?;
        let lref = reference.logprobs(signal, query, &s.tokens)?;
        let k = cur.len() as f64;
        let ratio = (cur.iter().sum::<f64>() - s.old_logprobs.iter().sum::<f64>()).exp();
        let surrogate = clipped_surrogate(ratio, a, cfg.clip_eps);
        let dsurr = if clip_active(ratio, a, cfg.clip_eps) {
            0.0
        } else {
            ratio * a
        };
        let log_x: Vec<f64> = lref.iter().zip(&cur).map(|(r, c)| r - c).collect();
        let kl_tokens: Vec<f64> = log_x.iter().map(|&d| k3_term(d)).collect();
        let kl = kl_tokens.iter().sum::<f64>() / k;
        objective += (surrogate - beta * kl) / g;
        // d(x − ln x − 1)/d log π_θ = 1 − x.
        let weights: Vec<f64> = log_x
            .iter()
            .map(|&d| (dsurr + beta * d.exp_m1() / k) / g)
            .collect();
        if weights.iter().any(|&w| w != 0.0) {
            logprob_grad(signal, query, &s.tokens, &weights, params, &mut grad)?;
        }
        samples.push(SampleTerms {
            ratio,
            surrogate,
            kl_tokens,
            kl,
        });
    }
    Ok(SspoObjective {
        objective,
        grad,
        samples,
    })
}

/// A query for the RL stage: the signal, the prompt and the truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SspoExample {
    pub signal: SignalRecord,
    pub query: TokenSequence,
    pub truth: LabelSet,
}

/// One optimizer step's worth of rollouts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SspoStepLog {
    pub step: usize,
    pub mean_total: f64,
    pub mean_struct: f64,
    pub mean_dice: f64,
    pub kl_mean: f64,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct SspoOutcome {
    pub params: PolicyParams,
    pub steps: Vec<SspoStepLog>,
}

#[derive(Default)]
struct Window {
    queries: usize,
    rollouts: usize,
    total: f64,
    structure: f64,
    dice: f64,
    kl: f64,
    objective: f64,
}

/// Group-sampled policy optimization from an SFT checkpoint, with the
/// reference policy frozen to that checkpoint for the whole run.
pub fn train_sspo(
    dataset: &[SspoExample],
    tokenizer: &Tokenizer,
    labels: &LabelSet,
    cfg: &TrainConfig,
    sft_params: PolicyParams,
) -> Result<SspoOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidInput("empty RL dataset".into()));
    }
    let reference = PolicySnapshot::capture(&sft_params);
    let mut params = sft_params;
    let per_step = cfg.rl_batch * cfg.grad_accum;
    let per_epoch = match cfg.rl_queries_per_epoch {
        0 => dataset.len(),
        n => n.min(dataset.len()),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new(params.len());
    let mut accum = vec![0.0; params.len()];
    let mut window = Window::default();
    let mut steps = Vec::new();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for _ in 0..cfg.rl_epochs {
        order.shuffle(&mut rng);
        for &qi in &order[..per_epoch] {
            let ex = &dataset[qi];
            let rollout_seed: u64 = rng.gen();
            // The sampler is the current policy; parameters only change at
            // the optimizer step below.
            let z = encode_signal(&ex.signal, &params)?;
            let input = assemble_input(&project(&z, &params)?, &ex.query, &params)?;
            let rollouts = sample_group(
                &input,
                cfg.group_size,
                Decoding::Temperature(cfg.temperature),
                cfg.max_new_tokens,
                tokenizer.eos(),
                &params,
                rollout_seed,
            )?;
            let mut rewards = Vec::with_capacity(rollouts.len());
            for r in &rollouts {
                let trace = parse_trace(&tokenizer.decode_generated(&r.tokens), labels);
                let b = composite_reward(&trace, &ex.truth);
                window.total += b.total;
                window.structure += b.structure;
                window.dice += b.diagnosis;
                rewards.push(b.total);
            }
            window.rollouts += rollouts.len();
            let adv = group_advantages(&rewards, cfg.adv_eps)?;
            let group: Vec<GroupSample> = rollouts
                .into_iter()
                .map(|r| GroupSample {
                    tokens: r.tokens,
                    old_logprobs: r.logprobs,
                })
                .collect();
            let out = sspo_objective_and_grad(
                &ex.signal, &ex.query, &group, &adv, &params, &reference, cfg,
            )?;
            window.kl += out.samples.iter().map(|s| s.kl).sum::<f64>();
            window.objective += out.objective;
            window.queries += 1;
            for (a, g) in accum.iter_mut().zip(&out.grad) {
                *a -= g / per_step as f64;
            }
            if window.queries == per_step {
                finish_step(
                    &mut params,
                    &mut accum,
                    &mut state,
                    cfg,
                    &mut window,
                    &mut steps,
                )?;
            }
        }
    }
    if window.queries > 0 {
        // Rescale the partial window to a full-window mean.
        let s = per_step as f64 / window.queries as f64;
        accum.iter_mut().for_each(|a| *a *= s);
        finish_step(
            &mut params,
            &mut accum,
            &mut state,
            cfg,
            &mut window,
            &mut steps,
        )?;
    }
    Ok(SspoOutcome { params, steps })
}

fn finish_step(
    params: &mut PolicyParams,
    accum: &mut [f64],
    state: &mut AdamState,
    cfg: &TrainConfig,
    window: &mut Window,
    steps: &mut Vec<SspoStepLog>,
) -> Result<()> {
    let step = steps.len() + 1;
    let loss = -window.objective / window.queries as f64;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { step });
    }
    adam_step(params.flat_mut(), accum, state, cfg.rl_lr)?;
    let n = window.rollouts as f64;
    steps.push(SspoStepLog {
        step,
        mean_total: window.total / n,
        mean_struct: window.structure / n,
        mean_dice: window.dice / n,
        kl_mean: window.kl / n,
        loss,
    });
    accum.iter_mut().for_each(|a| *a = 0.0);
    *window = Window::default();
    Ok(())
}
