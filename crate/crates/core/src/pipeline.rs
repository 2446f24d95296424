//! Glue between synthetic records, the policy and the metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{judge_request, set_metrics, JudgeEndpoint, ScoreSource, SetMetrics};
use crate::policy::{
    assemble_input, encode_signal, project, sample_group, Decoding, ModelConfig, PolicyParams,
    SignalRecord, TokenSequence, Tokenizer,
};
use crate::reward::{composite_reward, structure_reward};
use crate::synth::{SynthRecord, TaskSpec, DEFAULT_QUERY};
use crate::trace::{parse_trace, LabelSet};
use crate::train::{SftExample, SspoExample};

/// Policy shape for a task: one patch row per 16 steps, vocabulary from the
/// task labels.
pub fn model_config(spec: &TaskSpec, tokenizer: &Tokenizer, seed: u64) -> Result<ModelConfig> {
    let mut cfg = ModelConfig::for_vocab(tokenizer.len());
    cfg.channels = spec.channels;
    if !spec.steps.is_multiple_of(cfg.patch_len) {
        return Err(Error::InvalidInput(format!(
            "signal length {} is not a multiple of patch_len {}",
            spec.steps, cfg.patch_len
        )));
    }
    cfg.max_patches = spec.steps / cfg.patch_len;
    cfg.seed = seed;
    Ok(cfg)
}

pub fn query_tokens(tokenizer: &Tokenizer) -> TokenSequence {
    tokenizer.encode(DEFAULT_QUERY)
}

pub fn sft_examples(records: &[SynthRecord], tokenizer: &Tokenizer) -> Vec<SftExample> {
    let query = query_tokens(tokenizer);
    records
        .iter()
        .map(|r| SftExample {
            signal: r.signal.clone(),
            query: query.clone(),
            target: tokenizer.encode_target(&r.teacher_trace),
        })
        .collect()
}

pub fn sspo_examples(records: &[SynthRecord], tokenizer: &Tokenizer) -> Vec<SspoExample> {
    let query = query_tokens(tokenizer);
    records
        .iter()
        .map(|r| SspoExample {
            signal: r.signal.clone(),
            query: query.clone(),
            truth: r.truth.clone(),
        })
        .collect()
}

/// Greedy trace text for one signal.
pub fn generate_trace(
    params: &PolicyParams,
    tokenizer: &Tokenizer,
    signal: &SignalRecord,
    max_new: usize,
) -> Result<String> {
    let z = encode_signal(signal, params)?;
    let input = assemble_input(&project(&z, params)?, &query_tokens(tokenizer), params)?;
    let out = sample_group(
        &input,
        1,
        Decoding::Greedy,
        max_new,
        tokenizer.eos(),
        params,
        0,
    )?;
    Ok(tokenizer.decode_generated(&out[0].tokens))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeMeans {
    pub ssv: f64,
    pub gtfa: f64,
    pub sd: f64,
    pub dlc: f64,
    pub es: f64,
    pub source: ScoreSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub metrics: SetMetrics,
    pub ssv: f64,
    pub mean_structure: f64,
    pub mean_diagnosis: f64,
    pub mean_total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judge: Option<JudgeMeans>,
}

/// Scores generated trace texts against their truth sets.
pub fn evaluate_outputs(
    outputs: &[(String, LabelSet)],
    vocab: &LabelSet,
    judge: Option<&JudgeEndpoint>,
) -> Result<EvalReport> {
    if outputs.is_empty() {
        return Err(Error::InvalidInput("nothing to evaluate".into()));
    }
    let n = outputs.len() as f64;
    let mut pairs = Vec::with_capacity(outputs.len());
    let (mut s, mut d, mut valid) = (0.0, 0.0, 0usize);
    let mut judged = [0.0; 5];
    let mut source = None;
    for (text, truth) in outputs {
        let trace = parse_trace(text, vocab);
        let b = composite_reward(&trace, truth);
        s += b.structure;
        d += b.diagnosis;
        if structure_reward(&trace) == 1.0 {
            valid += 1;
        }
        if let Some(endpoint) = judge {
            let j = judge_request(&trace, truth, endpoint)?;
            for (acc, v) in judged.iter_mut().zip([j.ssv, j.gtfa, j.sd, j.dlc, j.es]) {
                *acc += v;
            }
            source = Some(j.source);
        }
        pairs.push((truth.clone(), trace.answer_set().clone()));
    }
    let judge = source.map(|source| JudgeMeans {
        ssv: judged[0] / n,
        gtfa: judged[1] / n,
        sd: judged[2] / n,
        dlc: judged[3] / n,
        es: judged[4] / n,
        source,
    });
    Ok(EvalReport {
        n: outputs.len(),
        metrics: set_metrics(&pairs)?,
        ssv: 100.0 * valid as f64 / n,
        mean_structure: s / n,
        mean_diagnosis: d / n,
        mean_total: (s + d) / n,
        judge,
    })
}
