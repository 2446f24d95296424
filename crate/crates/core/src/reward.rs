//! Composite format + set-overlap reward and group-relative advantages.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{LabelSet, StructuredTrace};

/// Number of format rules: the tag hierarchy plus four non-empty sections.
pub const N_RULES: usize = 5;

/// Default stabilizer added to the group variance.
pub const DEFAULT_ADV_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub structure: f64,
    pub diagnosis: f64,
    pub total: f64,
}

/// Fraction of the five format rules satisfied.
pub fn structure_reward(trace: &StructuredTrace) -> f64 {
    trace.satisfied_rules() as f64 / N_RULES as f64
}

/// Dice overlap `2|Y ∩ Ŷ| / (|Y| + |Ŷ|)`. Two empty sets agree perfectly.
pub fn dice_reward(truth: &LabelSet, predicted: &LabelSet) -> f64 {
    let denom = truth.len() + predicted.len();
    if denom == 0 {
        return 1.0;
    }
    (2 * truth.intersection_len(predicted)) as f64 / denom as f64
}

pub fn composite_reward(trace: &StructuredTrace, truth: &LabelSet) -> RewardBreakdown {
    let structure = structure_reward(trace);
    let diagnosis = dice_reward(truth, trace.answer_set());
    RewardBreakdown {
        structure,
        diagnosis,
        total: structure + diagnosis,
    }
}

/// Rewards of one group normalized by their own mean and population variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAdvantages {
    pub rewards: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
    pub advantages: Vec<f64>,
    pub epsilon: f64,
}

impl GroupAdvantages {
    pub fn len(&self) -> usize {
        self.advantages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.advantages.is_empty()
    }
}

pub fn group_advantages(rewards: &[f64], epsilon: f64) -> Result<GroupAdvantages> {
    if rewards.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "group advantages need at least 2 rewards, got {}",
            rewards.len()
        )));
    }
    if !(epsilon >= 0.0) || rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::InvalidInput(
            "group advantages need finite rewards and a non-negative epsilon".into(),
        ));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let variance = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let scale = (variance + epsilon).sqrt();
    let advantages = rewards
        .iter()
        .map(|r| if scale > 0.0 { (r - mean) / scale } else { 0.0 })
        .collect();
    Ok(GroupAdvantages {
        rewards: rewards.to_vec(),
        mean,
        variance,
        advantages,
        epsilon,
    })
}
