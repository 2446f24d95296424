use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward::{dice_reward, structure_reward};
use crate::trace::{LabelSet, StructuredTrace};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl LabelCounts {
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

/// Multi-label metrics under three averaging modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetMetrics {
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub sample_f1: f64,
    pub per_label: BTreeMap<String, LabelCounts>,
}

/// `num / den` with 0/0 resolved to 0.
fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Micro: pooled counts. Macro: mean per-label F1 over labels present in
/// any truth set. Sample: mean per-pair Dice.
pub fn set_metrics(pairs: &[(LabelSet, LabelSet)]) -> Result<SetMetrics> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput(
            "set metrics need at least one pair".into(),
        ));
    }
    let mut per_label: BTreeMap<String, LabelCounts> = BTreeMap::new();
    for (truth, pred) in pairs {
        for label in truth.union(pred).iter() {
            let c = per_label.entry(label.to_string()).or_default();
            match (truth.contains(label), pred.contains(label)) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => unreachable!("label came from the union"),
            }
        }
    }
    let (tp, fp, fn_) = per_label
        .values()
        .fold((0, 0, 0), |(a, b, c), k| (a + k.tp, b + k.fp, c + k.fn_));
    let micro_precision = ratio(tp, tp + fp);
    let micro_recall = ratio(tp, tp + fn_);
    let micro_f1 = if micro_precision + micro_recall == 0.0 {
        0.0
    } else {
        2.0 * micro_precision * micro_recall / (micro_precision + micro_recall)
    };
    let in_truth: Vec<&LabelCounts> = per_label.values().filter(|c| c.tp + c.fn_ > 0).collect();
    let macro_f1 = if in_truth.is_empty() {
        0.0
    } else {
        in_truth.iter().map(|c| c.f1()).sum::<f64>() / in_truth.len() as f64
    };
    let sample_f1 = pairs.iter().map(|(t, p)| dice_reward(t, p)).sum::<f64>() / pairs.len() as f64;
    Ok(SetMetrics {
        micro_precision,
        micro_recall,
        micro_f1,
        macro_f1,
        sample_f1,
        per_label,
    })
}

/// Percentage of traces satisfying all five format rules.
pub fn ssv_metric(traces: &[StructuredTrace]) -> Result<f64> {
    if traces.is_empty() {
        return Err(Error::InvalidInput("SSV needs at least one trace".into()));
    }
    let valid = traces.iter().filter(|t| structure_reward(t) == 1.0).count();
    Ok(100.0 * valid as f64 / traces.len() as f64)
}
