use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters for both training stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub sft_lr: f64,
    pub sft_epochs: usize,
    pub sft_batch: usize,
    pub rl_lr: f64,
    pub rl_epochs: usize,
    pub rl_batch: usize,
    pub grad_accum: usize,
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub adv_eps: f64,
    pub temperature: f64,
    /// Generation budget per rollout.
    pub max_new_tokens: usize,
    /// Queries drawn per RL epoch; 0 means the whole dataset.
    pub rl_queries_per_epoch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            sft_lr: 2e-4,
            sft_epochs: 4,
            sft_batch: 16,
            rl_lr: 2e-5,
            rl_epochs: 8,
            rl_batch: 1,
            grad_accum: 4,
            group_size: 4,
            clip_eps: 0.2,
            kl_beta: 0.04,
            adv_eps: 1e-8,
            temperature: 1.0,
            max_new_tokens: 160,
            rl_queries_per_epoch: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if !(self.sft_lr >= 0.0 && self.sft_lr.is_finite())
            || !(self.rl_lr >= 0.0 && self.rl_lr.is_finite())
        {
            return bad(format!(
                "learning rates must be finite and non-negative, got {} and {}",
                self.sft_lr, self.rl_lr
            ));
        }
        if self.sft_batch == 0 || self.rl_batch == 0 || self.grad_accum == 0 {
            return bad("batch sizes and grad_accum must be positive".into());
        }
        if self.group_size < 2 {
            return bad(format!(
                "group_size must be at least 2, got {}",
                self.group_size
            ));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad(format!(
                "clip_eps must lie in (0, 1), got {}",
                self.clip_eps
            ));
        }
        if !(self.kl_beta >= 0.0 && self.kl_beta.is_finite()) {
            return bad(format!(
                "kl_beta must be finite and non-negative, got {}",
                self.kl_beta
            ));
        }
        if !(self.adv_eps >= 0.0 && self.adv_eps.is_finite()) {
            return bad(format!(
                "adv_eps must be non-negative, got {}",
                self.adv_eps
            ));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!(
                "temperature must be positive, got {}",
                self.temperature
            ));
        }
        if self.max_new_tokens == 0 {
            return bad("max_new_tokens must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_out_of_range_values() {
        let cases: [fn(&mut TrainConfig); 5] = [
            |c| c.group_size = 1,
            |c| c.clip_eps = 1.0,
            |c| c.kl_beta = -0.1,
            |c| c.sft_lr = f64::NAN,
            |c| c.temperature = 0.0,
        ];
        for f in cases {
            let mut c = TrainConfig::default();
            f(&mut c);
            assert!(c.validate().is_err(), "{c:?}");
        }
    }
}
