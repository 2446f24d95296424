//! Supervised cold start and group-sampled policy optimization.

mod adam;
mod config;
mod sft;
mod sspo;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use config::TrainConfig;
pub use sft::{sft_loss, sft_loss_and_grad, train_sft, SftEpochLog, SftExample, SftOutcome};
pub use sspo::{
    clipped_surrogate, k3_term, sspo_objective_and_grad, train_sspo, GroupSample, PolicySnapshot,
    SampleTerms, SspoExample, SspoObjective, SspoOutcome, SspoStepLog,
};
