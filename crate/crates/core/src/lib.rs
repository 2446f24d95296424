pub mod clean;
pub mod cli;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod policy;
pub mod reward;
pub mod synth;
pub mod trace;
pub mod train;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/traces.md")]
    pub struct Traces;
    #[doc = include_str!("../../../book/src/rewards.md")]
    pub struct Rewards;
    #[doc = include_str!("../../../book/src/policy.md")]
    pub struct Policy;
    #[doc = include_str!("../../../book/src/training.md")]
    pub struct Training;
    #[doc = include_str!("../../../book/src/data.md")]
    pub struct Data;
    #[doc = include_str!("../../../book/src/evaluation.md")]
    pub struct Evaluation;
}
