//! Classification metrics, reasoning-quality scores and rater agreement.

mod agreement;
mod judge;
mod metrics;

pub use agreement::{average_ranks, fleiss_kappa, quadratic_weighted_kappa, spearman_rho};
pub use judge::{
    decode_response, encode_request, judge_request, local_ssv, JudgeEndpoint, JudgeError,
    JudgeScores, ScoreSource, RUBRIC_VERSION, STUB_SCORE,
};
pub use metrics::{set_metrics, ssv_metric, LabelCounts, SetMetrics};
