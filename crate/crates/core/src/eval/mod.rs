//! Recall protocols (next-period edges, trigger-based engagement) and the
//! synthetic data they run on.

mod edge_recall;
mod engagement;
mod log;
mod synthetic;

pub use edge_recall::{eval_edge_recall, EdgeRecallConfig, EdgeRecallReport};
pub use engagement::{eval_engagement_recall, EngagementRecallConfig, EngagementRecallReport};
pub use log::{Interaction, InteractionLog};
pub use synthetic::{expected_intra_fraction, generate_synthetic, EdgeRecord, SyntheticConfig, SyntheticData};

use crate::error::{Error, Result};

/// Expected recall@k of a uniformly random ranking of `m − 1` candidates
/// with one ground-truth partner: `k / (m − 1)`, clamped to 1.
pub fn random_baseline_recall(m: usize, k: usize) -> Result<f64> {
    if m < 2 {
        return Err(Error::validation(format!("need at least 2 candidates, got {m}")));
    }
    if k == 0 {
        return Err(Error::validation("k must be >= 1"));
    }
    Ok((k as f64 / (m - 1) as f64).min(1.0))
}
