//! Estimator output shared by every synchronizer.

use serde::{Deserialize, Serialize};

/// Per-class scores of the two classification stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageScores {
    pub coarse: Vec<f32>,
    pub fine: Vec<f32>,
}

/// Integer timing-offset estimate `theta = theta_d + M * theta_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncEstimate {
    pub theta_t_hat: usize,
    pub theta_d_hat: usize,
    pub theta_hat: usize,
    pub scores: Option<StageScores>,
    /// Set by detectors that found no convincing peak.
    pub low_confidence: bool,
}

impl SyncEstimate {
    pub fn from_parts(theta_t_hat: usize, theta_d_hat: usize, m: usize) -> Self {
        debug_assert!(theta_d_hat < m);
        SyncEstimate {
            theta_t_hat,
            theta_d_hat,
            theta_hat: theta_d_hat + m * theta_t_hat,
            scores: None,
            low_confidence: false,
        }
    }

    /// Splits a combined offset in `[0, MN)` into its two components.
    pub fn from_offset(theta_hat: usize, m: usize) -> Self {
        Self::from_parts(theta_hat / m, theta_hat % m, m)
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Like [`argmax`] but treats values within `rel_tol` of the maximum as
/// tied, so round-off cannot reorder mathematically equal entries.
pub fn argmax_tol(values: &[f64], rel_tol: f64) -> usize {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tol = rel_tol * max.abs().max(f64::MIN_POSITIVE);
    values.iter().position(|&v| v >= max - tol).unwrap_or(0)
}
