//! Per-feature min-max scaling fitted on the training split only.

use serde::{Deserialize, Serialize};

use super::split::RawSequence;
use super::PipelineError;

/// Fitted scaler: per-feature (min, max) from the training rows.
/// Constant features map to 0 and invert back to their constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerState {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl ScalerState {
    /// Fit on every row of the given sequences. Errors when no row is seen.
    pub fn fit(train: &[RawSequence], n_features: usize) -> Result<ScalerState, PipelineError> {
        let mut mins = vec![f64::INFINITY; n_features];
        let mut maxs = vec![f64::NEG_INFINITY; n_features];
        let mut rows = 0usize;
        for seq in train {
            for row in &seq.features {
                rows += 1;
                for (j, &v) in row.iter().enumerate() {
                    mins[j] = mins[j].min(v);
                    maxs[j] = maxs[j].max(v);
                }
            }
        }
        if rows == 0 {
            return Err(PipelineError::NotFitted);
        }
        Ok(ScalerState { mins, maxs })
    }

    pub fn n_features(&self) -> usize {
        self.mins.len()
    }

    /// Map train min→0 and train max→1 per feature; values outside the
    /// fitted range are not clamped.
    pub fn scale_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, &v)| {
                let span = self.maxs[j] - self.mins[j];
                if span > 0.0 {
                    (v - self.mins[j]) / span
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn inverse_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, &v)| {
                let span = self.maxs[j] - self.mins[j];
                if span > 0.0 {
                    self.mins[j] + v * span
                } else {
                    self.mins[j]
                }
            })
            .collect()
    }

    pub fn scale_sequence(&self, seq: &RawSequence) -> RawSequence {
        RawSequence {
            features: seq.features.iter().map(|r| self.scale_row(r)).collect(),
            ..seq.clone()
        }
    }
}
