//! Fixed-length sequence alignment with three padding strategies.
//!
//! Sequences longer than the fixed length are cut after the first T steps.
//! Shorter sequences are padded at the end: zero fills with zero vectors,
//! ffill repeats the last observed vector, bfill fills the pad positions
//! with the first observed vector. The mask marks real versus padded
//! positions; padded timestamps extrapolate the observed cadence so every
//! aligned step still carries a usable time value.

use serde::{Deserialize, Serialize};

use super::split::RawSequence;
use super::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PadFill {
    Zero,
    Ffill,
    Bfill,
}

impl PadFill {
    pub fn tag(&self) -> &'static str {
        match self {
            PadFill::Zero => "zero",
            PadFill::Ffill => "ffill",
            PadFill::Bfill => "bfill",
        }
    }

    pub fn all() -> [PadFill; 3] {
        [PadFill::Zero, PadFill::Ffill, PadFill::Bfill]
    }
}

impl std::str::FromStr for PadFill {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zero" => Ok(PadFill::Zero),
            "ffill" => Ok(PadFill::Ffill),
            "bfill" => Ok(PadFill::Bfill),
            other => Err(format!("unknown padding {other:?} (zero|ffill|bfill)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaddingStrategy {
    pub fill: PadFill,
    pub fixed_length: usize,
}

/// A scaled, fixed-length sequence plus masks.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSequence {
    pub subject_id: String,
    pub descriptors: Vec<f64>,
    pub times: Vec<f64>,
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    /// Real (true) versus padded (false) positions.
    pub mask: Vec<bool>,
    /// Positions carrying an actual target value.
    pub target_mask: Vec<bool>,
}

impl AlignedSequence {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_real(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// Median gap of the observed timestamps; 1.0 for single-step sequences.
fn median_gap(times: &[f64]) -> f64 {
    if times.len() < 2 {
        return 1.0;
    }
    let mut gaps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.sort_by(|a, b| a.total_cmp(b));
    let g = gaps[gaps.len() / 2];
    if g > 0.0 {
        g
    } else {
        1.0
    }
}

pub fn align(
    raw: &RawSequence,
    strategy: &PaddingStrategy,
) -> Result<AlignedSequence, PipelineError> {
    let n = raw.times.len();
    if n == 0 {
        return Err(PipelineError::EmptySequence {
            subject_id: raw.subject_id.clone(),
        });
    }
    let t_len = strategy.fixed_length;
    let keep = n.min(t_len);
    let d = raw.features[0].len();

    let mut times: Vec<f64> = raw.times[..keep].to_vec();
    let mut features: Vec<Vec<f64>> = raw.features[..keep].to_vec();
    let mut targets: Vec<f64> = raw.targets[..keep]
        .iter()
        .map(|t| t.unwrap_or(0.0))
        .collect();
    let mut target_mask: Vec<bool> = raw.targets[..keep].iter().map(|t| t.is_some()).collect();
    let mut mask = vec![true; keep];

    if keep < t_len {
        let gap = median_gap(&times);
        let last_time = times[keep - 1];
        let pad_vec = match strategy.fill {
            PadFill::Zero => vec![0.0; d],
            PadFill::Ffill => features[keep - 1].clone(),
            PadFill::Bfill => features[0].clone(),
        };
        for k in 0..t_len - keep {
            times.push(last_time + gap * (k + 1) as f64);
            features.push(pad_vec.clone());
            targets.push(0.0);
            target_mask.push(false);
            mask.push(false);
        }
    }

    Ok(AlignedSequence {
        subject_id: raw.subject_id.clone(),
        descriptors: raw.descriptors.clone(),
        times,
        features,
        targets,
        mask,
        target_mask,
    })
}
