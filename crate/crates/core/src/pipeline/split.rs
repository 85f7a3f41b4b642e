//! Subject-based and row-based corpus splitting.
//!
//! Subject-based splits shuffle subject ids and cut at cumulative
//! round-half-up boundaries, so each subject's full sequence stays in one
//! part. Row-based splits cut the global row sequence in file order at the
//! same boundaries, which may slice a subject across parts.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, Membership, PartRole, SplitAssignment, SplitMode};

use super::PipelineError;

/// Cumulative boundary with half-up rounding: `round(cum_ratio · count)`.
fn boundaries(ratios: &[f64], count: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(ratios.len());
    let mut cum = 0.0;
    for (i, r) in ratios.iter().enumerate() {
        cum += r;
        let b = if i + 1 == ratios.len() {
            count
        } else {
            (cum * count as f64 + 0.5).floor() as usize
        };
        out.push(b.min(count));
    }
    out
}

fn check_ratios(ratios: &[f64]) -> Result<(), PipelineError> {
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || ratios.iter().any(|r| *r <= 0.0) {
        return Err(PipelineError::BadRatios { sum });
    }
    Ok(())
}

/// Partition the corpus. Ratios must sum to 1 and carry 3 or 4 parts
/// (train/val/test with an optional generate part).
pub fn split(
    dataset: &Dataset,
    mode: SplitMode,
    ratios: &[f64],
    seed: u64,
) -> Result<SplitAssignment, PipelineError> {
    check_ratios(ratios)?;
    let roles = PartRole::ordered(ratios.len());
    let mut parts: BTreeMap<PartRole, Membership> = BTreeMap::new();

    match mode {
        SplitMode::SubjectBased => {
            let mut ids: Vec<&str> = dataset
                .subjects
                .iter()
                .map(|s| s.subject_id.as_str())
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            ids.shuffle(&mut rng);
            let bounds = boundaries(ratios, ids.len());
            let mut start = 0;
            for (role, &end) in roles.iter().zip(bounds.iter()) {
                if end <= start {
                    return Err(PipelineError::EmptyPart {
                        part: role.to_string(),
                    });
                }
                parts.insert(
                    *role,
                    Membership::Subjects(ids[start..end].iter().map(|s| s.to_string()).collect()),
                );
                start = end;
            }
        }
        SplitMode::RowBased => {
            let total: usize = dataset.subjects.iter().map(|s| s.steps.len()).sum();
            let bounds = boundaries(ratios, total);
            let mut start = 0;
            for (role, &end) in roles.iter().zip(bounds.iter()) {
                if end <= start {
                    return Err(PipelineError::EmptyPart {
                        part: role.to_string(),
                    });
                }
                parts.insert(*role, Membership::Rows((start..end).collect()));
                start = end;
            }
        }
    }

    Ok(SplitAssignment {
        mode,
        ratios: ratios.to_vec(),
        parts,
    })
}

/// A subject's (or subject fragment's) rows as plain vectors, ready for
/// scaling and alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSequence {
    pub subject_id: String,
    pub descriptors: Vec<f64>,
    pub times: Vec<f64>,
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<Option<f64>>,
}

/// Materialize the sequences belonging to one split part.
///
/// Subject-based parts return whole subjects; row-based parts return the
/// part's row runs grouped per subject (fragments for cut subjects). Steps
/// without materialized features (un-generated skeletons) are skipped.
pub fn sequences_for_part(
    dataset: &Dataset,
    assignment: &SplitAssignment,
    role: PartRole,
) -> Vec<RawSequence> {
    match assignment.part(role) {
        Membership::Subjects(ids) => dataset
            .subjects
            .iter()
            .filter(|s| ids.contains(&s.subject_id))
            .map(raw_from_subject)
            .filter(|r| !r.times.is_empty())
            .collect(),
        Membership::Rows(rows) => {
            let mut by_subject: Vec<RawSequence> = Vec::new();
            let mut index_of: BTreeMap<&str, usize> = BTreeMap::new();
            let mut global = 0usize;
            for subject in &dataset.subjects {
                for step in &subject.steps {
                    if rows.contains(&global) && !step.features.is_empty() {
                        let idx = *index_of
                            .entry(subject.subject_id.as_str())
                            .or_insert_with(|| {
                                by_subject.push(RawSequence {
                                    subject_id: subject.subject_id.clone(),
                                    descriptors: subject.descriptors.clone(),
                                    times: Vec::new(),
                                    features: Vec::new(),
                                    targets: Vec::new(),
                                });
                                by_subject.len() - 1
                            });
                        by_subject[idx].times.push(step.event_time);
                        by_subject[idx].features.push(step.features.clone());
                        by_subject[idx].targets.push(step.target);
                    }
                    global += 1;
                }
            }
            by_subject
        }
    }
}

/// All of a dataset's subjects as raw sequences (used on part datasets
/// produced by imputation).
pub fn dataset_to_sequences(dataset: &Dataset) -> Vec<RawSequence> {
    dataset
        .subjects
        .iter()
        .map(raw_from_subject)
        .filter(|r| !r.times.is_empty())
        .collect()
}

/// Non-subject sequence formation: reshape a row stream into fixed-length
/// windows with no regard for subject boundaries, the way a flat table is
/// blindly folded into (batch, length, dims). Windows can mix adjacent
/// subjects, which is exactly what row-number training does to sequences.
fn windows_from_rows(
    rows: impl Iterator<Item = (f64, Vec<f64>, Option<f64>)>,
    window: usize,
) -> Vec<RawSequence> {
    assert!(window >= 1);
    let mut out: Vec<RawSequence> = Vec::new();
    let mut current: Option<RawSequence> = None;
    for (i, (time, features, target)) in rows.enumerate() {
        if i % window == 0 {
            if let Some(seq) = current.take() {
                out.push(seq);
            }
            current = Some(RawSequence {
                subject_id: format!("window{}", i / window),
                descriptors: Vec::new(),
                times: Vec::new(),
                features: Vec::new(),
                targets: Vec::new(),
            });
        }
        let seq = current.as_mut().expect("window open");
        // Window-local positions keep times strictly increasing even when
        // adjacent subjects' clocks overlap.
        seq.times.push((i % window) as f64);
        seq.features.push(features);
        seq.targets.push(target);
    }
    if let Some(seq) = current.take() {
        out.push(seq);
    }
    out
}

/// Windowed sequences over one part of a row-based split.
pub fn windowed_part_sequences(
    dataset: &Dataset,
    assignment: &SplitAssignment,
    role: PartRole,
    window: usize,
) -> Vec<RawSequence> {
    let rows = match assignment.part(role) {
        Membership::Rows(rows) => rows,
        Membership::Subjects(_) => panic!("windowed sequences need a row-based split"),
    };
    let mut stream = Vec::new();
    let mut global = 0usize;
    for subject in &dataset.subjects {
        for step in &subject.steps {
            if rows.contains(&global) && !step.features.is_empty() {
                stream.push((step.event_time, step.features.clone(), step.target));
            }
            global += 1;
        }
    }
    windows_from_rows(stream.into_iter(), window)
}

/// Windowed sequences over a whole (already merged) part dataset.
pub fn windowed_dataset_sequences(dataset: &Dataset, window: usize) -> Vec<RawSequence> {
    let stream = dataset.subjects.iter().flat_map(|subject| {
        subject
            .steps
            .iter()
            .filter(|s| !s.features.is_empty())
            .map(|s| (s.event_time, s.features.clone(), s.target))
    });
    windows_from_rows(stream, window)
}

fn raw_from_subject(subject: &crate::data::SubjectSeries) -> RawSequence {
    let steps: Vec<_> = subject
        .steps
        .iter()
        .filter(|s| !s.features.is_empty())
        .collect();
    RawSequence {
        subject_id: subject.subject_id.clone(),
        descriptors: subject.descriptors.clone(),
        times: steps.iter().map(|s| s.event_time).collect(),
        features: steps.iter().map(|s| s.features.clone()).collect(),
        targets: steps.iter().map(|s| s.target).collect(),
    }
}
