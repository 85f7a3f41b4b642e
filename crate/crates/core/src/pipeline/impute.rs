//! Merging generated rows back into the corpus.
//!
//! Subject-based imputation routes each subject's generated rows into that
//! subject's home split part and re-sorts the merged sequence by time.
//! Row-based imputation appends the generated rows to the parts
//! proportionally by the parts' original row counts. Every part receives
//! imputations, not just the training part.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Membership, PartRole, SplitAssignment, SubjectSeries, TimeStep};

use super::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputeMode {
    ById,
    ByRow,
}

/// One generated row: features in raw (inverse-scaled) space plus the
/// target predicted in the prediction phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedRow {
    pub event_time: f64,
    pub features: Vec<f64>,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedRows {
    pub subject_id: String,
    pub rows: Vec<GeneratedRow>,
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Seeded subject selection: shuffle the generated subjects and keep the
/// first ⌊f·count⌉. The fraction seed is independent of the split seed, and
/// prefixes nest across fractions.
fn select_subjects<'a>(
    generated: &'a [GeneratedRows],
    fraction_pct: f64,
    fraction_seed: u64,
) -> Vec<&'a GeneratedRows> {
    let mut order: Vec<usize> = (0..generated.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(fraction_seed);
    order.shuffle(&mut rng);
    let count = round_half_up(fraction_pct / 100.0 * generated.len() as f64)
        .min(generated.len());
    let mut chosen: Vec<usize> = order[..count].to_vec();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| &generated[i]).collect()
}

fn generated_step(row: &GeneratedRow) -> TimeStep {
    TimeStep {
        event_time: row.event_time,
        features: row.features.clone(),
        target: Some(row.target),
        observed: false,
    }
}

fn resort_and_renumber(subject: &mut SubjectSeries, seq_feature: Option<usize>) {
    subject
        .steps
        .sort_by(|a, b| a.event_time.total_cmp(&b.event_time));
    if let Some(idx) = seq_feature {
        for (i, step) in subject.steps.iter_mut().enumerate() {
            if idx < step.features.len() {
                step.features[idx] = i as f64;
            }
        }
    }
}

/// Build the part datasets for a row-based split: each part holds the
/// per-subject fragments of its row range.
fn row_part_datasets(
    original: &Dataset,
    split: &SplitAssignment,
) -> BTreeMap<PartRole, Dataset> {
    let mut out = BTreeMap::new();
    for (role, membership) in &split.parts {
        let rows = match membership {
            Membership::Rows(r) => r,
            Membership::Subjects(_) => panic!("row-based imputation needs a row-based split"),
        };
        let mut subjects: Vec<SubjectSeries> = Vec::new();
        let mut index: BTreeMap<&str, usize> = BTreeMap::new();
        let mut global = 0usize;
        for subject in &original.subjects {
            for step in &subject.steps {
                if rows.contains(&global) {
                    let idx = *index.entry(subject.subject_id.as_str()).or_insert_with(|| {
                        subjects.push(SubjectSeries {
                            subject_id: subject.subject_id.clone(),
                            descriptors: subject.descriptors.clone(),
                            steps: Vec::new(),
                        });
                        subjects.len() - 1
                    });
                    subjects[idx].steps.push(step.clone());
                }
                global += 1;
            }
        }
        out.insert(
            *role,
            Dataset {
                subjects,
                feature_schema: original.feature_schema.clone(),
                descriptor_schema: original.descriptor_schema.clone(),
            },
        );
    }
    out
}

/// Merge generated rows into per-part datasets.
pub fn impute(
    original: &Dataset,
    split: &SplitAssignment,
    generated: &[GeneratedRows],
    mode: ImputeMode,
    fraction_pct: f64,
    fraction_seed: u64,
    seq_feature: Option<usize>,
) -> Result<BTreeMap<PartRole, Dataset>, PipelineError> {
    let selected = select_subjects(generated, fraction_pct, fraction_seed);
    for g in &selected {
        if original.subject(&g.subject_id).is_none() {
            return Err(PipelineError::UnknownSubject {
                subject_id: g.subject_id.clone(),
            });
        }
    }

    match mode {
        ImputeMode::ById => {
            // Home part per subject.
            let mut home: BTreeMap<&str, PartRole> = BTreeMap::new();
            for (role, membership) in &split.parts {
                let ids = match membership {
                    Membership::Subjects(ids) => ids,
                    Membership::Rows(_) => {
                        panic!("subject-based imputation needs a subject-based split")
                    }
                };
                for id in ids {
                    home.insert(id.as_str(), *role);
                }
            }
            let mut parts: BTreeMap<PartRole, Dataset> = split
                .parts
                .keys()
                .map(|role| {
                    let ids = match split.part(*role) {
                        Membership::Subjects(ids) => ids,
                        Membership::Rows(_) => unreachable!(),
                    };
                    let subjects = original
                        .subjects
                        .iter()
                        .filter(|s| ids.contains(&s.subject_id))
                        .cloned()
                        .collect();
                    (
                        *role,
                        Dataset {
                            subjects,
                            feature_schema: original.feature_schema.clone(),
                            descriptor_schema: original.descriptor_schema.clone(),
                        },
                    )
                })
                .collect();

            for g in &selected {
                let role = *home.get(g.subject_id.as_str()).ok_or_else(|| {
                    PipelineError::UnknownSubject {
                        subject_id: g.subject_id.clone(),
                    }
                })?;
                let part = parts.get_mut(&role).expect("role present");
                let subject = part
                    .subjects
                    .iter_mut()
                    .find(|s| s.subject_id == g.subject_id)
                    .expect("home part holds the subject");
                subject.steps.extend(g.rows.iter().map(generated_step));
                resort_and_renumber(subject, seq_feature);
            }
            Ok(parts)
        }
        ImputeMode::ByRow => {
            let mut parts = row_part_datasets(original, split);
            // Flatten selected rows in subject-then-time order.
            let flat: Vec<(&str, &GeneratedRow)> = selected
                .iter()
                .flat_map(|g| g.rows.iter().map(move |r| (g.subject_id.as_str(), r)))
                .collect();
            // Proportional boundaries by original part row counts.
            let roles: Vec<PartRole> = parts.keys().copied().collect();
            let counts: Vec<usize> = roles
                .iter()
                .map(|r| split.part(*r).len())
                .collect();
            let total: usize = counts.iter().sum();
            let mut bounds = Vec::with_capacity(roles.len());
            let mut cum = 0usize;
            for (i, c) in counts.iter().enumerate() {
                cum += c;
                let b = if i + 1 == roles.len() {
                    flat.len()
                } else {
                    round_half_up(cum as f64 / total as f64 * flat.len() as f64)
                };
                bounds.push(b.min(flat.len()));
            }
            let mut start = 0usize;
            for (role, &end) in roles.iter().zip(bounds.iter()) {
                let part = parts.get_mut(role).expect("role present");
                let mut touched: Vec<String> = Vec::new();
                for (sid, row) in &flat[start..end] {
                    let idx = match part.subjects.iter().position(|s| s.subject_id == *sid) {
                        Some(i) => i,
                        None => {
                            let descriptors = original
                                .subject(sid)
                                .expect("checked above")
                                .descriptors
                                .clone();
                            part.subjects.push(SubjectSeries {
                                subject_id: sid.to_string(),
                                descriptors,
                                steps: Vec::new(),
                            });
                            part.subjects.len() - 1
                        }
                    };
                    part.subjects[idx].steps.push(generated_step(row));
                    if !touched.contains(&sid.to_string()) {
                        touched.push(sid.to_string());
                    }
                }
                for sid in touched {
                    let subject = part
                        .subjects
                        .iter_mut()
                        .find(|s| s.subject_id == sid)
                        .expect("just inserted");
                    resort_and_renumber(subject, seq_feature);
                }
                start = end;
            }
            Ok(parts)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{validate, DescriptorKind, DescriptorSpec, SplitMode};
    use crate::pipeline::split::split;

    fn dataset(n_subjects: usize, steps_each: usize) -> Dataset {
        Dataset {
            subjects: (0..n_subjects)
                .map(|i| SubjectSeries {
                    subject_id: format!("s{i}"),
                    descriptors: vec![i as f64],
                    steps: (0..steps_each)
                        .map(|t| {
                            TimeStep::observed(
                                (2 * t) as f64,
                                vec![t as f64, (i * t) as f64],
                                Some(0.5),
                            )
                        })
                        .collect(),
                })
                .collect(),
            feature_schema: vec!["seq".into(), "f1".into()],
            descriptor_schema: vec![DescriptorSpec {
                name: "d0".into(),
                kind: DescriptorKind::Continuous,
            }],
        }
    }

    fn generated_for(ids: &[&str], times: &[f64]) -> Vec<GeneratedRows> {
        ids.iter()
            .map(|id| GeneratedRows {
                subject_id: id.to_string(),
                rows: times
                    .iter()
                    .map(|&t| GeneratedRow {
                        event_time: t,
                        features: vec![99.0, 1.5],
                        target: 0.4,
                    })
                    .collect(),
            })
            .collect()
    }

    #[test]
    fn fraction_zero_returns_original_parts() {
        let ds = dataset(10, 4);
        let sp = split(&ds, SplitMode::SubjectBased, &[0.7, 0.1, 0.2], 3).unwrap();
        let gen = generated_for(&["s0", "s1"], &[1.0]);
        let parts = impute(&ds, &sp, &gen, ImputeMode::ById, 0.0, 9, Some(0)).unwrap();
        let merged_rows: usize = parts
            .values()
            .map(|d| crate::data::total_rows(d))
            .sum();
        assert_eq!(merged_rows, crate::data::total_rows(&ds));
        for part in parts.values() {
            for s in &part.subjects {
                let orig = ds.subject(&s.subject_id).unwrap();
                assert_eq!(s, orig);
            }
        }
    }

    #[test]
    fn full_imputation_merges_all_generated_rows() {
        let ds = dataset(10, 4);
        let sp = split(&ds, SplitMode::SubjectBased, &[0.7, 0.1, 0.2], 3).unwrap();
        let gen = generated_for(&["s0", "s5", "s9"], &[1.0, 3.0]);
        let parts = impute(&ds, &sp, &gen, ImputeMode::ById, 100.0, 9, Some(0)).unwrap();
        let merged_rows: usize = parts.values().map(crate::data::total_rows).sum();
        assert_eq!(merged_rows, crate::data::total_rows(&ds) + 6);
        // Sequences stay time-sorted and sequence numbers are consistent.
        for part in parts.values() {
            assert!(validate(part).is_empty());
            for s in &part.subjects {
                for (i, st) in s.steps.iter().enumerate() {
                    if ["s0", "s5", "s9"].contains(&s.subject_id.as_str()) {
                        assert_eq!(st.features[0], i as f64);
                    }
                }
            }
        }
    }

    #[test]
    fn by_id_preserves_split_membership() {
        let ds = dataset(10, 3);
        let sp = split(&ds, SplitMode::SubjectBased, &[0.7, 0.1, 0.2], 3).unwrap();
        let all_ids: Vec<&str> = ds.subjects.iter().map(|s| s.subject_id.as_str()).collect();
        let gen = generated_for(&all_ids, &[1.0]);
        let parts = impute(&ds, &sp, &gen, ImputeMode::ById, 100.0, 4, None).unwrap();
        for (role, part) in &parts {
            let members = match sp.part(*role) {
                Membership::Subjects(ids) => ids,
                _ => unreachable!(),
            };
            for s in &part.subjects {
                assert!(members.contains(&s.subject_id));
            }
        }
    }

    #[test]
    fn unknown_subject_rejected() {
        let ds = dataset(3, 2);
        let sp = split(&ds, SplitMode::SubjectBased, &[0.4, 0.3, 0.3], 0).unwrap();
        let gen = generated_for(&["ghost"], &[1.0]);
        assert!(matches!(
            impute(&ds, &sp, &gen, ImputeMode::ById, 100.0, 0, None),
            Err(PipelineError::UnknownSubject { .. })
        ));
    }

    #[test]
    fn by_row_appends_proportionally() {
        let ds = dataset(10, 4); // 40 rows
        let sp = split(&ds, SplitMode::RowBased, &[0.5, 0.25, 0.25], 0).unwrap();
        let gen = generated_for(&["s0", "s1", "s2", "s3"], &[1.0, 3.0]); // 8 rows
        let parts = impute(&ds, &sp, &gen, ImputeMode::ByRow, 100.0, 0, None).unwrap();
        let train_rows = crate::data::total_rows(&parts[&PartRole::Train]);
        let val_rows = crate::data::total_rows(&parts[&PartRole::Val]);
        let test_rows = crate::data::total_rows(&parts[&PartRole::Test]);
        // 20/10/10 original plus 4/2/2 generated.
        assert_eq!(train_rows, 24);
        assert_eq!(val_rows, 12);
        assert_eq!(test_rows, 12);
        for part in parts.values() {
            assert!(validate(part).is_empty());
        }
    }

    #[test]
    fn fraction_selection_is_nested() {
        let ds = dataset(10, 2);
        let all_ids: Vec<&str> = ds.subjects.iter().map(|s| s.subject_id.as_str()).collect();
        let gen = generated_for(&all_ids, &[1.0]);
        let pick = |pct: f64| -> Vec<String> {
            select_subjects(&gen, pct, 123)
                .iter()
                .map(|g| g.subject_id.clone())
                .collect()
        };
        let p30 = pick(30.0);
        let p50 = pick(50.0);
        let p100 = pick(100.0);
        assert_eq!(p30.len(), 3);
        assert_eq!(p50.len(), 5);
        assert_eq!(p100.len(), 10);
        assert!(p30.iter().all(|id| p50.contains(id)));
        assert!(p50.iter().all(|id| p100.contains(id)));
    }
}
