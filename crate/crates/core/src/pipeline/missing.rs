//! Missing-step identification against school quiz schedules.
//!
//! Every subject is assumed to take every quiz its school schedules; the
//! missing steps are the schedule minus the subject's observed times.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;

use super::PipelineError;

/// A subject's identified-missing time steps: descriptors are known, all
/// time-varying features are absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingSkeleton {
    pub subject_id: String,
    pub descriptors: Vec<f64>,
    pub times: Vec<f64>,
}

fn time_key(t: f64) -> u64 {
    // Normalize -0.0 so set membership is well defined.
    (t + 0.0).to_bits()
}

/// Per subject: missing times = school schedule − observed times.
/// Subjects with no missing steps are omitted. Output order follows the
/// dataset's subject order; times are ascending.
pub fn identify_missing(
    dataset: &Dataset,
    school_of: &BTreeMap<String, String>,
    schedule_of: &BTreeMap<String, Vec<f64>>,
) -> Result<Vec<MissingSkeleton>, PipelineError> {
    let mut out = Vec::new();
    for subject in &dataset.subjects {
        let school = school_of.get(&subject.subject_id).ok_or_else(|| {
            PipelineError::UnknownSchool {
                subject_id: subject.subject_id.clone(),
                school: "<unmapped>".into(),
            }
        })?;
        let schedule = schedule_of
            .get(school)
            .ok_or_else(|| PipelineError::UnknownSchool {
                subject_id: subject.subject_id.clone(),
                school: school.clone(),
            })?;
        let observed: BTreeSet<u64> = subject
            .steps
            .iter()
            .map(|s| time_key(s.event_time))
            .collect();
        let mut missing: Vec<f64> = schedule
            .iter()
            .copied()
            .filter(|t| !observed.contains(&time_key(*t)))
            .collect();
        if missing.is_empty() {
            continue;
        }
        missing.sort_by(|a, b| a.total_cmp(b));
        out.push(MissingSkeleton {
            subject_id: subject.subject_id.clone(),
            descriptors: subject.descriptors.clone(),
            times: missing,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Dataset, SubjectSeries, TimeStep};

    fn dataset(observed: &[&[f64]]) -> Dataset {
        Dataset {
            subjects: observed
                .iter()
                .enumerate()
                .map(|(i, times)| SubjectSeries {
                    subject_id: format!("s{i}"),
                    descriptors: vec![i as f64],
                    steps: times
                        .iter()
                        .map(|&t| TimeStep::observed(t, vec![1.0], None))
                        .collect(),
                })
                .collect(),
            feature_schema: vec!["f0".into()],
            descriptor_schema: vec![],
        }
    }

    fn maps(schedule: &[f64]) -> (BTreeMap<String, String>, BTreeMap<String, Vec<f64>>) {
        let school_of: BTreeMap<String, String> = (0..4)
            .map(|i| (format!("s{i}"), "A".to_string()))
            .collect();
        let schedule_of: BTreeMap<String, Vec<f64>> =
            [("A".to_string(), schedule.to_vec())].into_iter().collect();
        (school_of, schedule_of)
    }

    #[test]
    fn set_difference_example() {
        // schedule {t1..t5}, observed {t1, t3} → missing {t2, t4, t5}
        let ds = dataset(&[&[1.0, 3.0]]);
        let (school_of, schedule_of) = maps(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let skels = identify_missing(&ds, &school_of, &schedule_of).unwrap();
        assert_eq!(skels.len(), 1);
        assert_eq!(skels[0].times, vec![2.0, 4.0, 5.0]);
    }

    #[test]
    fn fully_observed_subject_omitted() {
        let ds = dataset(&[&[1.0, 2.0], &[1.0]]);
        let (school_of, schedule_of) = maps(&[1.0, 2.0]);
        let skels = identify_missing(&ds, &school_of, &schedule_of).unwrap();
        assert_eq!(skels.len(), 1);
        assert_eq!(skels[0].subject_id, "s1");
        assert_eq!(skels[0].times, vec![2.0]);
    }

    #[test]
    fn unknown_school_is_an_error() {
        let ds = dataset(&[&[1.0]]);
        let school_of: BTreeMap<String, String> =
            [("s0".to_string(), "B".to_string())].into_iter().collect();
        let schedule_of: BTreeMap<String, Vec<f64>> =
            [("A".to_string(), vec![1.0])].into_iter().collect();
        assert!(matches!(
            identify_missing(&ds, &school_of, &schedule_of),
            Err(PipelineError::UnknownSchool { .. })
        ));
    }

    #[test]
    fn union_of_missing_and_observed_is_schedule() {
        let schedule = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let ds = dataset(&[&[0.0, 2.0, 5.0], &[1.0, 3.0]]);
        let (school_of, schedule_of) = maps(&schedule);
        let skels = identify_missing(&ds, &school_of, &schedule_of).unwrap();
        for (subject, skel) in ds.subjects.iter().zip(skels.iter()) {
            let mut union: Vec<f64> = subject.steps.iter().map(|s| s.event_time).collect();
            union.extend_from_slice(&skel.times);
            union.sort_by(|a, b| a.total_cmp(b));
            assert_eq!(union, schedule.to_vec());
        }
    }
}
