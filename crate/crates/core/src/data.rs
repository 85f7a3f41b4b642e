//! Domain model for longitudinal per-subject sequence data.
//!
//! A [`Dataset`] holds one [`SubjectSeries`] per subject: time-ordered
//! observations plus time-invariant descriptors. Splits partition the corpus
//! either by subject id or by global row index.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Kind tag for a subject descriptor; GP kernel families dispatch on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescriptorKind {
    Continuous,
    Categorical,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorSpec {
    pub name: String,
    pub kind: DescriptorKind,
}

/// One observation: a timestamp, `D` feature values, an optional target
/// (score rate in [0,1]) and an observed flag. Identified-missing steps are
/// created with `observed = false` and empty features until generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeStep {
    pub event_time: f64,
    pub features: Vec<f64>,
    pub target: Option<f64>,
    pub observed: bool,
}

impl TimeStep {
    pub fn observed(event_time: f64, features: Vec<f64>, target: Option<f64>) -> Self {
        TimeStep {
            event_time,
            features,
            target,
            observed: true,
        }
    }
}

/// One subject: an opaque id, `Q` time-invariant descriptor values (stored
/// once), and strictly time-increasing steps.
///
/// Descriptor values are numeric codes; categorical labels are mapped to
/// codes by the loader.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSeries {
    pub subject_id: String,
    pub descriptors: Vec<f64>,
    pub steps: Vec<TimeStep>,
}

impl SubjectSeries {
    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }
}

/// The corpus plus its feature/descriptor schemas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub subjects: Vec<SubjectSeries>,
    pub feature_schema: Vec<String>,
    pub descriptor_schema: Vec<DescriptorSpec>,
}

impl Dataset {
    pub fn n_features(&self) -> usize {
        self.feature_schema.len()
    }

    pub fn n_descriptors(&self) -> usize {
        self.descriptor_schema.len()
    }

    pub fn subject(&self, id: &str) -> Option<&SubjectSeries> {
        self.subjects.iter().find(|s| s.subject_id == id)
    }
}

/// Total row count N = Σ_p n_p.
pub fn total_rows(dataset: &Dataset) -> usize {
    dataset.subjects.iter().map(|s| s.steps.len()).sum()
}

/// A well-formedness violation. Violations are data, not faults: `validate`
/// reports all of them instead of failing on the first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    DuplicateId {
        subject_id: String,
    },
    UnsortedTime {
        subject_id: String,
    },
    RaggedFeatures {
        subject_id: String,
        step_index: usize,
        expected: usize,
        got: usize,
    },
    DescriptorArity {
        subject_id: String,
        expected: usize,
        got: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateId { subject_id } => {
                write!(f, "duplicate subject id {subject_id:?}")
            }
            Violation::UnsortedTime { subject_id } => {
                write!(f, "steps of subject {subject_id:?} are not time-sorted")
            }
            Violation::RaggedFeatures {
                subject_id,
                step_index,
                expected,
                got,
            } => write!(
                f,
                "subject {subject_id:?} step {step_index} has {got} features, expected {expected}"
            ),
            Violation::DescriptorArity {
                subject_id,
                expected,
                got,
            } => write!(
                f,
                "subject {subject_id:?} has {got} descriptors, expected {expected}"
            ),
        }
    }
}

/// Scan the whole corpus and report every invariant violation.
/// Pure: two calls on the same dataset return identical lists.
pub fn validate(dataset: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let d = dataset.n_features();
    let q = dataset.n_descriptors();
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    for subject in &dataset.subjects {
        if !seen.insert(&subject.subject_id) {
            out.push(Violation::DuplicateId {
                subject_id: subject.subject_id.clone(),
            });
        }
        if subject.descriptors.len() != q {
            out.push(Violation::DescriptorArity {
                subject_id: subject.subject_id.clone(),
                expected: q,
                got: subject.descriptors.len(),
            });
        }
        if subject
            .steps
            .windows(2)
            .any(|w| w[1].event_time < w[0].event_time)
        {
            out.push(Violation::UnsortedTime {
                subject_id: subject.subject_id.clone(),
            });
        }
        for (i, step) in subject.steps.iter().enumerate() {
            // Unobserved skeleton steps may carry no features yet.
            if step.features.len() != d && (step.observed || !step.features.is_empty()) {
                out.push(Violation::RaggedFeatures {
                    subject_id: subject.subject_id.clone(),
                    step_index: i,
                    expected: d,
                    got: step.features.len(),
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    SubjectBased,
    RowBased,
}

/// Role of a split part; `Generate` exists only in the four-way
/// generation split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartRole {
    Train,
    Val,
    Test,
    Generate,
}

impl PartRole {
    pub fn ordered(n: usize) -> Vec<PartRole> {
        match n {
            3 => vec![PartRole::Train, PartRole::Val, PartRole::Test],
            4 => vec![
                PartRole::Train,
                PartRole::Val,
                PartRole::Test,
                PartRole::Generate,
            ],
            _ => panic!("splits have 3 or 4 parts, got {n}"),
        }
    }
}

impl fmt::Display for PartRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PartRole::Train => "train",
            PartRole::Val => "val",
            PartRole::Test => "test",
            PartRole::Generate => "generate",
        };
        f.write_str(s)
    }
}

/// Membership of one split part: subject ids or global row indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Membership {
    Subjects(BTreeSet<String>),
    Rows(BTreeSet<usize>),
}

impl Membership {
    pub fn len(&self) -> usize {
        match self {
            Membership::Subjects(s) => s.len(),
            Membership::Rows(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A partition of the corpus into train/val/test(/generate) parts.
/// Parts are pairwise disjoint and cover the whole dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub mode: SplitMode,
    pub ratios: Vec<f64>,
    pub parts: BTreeMap<PartRole, Membership>,
}

impl SplitAssignment {
    pub fn part(&self, role: PartRole) -> &Membership {
        self.parts
            .get(&role)
            .unwrap_or_else(|| panic!("split has no {role} part"))
    }
}
