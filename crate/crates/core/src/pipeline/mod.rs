//! Data preparation: splitting, missing-step identification, fixed-length
//! alignment, min-max scaling, and imputation of generated rows.

pub mod align;
pub mod impute;
pub mod missing;
pub mod scale;
pub mod split;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("split ratios must sum to 1, got {sum}")]
    BadRatios { sum: f64 },
    #[error("split part {part} would be empty")]
    EmptyPart { part: String },
    #[error("subject {subject_id} maps to unknown school {school}")]
    UnknownSchool { subject_id: String, school: String },
    #[error("cannot align an empty sequence for subject {subject_id}")]
    EmptySequence { subject_id: String },
    #[error("scaler must be fitted on at least one row")]
    NotFitted,
    #[error("generated rows reference unknown subject {subject_id}")]
    UnknownSubject { subject_id: String },
}

pub use align::{align, AlignedSequence, PadFill, PaddingStrategy};
pub use impute::{impute, GeneratedRow, GeneratedRows, ImputeMode};
pub use missing::{identify_missing, MissingSkeleton};
pub use scale::ScalerState;
pub use split::{sequences_for_part, split, RawSequence};
