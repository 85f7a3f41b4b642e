//! Longitudinal sequence generation and imputation toolkit.
//!
//! Implements LSTM sequence VAEs — with either a standard-normal latent
//! prior or an additive multi-output GP prior over subject descriptors — for
//! filling identified-missing time steps in per-subject longitudinal data,
//! plus the full subject-based split / pad / scale / impute / retrain
//! experiment pipeline on top of a small reverse-mode autodiff core.

pub mod cells;
pub mod data;
pub mod exec;
pub mod gp;
pub mod gradcheck;
pub mod harness;
pub mod linalg;
pub mod models;
pub mod optim;
pub mod pipeline;
pub mod predict;
pub mod stats;
pub mod tape;
pub mod tensor;
