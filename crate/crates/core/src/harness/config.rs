//! Experiment configuration (JSON on disk) and config hashing.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::DescriptorSpec;
use crate::gp::KernelComponent;
use crate::models::ElboConfig;
use crate::pipeline::align::PadFill;
use crate::predict::{CellKind, PredictorConfig};

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingMode {
    Mcar,
    Mnar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingSpec {
    pub mode: MissingMode,
    pub rate: f64,
}

/// Synthetic corpus specification. Descriptors follow a fixed kind cycle of
/// continuous, continuous, categorical, binary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub subjects: usize,
    pub schools: usize,
    pub schedule_len: usize,
    /// Feature count D; feature 0 is the per-subject sequence number.
    pub features: usize,
    /// Descriptor count Q.
    pub descriptors: usize,
    /// Strength of the descriptor → latent coupling; 0 decouples them.
    pub coupling: f64,
    pub missing: MissingSpec,
    #[serde(default = "default_feature_noise")]
    pub feature_noise: f64,
    #[serde(default = "default_target_noise")]
    pub target_noise: f64,
    #[serde(default = "default_latent_dim")]
    pub latent_dim: usize,
    /// Mean-reversion coefficient of the latent trajectories.
    #[serde(default = "default_ar_coeff")]
    pub ar_coeff: f64,
    /// Memory of the target's exponentially-weighted latent state: 0 makes
    /// the target a per-step readout, larger values make it depend on the
    /// sequence history.
    #[serde(default = "default_target_memory")]
    pub target_memory: f64,
}

fn default_target_memory() -> f64 {
    0.75
}

fn default_feature_noise() -> f64 {
    0.35
}
fn default_target_noise() -> f64 {
    0.02
}
fn default_latent_dim() -> usize {
    2
}
fn default_ar_coeff() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSource {
    pub path: String,
    pub features: Vec<String>,
    pub descriptors: Vec<DescriptorSpec>,
    /// Column holding the subject → school mapping.
    #[serde(default = "default_school_column")]
    pub school_column: String,
}

fn default_school_column() -> String {
    "school_id".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synth(SynthSpec),
    Csv(CsvSource),
}

/// One kernel component named against the descriptor schema. The pseudo
/// input `"time"` refers to event time when `include_time` is on. Initial
/// hyperparameters are plain positive values; omitted ones start at the
/// normalized defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum KernelComponentConfig {
    SquaredExponential {
        inputs: Vec<String>,
        #[serde(default)]
        variance: Option<f64>,
        #[serde(default)]
        lengthscales: Option<Vec<f64>>,
    },
    Categorical {
        input: String,
        #[serde(default)]
        variance: Option<f64>,
    },
    Interaction {
        categorical: String,
        inputs: Vec<String>,
        #[serde(default)]
        variance: Option<f64>,
        #[serde(default)]
        lengthscales: Option<Vec<f64>>,
    },
    BinaryProduct {
        binary: String,
        inputs: Vec<String>,
        #[serde(default)]
        variance: Option<f64>,
        #[serde(default)]
        lengthscales: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    /// Explicit component list by descriptor name; derived from descriptor
    /// kinds when absent.
    #[serde(default)]
    pub components: Option<Vec<KernelComponentConfig>>,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    /// Feed event time to the squared-exponential components as an extra
    /// continuous input. Keeps the per-batch Gram matrix well conditioned
    /// when several rows share one subject's descriptors.
    #[serde(default = "default_include_time")]
    pub include_time: bool,
}

impl KernelConfig {
    /// Resolve named components against the kernel input schema
    /// (descriptor names plus the trailing `"time"` column when enabled).
    pub fn resolve(
        &self,
        descriptor_names: &[String],
    ) -> Result<Option<(Vec<KernelComponent>, Vec<crate::tensor::Tensor>)>, HarnessError> {
        let components = match &self.components {
            Some(c) => c,
            None => return Ok(None),
        };
        let index_of = |name: &str| -> Result<usize, HarnessError> {
            if name == "time" {
                if !self.include_time {
                    return Err(HarnessError::ConfigInvalid(
                        "kernel input \"time\" requires include_time".into(),
                    ));
                }
                return Ok(descriptor_names.len());
            }
            descriptor_names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| {
                    HarnessError::ConfigInvalid(format!("unknown kernel input {name:?}"))
                })
        };
        let indices = |names: &[String]| -> Result<Vec<usize>, HarnessError> {
            names.iter().map(|n| index_of(n)).collect()
        };
        let params = |variance: &Option<f64>,
                      lengthscales: &Option<Vec<f64>>,
                      n_inputs: usize,
                      m: usize|
         -> Result<crate::tensor::Tensor, HarnessError> {
            let var = variance.unwrap_or(1.0 / m as f64);
            if var <= 0.0 {
                return Err(HarnessError::ConfigInvalid("variance must be positive".into()));
            }
            let mut data = vec![0.5 * var.ln()];
            match lengthscales {
                Some(ls) => {
                    if ls.len() != n_inputs || ls.iter().any(|l| *l <= 0.0) {
                        return Err(HarnessError::ConfigInvalid(format!(
                            "need {n_inputs} positive lengthscales"
                        )));
                    }
                    data.extend(ls.iter().map(|l| l.ln()));
                }
                None => data.extend(std::iter::repeat(0.0).take(n_inputs)),
            }
            Ok(crate::tensor::Tensor::vector(data))
        };

        let m = components.len();
        let mut comps = Vec::with_capacity(m);
        let mut inits = Vec::with_capacity(m);
        for c in components {
            match c {
                KernelComponentConfig::SquaredExponential {
                    inputs,
                    variance,
                    lengthscales,
                } => {
                    let idx = indices(inputs)?;
                    inits.push(params(variance, lengthscales, idx.len(), m)?);
                    comps.push(KernelComponent::SquaredExponential { inputs: idx });
                }
                KernelComponentConfig::Categorical { input, variance } => {
                    let idx = index_of(input)?;
                    inits.push(params(variance, &None, 0, m)?);
                    comps.push(KernelComponent::Categorical { input: idx });
                }
                KernelComponentConfig::Interaction {
                    categorical,
                    inputs,
                    variance,
                    lengthscales,
                } => {
                    let cat = index_of(categorical)?;
                    let idx = indices(inputs)?;
                    inits.push(params(variance, lengthscales, idx.len(), m)?);
                    comps.push(KernelComponent::Interaction {
                        categorical: cat,
                        inputs: idx,
                    });
                }
                KernelComponentConfig::BinaryProduct {
                    binary,
                    inputs,
                    variance,
                    lengthscales,
                } => {
                    let bin = index_of(binary)?;
                    let idx = indices(inputs)?;
                    inits.push(params(variance, lengthscales, idx.len(), m)?);
                    comps.push(KernelComponent::BinaryProduct {
                        binary: bin,
                        inputs: idx,
                    });
                }
            }
        }
        Ok(Some((comps, inits)))
    }
}

fn default_jitter() -> f64 {
    crate::gp::DEFAULT_JITTER
}
fn default_include_time() -> bool {
    true
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            components: None,
            jitter: default_jitter(),
            include_time: default_include_time(),
        }
    }
}

/// Full pipeline configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    /// Seed for dataset synthesis and the split draws.
    pub data_seed: u64,
    /// Training seeds; every cell of the matrix runs once per seed.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Generation split: train/val/test/generate.
    #[serde(default = "default_gen_ratios")]
    pub gen_ratios: Vec<f64>,
    /// Downstream split: train/val/test.
    #[serde(default = "default_pred_ratios")]
    pub pred_ratios: Vec<f64>,
    /// Padding strategies swept by the downstream baseline.
    #[serde(default = "default_paddings")]
    pub paddings: Vec<PadFill>,
    /// Regressor families swept by the downstream baseline.
    #[serde(default = "default_models")]
    pub models: Vec<CellKind>,
    /// Fixed sequence length; derived from the corpus mean (rounded to the
    /// nearest ten) when absent.
    #[serde(default)]
    pub fixed_length: Option<usize>,
    pub generative: ElboConfig,
    pub predictor: PredictorConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    /// Imputation fractions in percent.
    #[serde(default = "default_fractions")]
    pub fractions: Vec<f64>,
    /// Seed for fraction subject selection, independent of the split seed.
    #[serde(default = "default_fraction_seed")]
    pub fraction_seed: u64,
    /// Feature column recomputed as the within-subject row index after
    /// imputation.
    #[serde(default)]
    pub sequence_number_feature: Option<String>,
}

fn default_seeds() -> Vec<u64> {
    (1..=10).collect()
}

fn default_gen_ratios() -> Vec<f64> {
    vec![0.5, 0.1, 0.2, 0.2]
}
fn default_pred_ratios() -> Vec<f64> {
    vec![0.7, 0.1, 0.2]
}
fn default_paddings() -> Vec<PadFill> {
    vec![PadFill::Zero, PadFill::Ffill, PadFill::Bfill]
}
fn default_models() -> Vec<CellKind> {
    vec![CellKind::Lstm, CellKind::Gru]
}
fn default_fractions() -> Vec<f64> {
    vec![10.0, 20.0, 30.0, 50.0, 80.0, 100.0]
}
fn default_fraction_seed() -> u64 {
    0x5eed
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::ConfigInvalid(m));
        let ratio_sum = |r: &[f64]| (r.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
        if self.gen_ratios.len() != 4 || !ratio_sum(&self.gen_ratios) {
            return bad(format!(
                "gen_ratios must be 4 parts summing to 1, got {:?}",
                self.gen_ratios
            ));
        }
        if self.pred_ratios.len() != 3 || !ratio_sum(&self.pred_ratios) {
            return bad(format!(
                "pred_ratios must be 3 parts summing to 1, got {:?}",
                self.pred_ratios
            ));
        }
        if self.seeds.is_empty() {
            return bad("seeds must be nonempty".into());
        }
        if self.paddings.is_empty() || self.models.is_empty() {
            return bad("paddings and models must be nonempty".into());
        }
        if self
            .fractions
            .iter()
            .any(|f| !(*f > 0.0 && *f <= 100.0))
        {
            return bad(format!(
                "fractions must lie in (0, 100], got {:?}",
                self.fractions
            ));
        }
        if let DataSource::Synth(s) = &self.data {
            if !(0.0..1.0).contains(&s.missing.rate) {
                return bad(format!("missing rate must be in [0,1), got {}", s.missing.rate));
            }
            if s.subjects == 0 || s.schools == 0 || s.schedule_len == 0 {
                return bad("synth spec needs subjects, schools and schedule_len > 0".into());
            }
            if s.features < 2 {
                return bad("synth spec needs at least 2 features".into());
            }
        }
        self.generative
            .validate()
            .map_err(HarnessError::ConfigInvalid)?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding; embedded in every artifact.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canon.as_bytes());
        let digest = hasher.finalize();
        let mut hex = String::with_capacity(16);
        for b in digest.iter().take(8) {
            hex.push_str(&format!("{b:02x}"));
        }
        hex
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| HarnessError::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}

/// Deterministic per-cell seed derivation (FNV-1a over the tag, mixed with
/// the base seed and an index).
pub fn derive_seed(base: u64, tag: &str, k: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64
        ^ base.rotate_left(17)
        ^ k.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    for b in tag.bytes() {
        h = (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config() -> ExperimentConfig {
        ExperimentConfig {
            data: DataSource::Synth(SynthSpec {
                subjects: 20,
                schools: 2,
                schedule_len: 10,
                features: 4,
                descriptors: 4,
                coupling: 1.0,
                missing: MissingSpec {
                    mode: MissingMode::Mcar,
                    rate: 0.4,
                },
                feature_noise: 0.3,
                target_noise: 0.02,
                latent_dim: 2,
                ar_coeff: 0.9,
            target_memory: 0.75,
            }),
            data_seed: 1,
            seeds: vec![1, 2],
            gen_ratios: default_gen_ratios(),
            pred_ratios: default_pred_ratios(),
            paddings: default_paddings(),
            models: default_models(),
            fixed_length: Some(10),
            generative: ElboConfig {
                beta: 1.0,
            lvae_beta: None,
                latent: 2,
                hidden: 4,
                lr: 0.01,
                max_epochs: 5,
                patience: 2,
                batch_size: 8,
                min_delta: 1e-5,
            },
            predictor: PredictorConfig {
                hidden: 4,
                lr: 0.02,
                max_epochs: 5,
                patience: 2,
                batch_size: 8,
                min_delta: 1e-5,
            },
            kernel: KernelConfig::default(),
            fractions: default_fractions(),
            fraction_seed: 7,
            sequence_number_feature: Some("seq_number".into()),
        }
    }

    #[test]
    fn valid_config_round_trips_with_stable_hash() {
        let cfg = base_config();
        cfg.validate().unwrap();
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let back = ExperimentConfig::from_json(&json).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash(), back.hash());
        assert_eq!(cfg.hash().len(), 16);
    }

    #[test]
    fn bad_ratios_rejected() {
        let mut cfg = base_config();
        cfg.gen_ratios = vec![0.5, 0.2, 0.2, 0.2];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn fractions_outside_range_rejected() {
        let mut cfg = base_config();
        cfg.fractions = vec![0.0, 50.0];
        assert!(cfg.validate().is_err());
        cfg.fractions = vec![50.0, 101.0];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn derive_seed_depends_on_all_inputs() {
        let a = derive_seed(1, "vae", 0);
        assert_ne!(a, derive_seed(2, "vae", 0));
        assert_ne!(a, derive_seed(1, "lvae", 0));
        assert_ne!(a, derive_seed(1, "vae", 1));
        assert_eq!(a, derive_seed(1, "vae", 0));
    }
}
