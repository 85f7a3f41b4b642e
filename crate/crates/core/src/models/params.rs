//! Parameter containers for the sequence VAE and its GP-prior variant.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cells::{Dense, DenseVars, LstmCellParams, LstmVars, NamedParams};
use crate::gp::{KernelParams, KernelSpec};
use crate::tensor::Tensor;

/// LSTM encoder (D → H) with two dense heads (H → L) emitting μ and log σ
/// per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub lstm: LstmCellParams,
    pub head_mu: Dense,
    pub head_log_sigma: Dense,
}

impl EncoderParams {
    pub fn new(rng: &mut impl Rng, features: usize, hidden: usize, latent: usize) -> Self {
        EncoderParams {
            lstm: LstmCellParams::new(rng, features, hidden),
            head_mu: Dense::new(rng, hidden, latent),
            head_log_sigma: Dense::new(rng, hidden, latent),
        }
    }

    pub fn zeros(features: usize, hidden: usize, latent: usize) -> Self {
        EncoderParams {
            lstm: LstmCellParams::zeros(features, hidden),
            head_mu: Dense::zeros(hidden, latent),
            head_log_sigma: Dense::zeros(hidden, latent),
        }
    }
}

impl NamedParams for EncoderParams {
    fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = prefix("enc.lstm", self.lstm.named());
        out.extend(prefix("enc.mu", self.head_mu.named()));
        out.extend(prefix("enc.log_sigma", self.head_log_sigma.named()));
        out
    }
    fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = prefix_mut("enc.lstm", self.lstm.named_mut());
        out.extend(prefix_mut("enc.mu", self.head_mu.named_mut()));
        out.extend(prefix_mut("enc.log_sigma", self.head_log_sigma.named_mut()));
        out
    }
}

/// LSTM decoder (L → H) with a dense head (H → D) reconstructing features.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub lstm: LstmCellParams,
    pub head: Dense,
}

impl DecoderParams {
    pub fn new(rng: &mut impl Rng, latent: usize, hidden: usize, features: usize) -> Self {
        DecoderParams {
            lstm: LstmCellParams::new(rng, latent, hidden),
            head: Dense::new(rng, hidden, features),
        }
    }

    pub fn zeros(latent: usize, hidden: usize, features: usize) -> Self {
        DecoderParams {
            lstm: LstmCellParams::zeros(latent, hidden),
            head: Dense::zeros(hidden, features),
        }
    }
}

impl NamedParams for DecoderParams {
    fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = prefix("dec.lstm", self.lstm.named());
        out.extend(prefix("dec.head", self.head.named()));
        out
    }
    fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = prefix_mut("dec.lstm", self.lstm.named_mut());
        out.extend(prefix_mut("dec.head", self.head.named_mut()));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeParams {
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
}

impl VaeParams {
    pub fn new(rng: &mut impl Rng, features: usize, hidden: usize, latent: usize) -> Self {
        VaeParams {
            encoder: EncoderParams::new(rng, features, hidden, latent),
            decoder: DecoderParams::new(rng, latent, hidden, features),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.head_mu.w.shape()[0]
    }
}

impl NamedParams for VaeParams {
    fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.encoder.named();
        out.extend(self.decoder.named());
        out
    }
    fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.encoder.named_mut();
        out.extend(self.decoder.named_mut());
        out
    }
}

/// VAE plus the additive GP prior's trainable kernel hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LvaeParams {
    pub vae: VaeParams,
    pub kernel_spec: KernelSpec,
    pub kernel: KernelParams,
}

impl LvaeParams {
    pub fn new(
        rng: &mut impl Rng,
        features: usize,
        hidden: usize,
        latent: usize,
        kernel_spec: KernelSpec,
    ) -> Self {
        // Start the additive kernel at unit total amplitude so the GP prior
        // begins commensurate with the standard-normal one.
        let kernel = KernelParams::normalized(&kernel_spec.components);
        LvaeParams {
            vae: VaeParams::new(rng, features, hidden, latent),
            kernel_spec,
            kernel,
        }
    }
}

impl NamedParams for LvaeParams {
    fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.vae.named();
        for (i, p) in self.kernel.per_component.iter().enumerate() {
            out.push((format!("kernel.{i}"), p));
        }
        out
    }
    fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.vae.named_mut();
        for (i, p) in self.kernel.per_component.iter_mut().enumerate() {
            out.push((format!("kernel.{i}"), p));
        }
        out
    }
}

/// Registered tape handles for one VAE forward pass.
pub struct VaeVars {
    pub enc_lstm: LstmVars,
    pub enc_mu: DenseVars,
    pub enc_log_sigma: DenseVars,
    pub dec_lstm: LstmVars,
    pub dec_head: DenseVars,
}

impl VaeVars {
    pub fn register(params: &VaeParams, tape: &mut crate::tape::Tape) -> Self {
        VaeVars {
            enc_lstm: params.encoder.lstm.register(tape),
            enc_mu: params.encoder.head_mu.register(tape),
            enc_log_sigma: params.encoder.head_log_sigma.register(tape),
            dec_lstm: params.decoder.lstm.register(tape),
            dec_head: params.decoder.head.register(tape),
        }
    }

    /// Leaf order matches [`VaeParams::named`].
    pub fn leaves(&self) -> Vec<crate::tape::Var> {
        let mut v = self.enc_lstm.leaves();
        v.extend(self.enc_mu.leaves());
        v.extend(self.enc_log_sigma.leaves());
        v.extend(self.dec_lstm.leaves());
        v.extend(self.dec_head.leaves());
        v
    }
}

/// Training configuration for the generative models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElboConfig {
    /// KLD weight β (1.0 keeps the plain ELBO).
    pub beta: f64,
    /// KLD weight for the GP-prior model; the GP variant regularizes
    /// further with its own weight. Falls back to `beta`.
    #[serde(default)]
    pub lvae_beta: Option<f64>,
    pub latent: usize,
    pub hidden: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    #[serde(default = "default_min_delta")]
    pub min_delta: f64,
}

fn default_min_delta() -> f64 {
    1e-5
}

impl ElboConfig {
    /// β used by the GP-prior model.
    pub fn beta_for_gp(&self) -> f64 {
        self.lvae_beta.unwrap_or(self.beta)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.beta <= 0.0 {
            return Err(format!("beta must be positive, got {}", self.beta));
        }
        if let Some(b) = self.lvae_beta {
            if b <= 0.0 {
                return Err(format!("lvae_beta must be positive, got {b}"));
            }
        }
        if self.latent == 0 || self.hidden == 0 {
            return Err("latent and hidden dims must be at least 1".into());
        }
        if self.batch_size == 0 {
            return Err("batch_size must be at least 1".into());
        }
        Ok(())
    }
}

fn prefix<'a>(p: &str, items: Vec<(String, &'a Tensor)>) -> Vec<(String, &'a Tensor)> {
    items
        .into_iter()
        .map(|(n, t)| (format!("{p}.{n}"), t))
        .collect()
}

fn prefix_mut<'a>(p: &str, items: Vec<(String, &'a mut Tensor)>) -> Vec<(String, &'a mut Tensor)> {
    items
        .into_iter()
        .map(|(n, t)| (format!("{p}.{n}"), t))
        .collect()
}
