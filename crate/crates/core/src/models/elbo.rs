//! Graph assembly for the sequence VAE objectives.
//!
//! Sequences enter as fixed-length scaled frames; the encoder LSTM emits a
//! per-step Gaussian posterior, reparameterized samples feed the decoder
//! LSTM, and the loss is masked reconstruction MSE plus the weighted KL term
//! against either the standard-normal or the GP prior. Latent rows are laid
//! out time-major: row `t·B + b` is step `t` of batch sequence `b`.

use std::rc::Rc;

use crate::data::DescriptorKind;
use crate::gp::kernel::{gram_on_tape, KernelComponent, KernelParams};
use crate::gp::kl::GpKlOp;
use crate::pipeline::align::AlignedSequence;
use crate::tape::{Tape, Var};
use crate::tensor::{NumericError, Tensor};

use super::params::VaeVars;

/// How kernel input rows are assembled from a subject's descriptors.
/// With `include_time` the row gains one trailing continuous column holding
/// the step's event time.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelInputLayout {
    pub descriptor_kinds: Vec<DescriptorKind>,
    pub include_time: bool,
}

impl KernelInputLayout {
    pub fn kinds(&self) -> Vec<DescriptorKind> {
        let mut k = self.descriptor_kinds.clone();
        if self.include_time {
            k.push(DescriptorKind::Continuous);
        }
        k
    }

    pub fn row(&self, descriptors: &[f64], time: f64) -> Vec<f64> {
        let mut r = descriptors.to_vec();
        if self.include_time {
            r.push(time);
        }
        r
    }

    pub fn width(&self) -> usize {
        self.descriptor_kinds.len() + usize::from(self.include_time)
    }
}

/// One training batch: per-step feature frames, per-step masks (replicated
/// across features), and optionally the time-major kernel input rows.
#[derive(Debug, Clone)]
pub struct SeqBatch {
    pub frames: Vec<Tensor>,
    pub masks: Vec<Tensor>,
    pub kernel_rows: Option<Tensor>,
    pub n_real_positions: usize,
    pub batch: usize,
    pub steps: usize,
    pub features: usize,
}

impl SeqBatch {
    pub fn from_aligned(seqs: &[&AlignedSequence], layout: Option<&KernelInputLayout>) -> SeqBatch {
        assert!(!seqs.is_empty(), "empty batch");
        let t_len = seqs[0].features.len();
        let d = seqs[0].features[0].len();
        let b = seqs.len();
        assert!(seqs.iter().all(|s| s.features.len() == t_len));

        let mut frames = Vec::with_capacity(t_len);
        let mut masks = Vec::with_capacity(t_len);
        let mut n_real = 0;
        for t in 0..t_len {
            let mut frame = Vec::with_capacity(b * d);
            let mut mask = Vec::with_capacity(b * d);
            for s in seqs {
                frame.extend_from_slice(&s.features[t]);
                let m = if s.mask[t] { 1.0 } else { 0.0 };
                n_real += usize::from(s.mask[t]);
                mask.extend(std::iter::repeat(m).take(d));
            }
            frames.push(Tensor::from_vec(vec![b, d], frame).expect("frame shape"));
            masks.push(Tensor::from_vec(vec![b, d], mask).expect("mask shape"));
        }

        let kernel_rows = layout.map(|lay| {
            let mut rows = Vec::with_capacity(t_len * b * lay.width());
            for t in 0..t_len {
                for s in seqs {
                    rows.extend(lay.row(&s.descriptors, s.times[t]));
                }
            }
            Tensor::from_vec(vec![t_len * b, lay.width()], rows).expect("kernel rows")
        });

        SeqBatch {
            frames,
            masks,
            kernel_rows,
            n_real_positions: n_real,
            batch: b,
            steps: t_len,
            features: d,
        }
    }

    pub fn latent_rows(&self) -> usize {
        self.batch * self.steps
    }
}

/// Posterior parameters from the encoder, stacked time-major `[T·B, L]`.
pub struct EncodeOut {
    pub mu: Var,
    pub log_sigma: Var,
}

/// Unroll the encoder over constant frames already on the tape.
pub fn encode(tape: &mut Tape, vars: &VaeVars, frames: &[Var]) -> Result<EncodeOut, NumericError> {
    let b = tape.value(frames[0]).shape()[0];
    let h_dim = tape.value(vars.enc_lstm.b[0]).shape()[0];
    let mut h = tape.constant(Tensor::zeros(&[b, h_dim]));
    let mut c = tape.constant(Tensor::zeros(&[b, h_dim]));
    let mut mu_steps = Vec::with_capacity(frames.len());
    let mut ls_steps = Vec::with_capacity(frames.len());
    for &x_t in frames {
        let (h2, c2) = vars.enc_lstm.step(tape, x_t, h, c)?;
        h = h2;
        c = c2;
        mu_steps.push(vars.enc_mu.apply(tape, h)?);
        ls_steps.push(vars.enc_log_sigma.apply(tape, h)?);
    }
    Ok(EncodeOut {
        mu: tape.concat_rows(&mu_steps)?,
        log_sigma: tape.concat_rows(&ls_steps)?,
    })
}

/// z = μ + exp(log σ)·ε for a constant noise tensor already on the tape.
pub fn reparameterize(
    tape: &mut Tape,
    mu: Var,
    log_sigma: Var,
    noise: Var,
) -> Result<Var, NumericError> {
    let sigma = tape.exp(log_sigma);
    let scaled = tape.mul(sigma, noise)?;
    tape.add(mu, scaled)
}

/// Unroll the decoder over time-major latents, returning per-step `[B, D]`
/// reconstruction frames.
pub fn decode(
    tape: &mut Tape,
    vars: &VaeVars,
    z: Var,
    steps: usize,
    batch: usize,
) -> Result<Vec<Var>, NumericError> {
    let h_dim = tape.value(vars.dec_lstm.b[0]).shape()[0];
    let mut h = tape.constant(Tensor::zeros(&[batch, h_dim]));
    let mut c = tape.constant(Tensor::zeros(&[batch, h_dim]));
    let mut out = Vec::with_capacity(steps);
    for t in 0..steps {
        let z_t = tape.slice_rows(z, t * batch, batch)?;
        let (h2, c2) = vars.dec_lstm.step(tape, z_t, h, c)?;
        h = h2;
        c = c2;
        out.push(vars.dec_head.apply(tape, h)?);
    }
    Ok(out)
}

/// The latent prior against which the posterior KL is taken.
pub enum Prior<'a> {
    /// Isotropic N(0, I): the plain VAE objective.
    StandardNormal,
    /// Additive GP over the batch's kernel input rows; kernel
    /// hyperparameters become trainable leaves.
    Gp {
        components: &'a [KernelComponent],
        params: &'a KernelParams,
        kinds: &'a [DescriptorKind],
        jitter: f64,
    },
    /// A fixed covariance matrix (no trainable kernel). Used for
    /// cross-checks such as the identity-Gram equivalence.
    FixedGram(Tensor),
}

/// Scalar loss terms plus any kernel parameter leaves that were created.
pub struct ElboTerms {
    pub loss: Var,
    pub recon: Var,
    pub kl: Var,
    pub kernel_leaves: Vec<Var>,
}

/// Assemble the full objective for one batch:
/// masked reconstruction MSE + β·KL / (T·B·L).
pub fn elbo_graph(
    tape: &mut Tape,
    vars: &VaeVars,
    batch: &SeqBatch,
    noise: &Tensor,
    prior: Prior<'_>,
    beta: f64,
) -> Result<ElboTerms, NumericError> {
    let frame_vars: Vec<Var> = batch
        .frames
        .iter()
        .map(|f| tape.constant(f.clone()))
        .collect();
    let enc = encode(tape, vars, &frame_vars)?;
    let noise_var = tape.constant(noise.clone());
    let z = reparameterize(tape, enc.mu, enc.log_sigma, noise_var)?;
    let y_hat = decode(tape, vars, z, batch.steps, batch.batch)?;

    // Masked reconstruction: mean squared error over real positions only.
    let n_real_elems = (batch.n_real_positions * batch.features).max(1) as f64;
    let mut acc: Option<Var> = None;
    for t in 0..batch.steps {
        let mask = tape.constant(batch.masks[t].clone());
        let diff = tape.sub(y_hat[t], frame_vars[t])?;
        let sq = tape.mul(diff, diff)?;
        let masked = tape.mul(sq, mask)?;
        let s = tape.reduce_sum(masked);
        acc = Some(match acc {
            Some(a) => tape.add(a, s)?,
            None => s,
        });
    }
    let recon = tape.scale(acc.expect("at least one step"), 1.0 / n_real_elems);

    // KL term against the requested prior.
    let (kl_raw, kernel_leaves) = match prior {
        Prior::StandardNormal => {
            // ½ Σ (e^{2ls} + μ² − 1 − 2ls)
            let two_ls = tape.scale(enc.log_sigma, 2.0);
            let var = tape.exp(two_ls);
            let mu_sq = tape.mul(enc.mu, enc.mu)?;
            let sum_terms = tape.add(var, mu_sq)?;
            let minus_ls = tape.sub(sum_terms, two_ls)?;
            let shifted = tape.add_scalar(minus_ls, -1.0);
            let total = tape.reduce_sum(shifted);
            (tape.scale(total, 0.5), Vec::new())
        }
        Prior::Gp {
            components,
            params,
            kinds,
            jitter,
        } => {
            let rows = batch
                .kernel_rows
                .as_ref()
                .expect("GP prior requires kernel input rows");
            let (gram, leaves) = gram_on_tape(tape, components, params, rows, kinds, jitter)?;
            let kl = tape.custom(Rc::new(GpKlOp), &[enc.mu, enc.log_sigma, gram])?;
            (kl, leaves)
        }
        Prior::FixedGram(k) => {
            let gram = tape.constant(k);
            let kl = tape.custom(Rc::new(GpKlOp), &[enc.mu, enc.log_sigma, gram])?;
            (kl, Vec::new())
        }
    };
    let latent_elems = (batch.latent_rows() * tape.value(enc.mu).shape()[1]) as f64;
    let kl = tape.scale(kl_raw, 1.0 / latent_elems);
    let weighted = tape.scale(kl, beta);
    let loss = tape.add(recon, weighted)?;
    Ok(ElboTerms {
        loss,
        recon,
        kl,
        kernel_leaves,
    })
}
