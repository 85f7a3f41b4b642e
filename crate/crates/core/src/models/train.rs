//! Training loop for the generative models: minibatch Adam on the negative
//! ELBO with early stopping on validation loss.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::cells::NamedParams;
use crate::gp::MAX_JITTER;
use crate::optim::{AdamConfig, AdamState};
use crate::pipeline::align::AlignedSequence;
use crate::tape::Tape;
use crate::tensor::{NumericError, Tensor};

use super::elbo::{elbo_graph, KernelInputLayout, Prior, SeqBatch};
use super::params::{ElboConfig, LvaeParams, VaeParams, VaeVars};
use super::ModelError;

/// Parameters of one generative model. The VAE and its non-subject variant
/// share the same architecture; only the split/impute regime differs.
#[derive(Debug, Clone, PartialEq)]
pub enum GenParams {
    Vae(VaeParams),
    Lvae(LvaeParams),
}

impl GenParams {
    pub fn vae(&self) -> &VaeParams {
        match self {
            GenParams::Vae(v) => v,
            GenParams::Lvae(l) => &l.vae,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.vae().latent_dim()
    }

    pub fn kind_tag(&self) -> &'static str {
        match self {
            GenParams::Vae(_) => "vae",
            GenParams::Lvae(_) => "lvae",
        }
    }
}

impl NamedParams for GenParams {
    fn named(&self) -> Vec<(String, &Tensor)> {
        match self {
            GenParams::Vae(v) => v.named(),
            GenParams::Lvae(l) => l.named(),
        }
    }
    fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        match self {
            GenParams::Vae(v) => v.named_mut(),
            GenParams::Lvae(l) => l.named_mut(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub recon: f64,
    pub kl: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedGen {
    pub params: GenParams,
    pub history: Vec<EpochStats>,
    pub best_val: f64,
    pub best_epoch: usize,
}

fn beta_of(params: &GenParams, cfg: &ElboConfig) -> f64 {
    match params {
        GenParams::Vae(_) => cfg.beta,
        GenParams::Lvae(_) => cfg.beta_for_gp(),
    }
}

struct BatchOutcome {
    loss: f64,
    recon: f64,
    kl: f64,
    grads: Option<Vec<Tensor>>,
}

fn sample_noise(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::from_vec(vec![rows, cols], data).expect("noise shape")
}

/// Run one batch. For the LVAE the Gram jitter escalates ×10 on Cholesky
/// failure up to the module-wide cap before giving up.
fn run_batch(
    params: &GenParams,
    seqs: &[&AlignedSequence],
    noise: &Tensor,
    layout: &KernelInputLayout,
    beta: f64,
    with_grads: bool,
) -> Result<BatchOutcome, ModelError> {
    let use_gp = matches!(params, GenParams::Lvae(_));
    let batch = SeqBatch::from_aligned(seqs, use_gp.then_some(layout));

    let mut jitter = match params {
        GenParams::Lvae(l) => l.kernel_spec.jitter,
        GenParams::Vae(_) => 0.0,
    };
    loop {
        let mut tape = Tape::new();
        let vars = VaeVars::register(params.vae(), &mut tape);
        let kinds = layout.kinds();
        let prior = match params {
            GenParams::Vae(_) => Prior::StandardNormal,
            GenParams::Lvae(l) => Prior::Gp {
                components: &l.kernel_spec.components,
                params: &l.kernel,
                kinds: &kinds,
                jitter,
            },
        };
        match elbo_graph(&mut tape, &vars, &batch, noise, prior, beta) {
            Ok(terms) => {
                let loss = tape.value(terms.loss).scalar_value();
                let grads = if with_grads {
                    let g = tape.backward(terms.loss).map_err(ModelError::Numeric)?;
                    let mut leaves = vars.leaves();
                    leaves.extend(terms.kernel_leaves.iter().copied());
                    Some(leaves.iter().map(|v| g.wrt(&tape, *v)).collect())
                } else {
                    None
                };
                return Ok(BatchOutcome {
                    loss,
                    recon: tape.value(terms.recon).scalar_value(),
                    kl: tape.value(terms.kl).scalar_value(),
                    grads,
                });
            }
            Err(NumericError::Factorization { .. }) if jitter > 0.0 && jitter * 10.0 <= MAX_JITTER => {
                jitter *= 10.0;
            }
            Err(NumericError::Factorization { .. }) => {
                return Err(ModelError::Gp(crate::gp::GpError::CholeskyFailure { jitter }));
            }
            Err(e) => return Err(ModelError::Numeric(e)),
        }
    }
}

fn epoch_pass(
    params: &GenParams,
    order: &[usize],
    seqs: &[AlignedSequence],
    cfg: &ElboConfig,
    layout: &KernelInputLayout,
    rng: &mut ChaCha8Rng,
    mut on_grads: Option<&mut dyn FnMut(Vec<Tensor>) -> Result<(), ModelError>>,
) -> Result<(f64, f64, f64), ModelError> {
    let latent = params.latent_dim();
    let (mut loss_sum, mut recon_sum, mut kl_sum, mut weight) = (0.0, 0.0, 0.0, 0.0);
    for chunk in order.chunks(cfg.batch_size) {
        let refs: Vec<&AlignedSequence> = chunk.iter().map(|&i| &seqs[i]).collect();
        let rows = refs.len() * refs[0].len();
        let noise = sample_noise(rng, rows, latent);
        let out = run_batch(
            params,
            &refs,
            &noise,
            layout,
            beta_of(params, cfg),
            on_grads.is_some(),
        )?;
        if !out.loss.is_finite() {
            return Err(ModelError::NonFiniteLoss { epoch: 0 });
        }
        let w = refs.len() as f64;
        loss_sum += out.loss * w;
        recon_sum += out.recon * w;
        kl_sum += out.kl * w;
        weight += w;
        if let Some(cb) = on_grads.as_mut() {
            cb(out.grads.expect("grads requested"))?;
        }
    }
    Ok((loss_sum / weight, recon_sum / weight, kl_sum / weight))
}

/// Train until the validation loss stops improving for `patience` epochs,
/// returning the best-validation checkpoint and the full loss history.
pub fn train_generative(
    init: GenParams,
    train: &[AlignedSequence],
    val: &[AlignedSequence],
    cfg: &ElboConfig,
    layout: &KernelInputLayout,
    seed: u64,
) -> Result<TrainedGen, ModelError> {
    cfg.validate().map_err(ModelError::Config)?;
    assert!(!train.is_empty() && !val.is_empty(), "empty split");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = init;
    let named = params.named();
    let mut adam = AdamState::new(&named);
    drop(named);
    let adam_cfg = AdamConfig::with_lr(cfg.lr);

    let mut history = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params = params.clone();
    let mut stale = 0usize;

    for epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        epoch_train_pass(
            &mut params, &mut adam, &adam_cfg, &order, train, cfg, layout, &mut rng,
        )
        .map_err(|e| promote_epoch(e, epoch))?;

        let val_order: Vec<usize> = (0..val.len()).collect();
        let (val_loss, recon, kl) =
            epoch_pass(&params, &val_order, val, cfg, layout, &mut rng, None)
                .map_err(|e| promote_epoch(e, epoch))?;
        let train_order: Vec<usize> = (0..train.len()).collect();
        // Train loss reported at the post-update parameters with fresh noise.
        let (train_loss, _, _) =
            epoch_pass(&params, &train_order, train, cfg, layout, &mut rng, None)
                .map_err(|e| promote_epoch(e, epoch))?;

        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            recon,
            kl,
        });

        if best_val - val_loss > cfg.min_delta {
            best_val = val_loss;
            best_epoch = epoch;
            best_params = params.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale > cfg.patience {
                break;
            }
        }
    }

    Ok(TrainedGen {
        params: best_params,
        history,
        best_val,
        best_epoch,
    })
}

/// One optimization pass over the shuffled training set. Each batch's
/// gradients apply immediately, so later batches see updated parameters.
#[allow(clippy::too_many_arguments)]
fn epoch_train_pass(
    params: &mut GenParams,
    adam: &mut AdamState,
    adam_cfg: &AdamConfig,
    order: &[usize],
    seqs: &[AlignedSequence],
    cfg: &ElboConfig,
    layout: &KernelInputLayout,
    rng: &mut ChaCha8Rng,
) -> Result<(), ModelError> {
    let latent = params.latent_dim();
    for chunk in order.chunks(cfg.batch_size) {
        let refs: Vec<&AlignedSequence> = chunk.iter().map(|&i| &seqs[i]).collect();
        let rows = refs.len() * refs[0].len();
        let noise = sample_noise(rng, rows, latent);
        let out = run_batch(params, &refs, &noise, layout, beta_of(params, cfg), true)?;
        if !out.loss.is_finite() {
            return Err(ModelError::NonFiniteLoss { epoch: 0 });
        }
        let grads = out.grads.expect("grads requested");
        let mut view = params.named_mut();
        adam.step(adam_cfg, &mut view, &grads)
            .map_err(ModelError::Numeric)?;
    }
    Ok(())
}

fn promote_epoch(e: ModelError, epoch: usize) -> ModelError {
    match e {
        ModelError::NonFiniteLoss { .. } => ModelError::NonFiniteLoss { epoch },
        other => other,
    }
}
