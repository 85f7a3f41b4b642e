//! Additive multi-output GP prior over subject descriptors.
//!
//! The prior p(Z|X) is zero-mean with covariance K(x, x′) summed over
//! [`kernel::KernelComponent`]s plus diagonal jitter. One shared kernel
//! covers all latent dimensions.

pub mod kernel;
pub mod kl;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DescriptorKind;
use crate::linalg;
use crate::tensor::Tensor;

pub use kernel::{KernelComponent, KernelParams};
pub use kl::{kl_posterior_vs_gp, kl_posterior_vs_gp_per_dim, kl_standard_normal};

/// Default diagonal jitter; escalated ×10 on factorization failure.
pub const DEFAULT_JITTER: f64 = 1e-6;
/// Escalation gives up past this jitter.
pub const MAX_JITTER: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GpError {
    #[error("kernel component references input {index} expecting {expected:?}, got {got:?}")]
    KindMismatch {
        index: usize,
        expected: DescriptorKind,
        got: DescriptorKind,
    },
    #[error("cholesky factorization failed at jitter {jitter:e}")]
    CholeskyFailure { jitter: f64 },
    #[error("gram matrix is {gram_n}×{gram_n} but posterior has {posterior_n} rows")]
    DimensionMismatch { gram_n: usize, posterior_n: usize },
}

/// Additive kernel configuration: a nonempty component list plus jitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub components: Vec<KernelComponent>,
    pub jitter: f64,
}

impl KernelSpec {
    /// Default spec derived from descriptor kinds: one squared exponential
    /// over all continuous inputs, one categorical component per categorical
    /// input, one interaction per categorical input against the continuous
    /// set, and one binary product per binary input.
    pub fn auto(kinds: &[DescriptorKind]) -> Self {
        let continuous: Vec<usize> = kinds
            .iter()
            .enumerate()
            .filter(|(_, k)| **k == DescriptorKind::Continuous)
            .map(|(i, _)| i)
            .collect();
        let mut components = Vec::new();
        if !continuous.is_empty() {
            components.push(KernelComponent::SquaredExponential {
                inputs: continuous.clone(),
            });
        }
        for (i, k) in kinds.iter().enumerate() {
            match k {
                DescriptorKind::Categorical => {
                    components.push(KernelComponent::Categorical { input: i });
                    if !continuous.is_empty() {
                        components.push(KernelComponent::Interaction {
                            categorical: i,
                            inputs: continuous.clone(),
                        });
                    }
                }
                DescriptorKind::Binary => {
                    if !continuous.is_empty() {
                        components.push(KernelComponent::BinaryProduct {
                            binary: i,
                            inputs: continuous.clone(),
                        });
                    }
                }
                DescriptorKind::Continuous => {}
            }
        }
        assert!(!components.is_empty(), "kernel spec needs at least one component");
        KernelSpec {
            components,
            jitter: DEFAULT_JITTER,
        }
    }
}

/// An evaluated kernel: the symmetric positive-definite matrix and its
/// lower-triangular Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub n: usize,
    pub values: Tensor,
    pub chol: Tensor,
}

/// Evaluate the additive kernel on an `n × q` input matrix at the spec's own
/// jitter. Fails with [`GpError::CholeskyFailure`] when the jittered sum is
/// not numerically positive definite.
pub fn eval_gram(
    spec: &KernelSpec,
    params: &KernelParams,
    x: &Tensor,
    kinds: &[DescriptorKind],
) -> Result<GramMatrix, GpError> {
    eval_gram_at(spec, params, x, kinds, spec.jitter)
}

fn eval_gram_at(
    spec: &KernelSpec,
    params: &KernelParams,
    x: &Tensor,
    kinds: &[DescriptorKind],
    jitter: f64,
) -> Result<GramMatrix, GpError> {
    assert_eq!(spec.components.len(), params.per_component.len());
    let n = x.shape()[0];
    let mut sum = Tensor::zeros(&[n, n]);
    for (comp, p) in spec.components.iter().zip(params.per_component.iter()) {
        let k = kernel::eval_component(comp, p, x, kinds)?;
        sum.add_assign(&k);
    }
    for i in 0..n {
        let v = sum.get2(i, i) + jitter;
        sum.set2(i, i, v);
    }
    let chol = linalg::cholesky(&sum).ok_or(GpError::CholeskyFailure { jitter })?;
    Ok(GramMatrix {
        n,
        values: sum,
        chol,
    })
}

/// Evaluate with jitter escalation ×10 up to [`MAX_JITTER`], then give up.
/// Returns the jitter that succeeded alongside the Gram matrix.
pub fn eval_gram_escalating(
    spec: &KernelSpec,
    params: &KernelParams,
    x: &Tensor,
    kinds: &[DescriptorKind],
) -> Result<(GramMatrix, f64), GpError> {
    let mut jitter = spec.jitter;
    loop {
        match eval_gram_at(spec, params, x, kinds, jitter) {
            Ok(g) => return Ok((g, jitter)),
            Err(GpError::CholeskyFailure { .. }) if jitter * 10.0 <= MAX_JITTER => {
                jitter *= 10.0;
            }
            Err(e) => return Err(e),
        }
    }
}
