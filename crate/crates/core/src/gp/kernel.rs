//! Covariance-function families over subject descriptors.
//!
//! Four families: squared exponential over continuous inputs, categorical
//! equality, interaction (categorical indicator × squared exponential) and
//! binary product (both-on indicator × squared exponential). Hyperparameters
//! are log-space scalars, one variance per component plus one lengthscale per
//! continuous input; the indicator factor of a product family carries unit
//! variance so the component has a single well-identified amplitude.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::data::DescriptorKind;
use crate::tape::{CustomOp, Tape, Var};
use crate::tensor::{NumericError, Tensor};

use super::GpError;

/// One additive component of the kernel. Indices refer to columns of the
/// kernel input matrix (descriptors, plus optionally event time).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum KernelComponent {
    SquaredExponential { inputs: Vec<usize> },
    Categorical { input: usize },
    Interaction { categorical: usize, inputs: Vec<usize> },
    BinaryProduct { binary: usize, inputs: Vec<usize> },
}

impl KernelComponent {
    /// Continuous inputs that receive a lengthscale each.
    pub fn continuous_inputs(&self) -> &[usize] {
        match self {
            KernelComponent::SquaredExponential { inputs } => inputs,
            KernelComponent::Categorical { .. } => &[],
            KernelComponent::Interaction { inputs, .. } => inputs,
            KernelComponent::BinaryProduct { inputs, .. } => inputs,
        }
    }

    /// Parameter count: log-variance plus one log-lengthscale per
    /// continuous input.
    pub fn n_params(&self) -> usize {
        1 + self.continuous_inputs().len()
    }

    /// Check referenced columns against their declared kinds.
    pub fn check_kinds(&self, kinds: &[DescriptorKind]) -> Result<(), GpError> {
        let want = |idx: usize, kind: DescriptorKind| -> Result<(), GpError> {
            match kinds.get(idx) {
                Some(&k) if k == kind => Ok(()),
                Some(&k) => Err(GpError::KindMismatch {
                    index: idx,
                    expected: kind,
                    got: k,
                }),
                None => Err(GpError::KindMismatch {
                    index: idx,
                    expected: kind,
                    got: kind, // out of range reported as mismatch on itself
                }),
            }
        };
        for &i in self.continuous_inputs() {
            want(i, DescriptorKind::Continuous)?;
        }
        match self {
            KernelComponent::Categorical { input } => want(*input, DescriptorKind::Categorical),
            KernelComponent::Interaction { categorical, .. } => {
                want(*categorical, DescriptorKind::Categorical)
            }
            KernelComponent::BinaryProduct { binary, .. } => {
                want(*binary, DescriptorKind::Binary)
            }
            KernelComponent::SquaredExponential { .. } => Ok(()),
        }
    }

    /// Indicator factor for a pair of rows: 1.0 unless the family gates on a
    /// categorical/binary column.
    fn indicator(&self, x: &Tensor, i: usize, j: usize) -> f64 {
        match self {
            KernelComponent::SquaredExponential { .. } => 1.0,
            KernelComponent::Categorical { input } => {
                if x.get2(i, *input) == x.get2(j, *input) {
                    1.0
                } else {
                    0.0
                }
            }
            KernelComponent::Interaction { categorical, .. } => {
                if x.get2(i, *categorical) == x.get2(j, *categorical) {
                    1.0
                } else {
                    0.0
                }
            }
            KernelComponent::BinaryProduct { binary, .. } => {
                if x.get2(i, *binary) == 1.0 && x.get2(j, *binary) == 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Trainable log-space hyperparameters, one vector per component, laid out
/// as `[log_variance, log_lengthscale...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelParams {
    pub per_component: Vec<Tensor>,
}

impl KernelParams {
    /// Unit variance and unit lengthscales (all logs zero).
    pub fn unit(components: &[KernelComponent]) -> Self {
        KernelParams {
            per_component: components
                .iter()
                .map(|c| Tensor::zeros(&[c.n_params()]))
                .collect(),
        }
    }

    /// Unit lengthscales with component variances 1/m, so the additive
    /// kernel starts at unit total amplitude regardless of how many
    /// components the spec carries.
    pub fn normalized(components: &[KernelComponent]) -> Self {
        let m = components.len().max(1) as f64;
        let log_sigma = -0.5 * m.ln();
        KernelParams {
            per_component: components
                .iter()
                .map(|c| {
                    let mut p = Tensor::zeros(&[c.n_params()]);
                    p.data_mut()[0] = log_sigma;
                    p
                })
                .collect(),
        }
    }
}

/// Evaluate one component on an `n × q` kernel input matrix.
///
/// Builds the upper triangle and mirrors it, so the result is symmetric
/// exactly.
pub fn eval_component(
    component: &KernelComponent,
    params: &Tensor,
    x: &Tensor,
    kinds: &[DescriptorKind],
) -> Result<Tensor, GpError> {
    component.check_kinds(kinds)?;
    assert_eq!(params.len(), component.n_params(), "kernel parameter arity");
    let n = x.shape()[0];
    let variance = (2.0 * params.data()[0]).exp();
    let cont = component.continuous_inputs();
    let inv_ls2: Vec<f64> = (0..cont.len())
        .map(|d| (-2.0 * params.data()[1 + d]).exp())
        .collect();
    let mut k = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in i..n {
            let ind = component.indicator(x, i, j);
            if ind == 0.0 {
                continue;
            }
            let mut sq = 0.0;
            for (d, &col) in cont.iter().enumerate() {
                let r = x.get2(i, col) - x.get2(j, col);
                sq += r * r * inv_ls2[d];
            }
            let v = ind * variance * (-0.5 * sq).exp();
            k.set2(i, j, v);
            k.set2(j, i, v);
        }
    }
    Ok(k)
}

/// Gradient of `Σ_ij out_grad_ij · K_ij` w.r.t. the component's log
/// parameters.
///
/// With v = e^{2a} and ℓ_d = e^{b_d}: ∂K_ij/∂a = 2·K_ij and
/// ∂K_ij/∂b_d = K_ij · r_d²/ℓ_d².
pub fn component_param_grad(
    component: &KernelComponent,
    params: &Tensor,
    x: &Tensor,
    k: &Tensor,
    out_grad: &Tensor,
) -> Tensor {
    let n = x.shape()[0];
    let cont = component.continuous_inputs();
    let inv_ls2: Vec<f64> = (0..cont.len())
        .map(|d| (-2.0 * params.data()[1 + d]).exp())
        .collect();
    let mut grad = vec![0.0; component.n_params()];
    for i in 0..n {
        for j in 0..n {
            let kij = k.get2(i, j);
            if kij == 0.0 {
                continue;
            }
            let g = out_grad.get2(i, j);
            if g == 0.0 {
                continue;
            }
            grad[0] += g * 2.0 * kij;
            for (d, &col) in cont.iter().enumerate() {
                let r = x.get2(i, col) - x.get2(j, col);
                grad[1 + d] += g * kij * r * r * inv_ls2[d];
            }
        }
    }
    Tensor::vector(grad)
}

/// Tape op evaluating one kernel component from its log-parameter leaf.
#[derive(Debug)]
pub struct KernelEvalOp {
    pub component: KernelComponent,
    pub x: Tensor,
    pub kinds: Vec<DescriptorKind>,
}

impl CustomOp for KernelEvalOp {
    fn name(&self) -> &'static str {
        "kernel_eval"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor, NumericError> {
        eval_component(&self.component, inputs[0], &self.x, &self.kinds)
            .map_err(|_| NumericError::Factorization {
                context: "kernel component evaluation",
            })
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        out_grad: &Tensor,
    ) -> Result<Vec<Option<Tensor>>, NumericError> {
        let g = component_param_grad(&self.component, inputs[0], &self.x, output, out_grad);
        Ok(vec![Some(g)])
    }
}

/// Record all components on the tape and sum them with jitter·I.
/// Returns the Gram node plus the per-component parameter leaves.
pub fn gram_on_tape(
    tape: &mut Tape,
    components: &[KernelComponent],
    params: &KernelParams,
    x: &Tensor,
    kinds: &[DescriptorKind],
    jitter: f64,
) -> Result<(Var, Vec<Var>), NumericError> {
    assert_eq!(components.len(), params.per_component.len());
    let n = x.shape()[0];
    let mut leaves = Vec::with_capacity(components.len());
    let mut sum: Option<Var> = None;
    for (comp, p) in components.iter().zip(params.per_component.iter()) {
        let leaf = tape.leaf(p.clone());
        leaves.push(leaf);
        let op = Rc::new(KernelEvalOp {
            component: comp.clone(),
            x: x.clone(),
            kinds: kinds.to_vec(),
        });
        let k = tape.custom(op, &[leaf])?;
        sum = Some(match sum {
            Some(s) => tape.add(s, k)?,
            None => k,
        });
    }
    let mut eye = Tensor::zeros(&[n, n]);
    for i in 0..n {
        eye.set2(i, i, jitter);
    }
    let jitter_node = tape.constant(eye);
    let gram = tape.add(sum.expect("nonempty component list"), jitter_node)?;
    Ok((gram, leaves))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds_ccb() -> Vec<DescriptorKind> {
        vec![
            DescriptorKind::Continuous,
            DescriptorKind::Categorical,
            DescriptorKind::Binary,
        ]
    }

    fn x3() -> Tensor {
        // rows: (0.0, cat a, 1), (1.0, cat a, 0), (2.5, cat b, 1)
        Tensor::matrix(3, 3, vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 2.5, 1.0, 1.0]).unwrap()
    }

    #[test]
    fn se_zero_distance_gives_variance() {
        let comp = KernelComponent::SquaredExponential { inputs: vec![0] };
        let params = Tensor::vector(vec![0.5, 0.0]); // σ² = e^1
        let k = eval_component(&comp, &params, &x3(), &kinds_ccb()).unwrap();
        assert!((k.get2(0, 0) - 1.0f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn se_at_distance_lengthscale() {
        // k(x, x+ℓ) = σ²·e^{-1/2}
        let comp = KernelComponent::SquaredExponential { inputs: vec![0] };
        let params = Tensor::vector(vec![0.0, 0.0]); // σ²=1, ℓ=1
        let k = eval_component(&comp, &params, &x3(), &kinds_ccb()).unwrap();
        assert!((k.get2(0, 1) - (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn categorical_equality() {
        let comp = KernelComponent::Categorical { input: 1 };
        let params = Tensor::vector(vec![0.0]);
        let k = eval_component(&comp, &params, &x3(), &kinds_ccb()).unwrap();
        assert_eq!(k.get2(0, 1), 1.0);
        assert_eq!(k.get2(0, 2), 0.0);
    }

    #[test]
    fn interaction_masks_se_across_categories() {
        let comp = KernelComponent::Interaction {
            categorical: 1,
            inputs: vec![0],
        };
        let params = Tensor::vector(vec![0.0, 0.0]);
        let k = eval_component(&comp, &params, &x3(), &kinds_ccb()).unwrap();
        assert!((k.get2(0, 1) - (-0.5f64).exp()).abs() < 1e-12);
        assert_eq!(k.get2(0, 2), 0.0);
        assert_eq!(k.get2(1, 2), 0.0);
    }

    #[test]
    fn binary_product_requires_both_on() {
        let comp = KernelComponent::BinaryProduct {
            binary: 2,
            inputs: vec![0],
        };
        let params = Tensor::vector(vec![0.0, 0.0]);
        let k = eval_component(&comp, &params, &x3(), &kinds_ccb()).unwrap();
        assert_eq!(k.get2(0, 1), 0.0); // row 1 has b=0
        assert!(k.get2(0, 2) > 0.0);
        assert_eq!(k.get2(0, 0), 1.0);
    }

    #[test]
    fn kind_mismatch_detected() {
        let comp = KernelComponent::SquaredExponential { inputs: vec![1] };
        let params = Tensor::vector(vec![0.0, 0.0]);
        let err = eval_component(&comp, &params, &x3(), &kinds_ccb()).unwrap_err();
        assert!(matches!(err, GpError::KindMismatch { .. }));
    }

    #[test]
    fn component_matrices_are_exactly_symmetric() {
        let comp = KernelComponent::SquaredExponential { inputs: vec![0] };
        let params = Tensor::vector(vec![0.3, -0.2]);
        let k = eval_component(&comp, &params, &x3(), &kinds_ccb()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(k.get2(i, j), k.get2(j, i));
            }
        }
    }

    #[test]
    fn kernel_param_gradients_match_finite_differences() {
        use crate::gradcheck::assert_gradients;
        let comp = KernelComponent::Interaction {
            categorical: 1,
            inputs: vec![0],
        };
        let x = x3();
        let kinds = kinds_ccb();
        let params = Tensor::vector(vec![0.2, -0.3]);

        // loss = Σ_ij w_ij·K_ij with a fixed asymmetric weighting
        let w = Tensor::matrix(3, 3, vec![1.0, 0.5, -0.2, 0.1, 2.0, 0.3, -1.0, 0.4, 0.9]).unwrap();
        let loss_of = |p: &Tensor| -> f64 {
            let k = eval_component(&comp, p, &x, &kinds).unwrap();
            k.data()
                .iter()
                .zip(w.data().iter())
                .map(|(a, b)| a * b)
                .sum()
        };
        let k = eval_component(&comp, &params, &x, &kinds).unwrap();
        let analytic = component_param_grad(&comp, &params, &x, &k, &w);
        let mut named = vec![("kernel".to_string(), params.clone())];
        assert_gradients(&mut named, &[analytic], |ps| loss_of(&ps[0].1));
    }
}
