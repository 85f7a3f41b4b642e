//! Kullback-Leibler divergence between the encoder posterior and the prior.
//!
//! The posterior is a per-latent-dimension diagonal Gaussian N(μ_l, diag σ_l²)
//! over the batch's n samples; the prior is either standard normal or the
//! zero-mean GP N(0, K). Both divergences are closed-form; the GP case solves
//! through the Cholesky factor, never an explicit inverse of K itself.

use crate::linalg;
use crate::tape::CustomOp;
use crate::tensor::{NumericError, Tensor};

use super::{GpError, GramMatrix};

/// KL( N(μ, diag σ²) ‖ N(0, I) ) = ½ Σ (σ² + μ² − 1 − log σ²),
/// summed over all entries of the `n × L` posterior.
pub fn kl_standard_normal(mu: &Tensor, log_sigma: &Tensor) -> f64 {
    debug_assert!(mu.same_shape(log_sigma));
    mu.data()
        .iter()
        .zip(log_sigma.data().iter())
        .map(|(&m, &ls)| 0.5 * ((2.0 * ls).exp() + m * m - 1.0 - 2.0 * ls))
        .sum()
}

/// Per latent dimension l:
/// KL_l = ½ [ tr(K⁻¹ diag σ_l²) + μ_lᵀ K⁻¹ μ_l − n + log|K| − Σ_i log σ_il² ],
/// returned summed over l. One shared Gram matrix covers all dimensions.
pub fn kl_posterior_vs_gp(
    mu: &Tensor,
    log_sigma: &Tensor,
    gram: &GramMatrix,
) -> Result<f64, GpError> {
    let (n, l_dims) = posterior_dims(mu, log_sigma)?;
    if gram.n != n {
        return Err(GpError::DimensionMismatch {
            gram_n: gram.n,
            posterior_n: n,
        });
    }
    let log_det = linalg::log_det_from_cholesky(&gram.chol);
    let k_inv = linalg::inverse_from_cholesky(&gram.chol);
    let mut total = 0.0;
    for l in 0..l_dims {
        let mu_l: Vec<f64> = (0..n).map(|i| mu.get2(i, l)).collect();
        let alpha = linalg::solve_lower(&gram.chol, &mu_l);
        let quad: f64 = alpha.iter().map(|a| a * a).sum();
        let mut trace = 0.0;
        let mut sum_log = 0.0;
        for i in 0..n {
            let ls = log_sigma.get2(i, l);
            trace += k_inv.get2(i, i) * (2.0 * ls).exp();
            sum_log += 2.0 * ls;
        }
        total += 0.5 * (trace + quad - n as f64 + log_det - sum_log);
    }
    Ok(total)
}

/// Variant with one Gram matrix per latent dimension (or a single shared
/// one when `grams.len() == 1`).
pub fn kl_posterior_vs_gp_per_dim(
    mu: &Tensor,
    log_sigma: &Tensor,
    grams: &[GramMatrix],
) -> Result<f64, GpError> {
    let (_, l_dims) = posterior_dims(mu, log_sigma)?;
    if grams.len() == 1 {
        return kl_posterior_vs_gp(mu, log_sigma, &grams[0]);
    }
    assert_eq!(grams.len(), l_dims, "one Gram per latent dimension");
    let n = mu.shape()[0];
    let mut total = 0.0;
    for (l, gram) in grams.iter().enumerate() {
        let mu_l = Tensor::matrix(n, 1, (0..n).map(|i| mu.get2(i, l)).collect())
            .expect("column extraction");
        let ls_l = Tensor::matrix(n, 1, (0..n).map(|i| log_sigma.get2(i, l)).collect())
            .expect("column extraction");
        total += kl_posterior_vs_gp(&mu_l, &ls_l, gram)?;
    }
    Ok(total)
}

fn posterior_dims(mu: &Tensor, log_sigma: &Tensor) -> Result<(usize, usize), GpError> {
    if mu.shape() != log_sigma.shape() || mu.shape().len() != 2 {
        return Err(GpError::DimensionMismatch {
            gram_n: mu.shape().first().copied().unwrap_or(0),
            posterior_n: log_sigma.shape().first().copied().unwrap_or(0),
        });
    }
    Ok((mu.shape()[0], mu.shape()[1]))
}

/// Tape op: scalar GP-prior KL from (μ, log σ, K) with exact closed-form
/// gradients for all three inputs.
#[derive(Debug)]
pub struct GpKlOp;

impl GpKlOp {
    fn factor(k: &Tensor) -> Result<(Tensor, Tensor), NumericError> {
        let chol = linalg::cholesky(k).ok_or(NumericError::Factorization {
            context: "gp kl cholesky",
        })?;
        let k_inv = linalg::inverse_from_cholesky(&chol);
        Ok((chol, k_inv))
    }
}

impl CustomOp for GpKlOp {
    fn name(&self) -> &'static str {
        "gp_kl"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor, NumericError> {
        let (mu, log_sigma, k) = (inputs[0], inputs[1], inputs[2]);
        let (n, l_dims) = (mu.shape()[0], mu.shape()[1]);
        if k.shape() != [n, n] || log_sigma.shape() != mu.shape() {
            return Err(NumericError::ShapeMismatch {
                context: "gp_kl",
                left: mu.shape().to_vec(),
                right: k.shape().to_vec(),
            });
        }
        let (chol, k_inv) = Self::factor(k)?;
        let log_det = linalg::log_det_from_cholesky(&chol);
        let mut total = 0.0;
        for l in 0..l_dims {
            let mu_l: Vec<f64> = (0..n).map(|i| mu.get2(i, l)).collect();
            let alpha = linalg::solve_lower(&chol, &mu_l);
            let quad: f64 = alpha.iter().map(|a| a * a).sum();
            let mut trace = 0.0;
            let mut sum_log = 0.0;
            for i in 0..n {
                let ls = log_sigma.get2(i, l);
                trace += k_inv.get2(i, i) * (2.0 * ls).exp();
                sum_log += 2.0 * ls;
            }
            total += 0.5 * (trace + quad - n as f64 + log_det - sum_log);
        }
        Ok(Tensor::scalar(total))
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        out_grad: &Tensor,
    ) -> Result<Vec<Option<Tensor>>, NumericError> {
        let (mu, log_sigma, k) = (inputs[0], inputs[1], inputs[2]);
        let (n, l_dims) = (mu.shape()[0], mu.shape()[1]);
        let g0 = out_grad.scalar_value();
        let (_, k_inv) = Self::factor(k)?;

        // ∂KL/∂μ = K⁻¹μ
        let kinv_mu = k_inv.matmul(mu)?;
        let grad_mu = kinv_mu.map(|v| v * g0);

        // ∂KL/∂(log σ)_il = (K⁻¹)_ii σ_il² − 1
        let mut grad_ls = Tensor::zeros(mu.shape());
        for i in 0..n {
            for l in 0..l_dims {
                let s2 = (2.0 * log_sigma.get2(i, l)).exp();
                grad_ls.set2(i, l, g0 * (k_inv.get2(i, i) * s2 - 1.0));
            }
        }

        // ∂KL/∂K = ½ [ L·K⁻¹ − K⁻¹ (Σ_l diag σ_l² + μμᵀ) K⁻¹ ]
        let mut a = mu.matmul(&mu.transpose())?;
        for i in 0..n {
            let s2_sum: f64 = (0..l_dims)
                .map(|l| (2.0 * log_sigma.get2(i, l)).exp())
                .sum();
            let v = a.get2(i, i) + s2_sum;
            a.set2(i, i, v);
        }
        let sandwich = k_inv.matmul(&a)?.matmul(&k_inv)?;
        let mut grad_k = Tensor::zeros(&[n, n]);
        for i in 0..n {
            for j in 0..n {
                let v = 0.5 * (l_dims as f64 * k_inv.get2(i, j) - sandwich.get2(i, j));
                grad_k.set2(i, j, g0 * v);
            }
        }
        Ok(vec![Some(grad_mu), Some(grad_ls), Some(grad_k)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{eval_gram, KernelSpec};
    use crate::gp::kernel::{KernelComponent, KernelParams};
    use crate::data::DescriptorKind;

    fn identity_gram(n: usize) -> GramMatrix {
        let mut k = Tensor::zeros(&[n, n]);
        for i in 0..n {
            k.set2(i, i, 1.0);
        }
        let chol = linalg::cholesky(&k).unwrap();
        GramMatrix {
            n,
            values: k,
            chol,
        }
    }

    #[test]
    fn standard_prior_at_prior_is_zero() {
        let mu = Tensor::zeros(&[3, 2]);
        let ls = Tensor::zeros(&[3, 2]);
        assert_eq!(kl_standard_normal(&mu, &ls), 0.0);
    }

    #[test]
    fn standard_prior_mean_shift() {
        // single unit, μ=2, σ=1: KL = ½·4 = 2
        let mu = Tensor::matrix(1, 1, vec![2.0]).unwrap();
        let ls = Tensor::zeros(&[1, 1]);
        assert!((kl_standard_normal(&mu, &ls) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gp_kl_identity_matches_standard() {
        let mu = Tensor::matrix(4, 2, vec![0.3, -1.0, 0.2, 0.8, -0.5, 0.0, 1.5, -0.7]).unwrap();
        let ls = Tensor::matrix(4, 2, vec![0.1, -0.2, 0.0, 0.3, -0.4, 0.2, 0.15, -0.1]).unwrap();
        let gram = identity_gram(4);
        let gp = kl_posterior_vs_gp(&mu, &ls, &gram).unwrap();
        let std = kl_standard_normal(&mu, &ls);
        assert!((gp - std).abs() < 1e-10, "gp={gp} std={std}");
    }

    #[test]
    fn gp_kl_zero_for_matching_prior() {
        let mu = Tensor::zeros(&[3, 1]);
        let ls = Tensor::zeros(&[3, 1]);
        let gram = identity_gram(3);
        let kl = kl_posterior_vs_gp(&mu, &ls, &gram).unwrap();
        assert!(kl.abs() < 1e-12);
    }

    #[test]
    fn gp_kl_unit_mean_single_sample() {
        // K=I, n=1, L=1, μ=1, σ=1 → ½
        let mu = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        let ls = Tensor::zeros(&[1, 1]);
        let gram = identity_gram(1);
        let kl = kl_posterior_vs_gp(&mu, &ls, &gram).unwrap();
        assert!((kl - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_detected() {
        let mu = Tensor::zeros(&[3, 1]);
        let ls = Tensor::zeros(&[3, 1]);
        let gram = identity_gram(4);
        assert!(matches!(
            kl_posterior_vs_gp(&mu, &ls, &gram),
            Err(GpError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn gp_kl_gradients_match_finite_differences() {
        use crate::gradcheck::assert_gradients;
        use crate::tape::Tape;
        use std::rc::Rc;

        // Kernel inputs: 1 continuous + 1 categorical column over 5 rows.
        let x = Tensor::matrix(
            5,
            2,
            vec![0.0, 0.0, 0.7, 0.0, 1.4, 1.0, 2.2, 1.0, 3.0, 0.0],
        )
        .unwrap();
        let kinds = vec![DescriptorKind::Continuous, DescriptorKind::Categorical];
        let spec = KernelSpec {
            components: vec![
                KernelComponent::SquaredExponential { inputs: vec![0] },
                KernelComponent::Categorical { input: 1 },
            ],
            jitter: 1e-6,
        };
        let kp = KernelParams {
            per_component: vec![
                Tensor::vector(vec![0.1, -0.2]),
                Tensor::vector(vec![0.05]),
            ],
        };
        let mu0 = Tensor::matrix(5, 2, (0..10).map(|i| (i as f64) * 0.1 - 0.4).collect()).unwrap();
        let ls0 = Tensor::matrix(5, 2, (0..10).map(|i| (i as f64) * 0.03 - 0.1).collect()).unwrap();

        let run = |mu_t: &Tensor, ls_t: &Tensor, kp_t: &KernelParams| -> (f64, Vec<Tensor>) {
            let mut tape = Tape::new();
            let mu = tape.leaf(mu_t.clone());
            let ls = tape.leaf(ls_t.clone());
            let (gram, kleaves) =
                crate::gp::kernel::gram_on_tape(&mut tape, &spec.components, kp_t, &x, &kinds, spec.jitter)
                    .unwrap();
            let kl = tape.custom(Rc::new(GpKlOp), &[mu, ls, gram]).unwrap();
            let grads = tape.backward(kl).unwrap();
            let mut gs = vec![grads.wrt(&tape, mu), grads.wrt(&tape, ls)];
            gs.extend(kleaves.iter().map(|v| grads.wrt(&tape, *v)));
            (tape.value(kl).scalar_value(), gs)
        };

        let (_, analytic) = run(&mu0, &ls0, &kp);
        let mut named = vec![
            ("mu".to_string(), mu0.clone()),
            ("log_sigma".to_string(), ls0.clone()),
            ("k0".to_string(), kp.per_component[0].clone()),
            ("k1".to_string(), kp.per_component[1].clone()),
        ];
        assert_gradients(&mut named, &analytic, |ps| {
            let kp2 = KernelParams {
                per_component: vec![ps[2].1.clone(), ps[3].1.clone()],
            };
            run(&ps[0].1, &ps[1].1, &kp2).0
        });
    }

    #[test]
    fn gp_kl_nonnegative_on_random_grams() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let kinds = vec![DescriptorKind::Continuous];
        for _ in 0..20 {
            let n = 6;
            let x = Tensor::matrix(n, 1, (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .unwrap();
            let spec = KernelSpec {
                components: vec![KernelComponent::SquaredExponential { inputs: vec![0] }],
                jitter: 1e-6,
            };
            let kp = KernelParams::unit(&spec.components);
            let gram = eval_gram(&spec, &kp, &x, &kinds).unwrap();
            let mu = Tensor::matrix(n, 2, (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .unwrap();
            let ls = Tensor::matrix(n, 2, (0..2 * n).map(|_| rng.gen_range(-0.5..0.5)).collect())
                .unwrap();
            let kl = kl_posterior_vs_gp(&mu, &ls, &gram).unwrap();
            assert!(kl >= -1e-8, "kl = {kl}");
        }
    }
}
