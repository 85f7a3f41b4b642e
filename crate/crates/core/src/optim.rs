//! Adam with standard bias-corrected moment estimates.

use crate::tensor::{NumericError, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

/// Optimizer state: first/second moments per parameter tensor plus the
/// step counter. State slots align positionally with the parameter list.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &[(String, &Tensor)]) -> Self {
        AdamState {
            m: params.iter().map(|(_, p)| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|(_, p)| Tensor::zeros(p.shape())).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// In-place update of `params` from aligned `grads`.
    pub fn step(
        &mut self,
        cfg: &AdamConfig,
        params: &mut [(String, &mut Tensor)],
        grads: &[Tensor],
    ) -> Result<(), NumericError> {
        assert_eq!(params.len(), grads.len());
        self.t += 1;
        let b1t = 1.0 - cfg.beta1.powi(self.t as i32);
        let b2t = 1.0 - cfg.beta2.powi(self.t as i32);
        for ((param, grad), (m, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let p = &mut param.1;
            if p.shape() != grad.shape() {
                return Err(NumericError::ShapeMismatch {
                    context: "adam_step",
                    left: p.shape().to_vec(),
                    right: grad.shape().to_vec(),
                });
            }
            for k in 0..p.len() {
                let g = grad.data()[k];
                let mk = cfg.beta1 * m.data()[k] + (1.0 - cfg.beta1) * g;
                let vk = cfg.beta2 * v.data()[k] + (1.0 - cfg.beta2) * g * g;
                m.data_mut()[k] = mk;
                v.data_mut()[k] = vk;
                let m_hat = mk / b1t;
                let v_hat = vk / b2t;
                p.data_mut()[k] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_fixed() {
        let mut p = Tensor::vector(vec![1.0, -2.0]);
        let named = vec![("p".to_string(), &p)];
        let mut state = AdamState::new(&named);
        drop(named);
        let grads = vec![Tensor::zeros(&[2])];
        let mut view = vec![("p".to_string(), &mut p)];
        state
            .step(&AdamConfig::default(), &mut view, &grads)
            .unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr_sign() {
        // Bias correction makes m̂/√v̂ = sign(g) on the first step.
        let mut p = Tensor::vector(vec![0.0, 0.0]);
        let named = vec![("p".to_string(), &p)];
        let mut state = AdamState::new(&named);
        drop(named);
        let grads = vec![Tensor::vector(vec![3.5, -0.25])];
        let cfg = AdamConfig::with_lr(0.1);
        let mut view = vec![("p".to_string(), &mut p)];
        state.step(&cfg, &mut view, &grads).unwrap();
        assert!((p.data()[0] - (-0.1)).abs() < 1e-6);
        assert!((p.data()[1] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn converges_on_quadratic() {
        // Reference: 100 Adam steps on f(x)=x² from x=5 with lr 0.1.
        let mut x = Tensor::vector(vec![5.0]);
        let named = vec![("x".to_string(), &x)];
        let mut state = AdamState::new(&named);
        drop(named);
        let cfg = AdamConfig::with_lr(0.1);
        for _ in 0..100 {
            let g = vec![Tensor::vector(vec![2.0 * x.data()[0]])];
            let mut view = vec![("x".to_string(), &mut x)];
            state.step(&cfg, &mut view, &g).unwrap();
        }
        assert!(x.data()[0].abs() < 0.5, "got {}", x.data()[0]);
    }

    #[test]
    fn matches_scalar_reference_trace() {
        // Independent scalar re-implementation of the same recurrence.
        let cfg = AdamConfig::with_lr(0.05);
        let mut x = Tensor::vector(vec![1.2]);
        let named = vec![("x".to_string(), &x)];
        let mut state = AdamState::new(&named);
        drop(named);

        let (mut rx, mut rm, mut rv) = (1.2f64, 0.0f64, 0.0f64);
        for t in 1..=25u32 {
            let g = 3.0 * rx * rx - 1.0;
            let grads = vec![Tensor::vector(vec![3.0 * x.data()[0] * x.data()[0] - 1.0])];
            let mut view = vec![("x".to_string(), &mut x)];
            state.step(&cfg, &mut view, &grads).unwrap();

            rm = cfg.beta1 * rm + (1.0 - cfg.beta1) * g;
            rv = cfg.beta2 * rv + (1.0 - cfg.beta2) * g * g;
            let mh = rm / (1.0 - cfg.beta1.powi(t as i32));
            let vh = rv / (1.0 - cfg.beta2.powi(t as i32));
            rx -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
            assert!((x.data()[0] - rx).abs() < 1e-12);
        }
    }
}
