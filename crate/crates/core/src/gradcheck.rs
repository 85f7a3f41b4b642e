//! Finite-difference verification of analytic gradients.
//!
//! The checker only ever calls the forward pass, so it stays independent of
//! the reverse-mode code it is used to validate.

use crate::tensor::Tensor;

/// Central finite-difference step used throughout the crate's checks.
pub const FD_STEP: f64 = 1e-5;

/// Default relative-error bound for gradient agreement.
pub const FD_TOL: f64 = 1e-4;

/// Result of comparing one parameter element.
#[derive(Debug, Clone)]
pub struct FdMismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

// Denominator floor: below it the comparison is effectively absolute
// (1e-8 at the default tolerance), since central differences carry
// O(h²) truncation noise that dominates tiny gradients.
fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs()).max(1e-4);
    (a - n).abs() / scale
}

/// Compare analytic gradients against central finite differences.
///
/// `params` is a mutable list of named tensors; `loss` evaluates the scalar
/// objective for the current parameter values; `analytic` is the gradient to
/// verify, aligned with `params`. Returns every element whose relative error
/// exceeds `tol`.
pub fn check_gradients(
    params: &mut [(String, Tensor)],
    analytic: &[Tensor],
    mut loss: impl FnMut(&[(String, Tensor)]) -> f64,
    tol: f64,
) -> Vec<FdMismatch> {
    assert_eq!(params.len(), analytic.len());
    let mut bad = Vec::new();
    for pi in 0..params.len() {
        for ei in 0..params[pi].1.len() {
            let orig = params[pi].1.data()[ei];
            params[pi].1.data_mut()[ei] = orig + FD_STEP;
            let up = loss(params);
            params[pi].1.data_mut()[ei] = orig - FD_STEP;
            let down = loss(params);
            params[pi].1.data_mut()[ei] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic[pi].data()[ei];
            let e = rel_err(a, numeric);
            if e > tol {
                bad.push(FdMismatch {
                    param: params[pi].0.clone(),
                    index: ei,
                    analytic: a,
                    numeric,
                    rel_err: e,
                });
            }
        }
    }
    bad
}

/// Panics with a readable report when any element disagrees.
pub fn assert_gradients(
    params: &mut [(String, Tensor)],
    analytic: &[Tensor],
    loss: impl FnMut(&[(String, Tensor)]) -> f64,
) {
    let bad = check_gradients(params, analytic, loss, FD_TOL);
    if !bad.is_empty() {
        let head: Vec<String> = bad
            .iter()
            .take(5)
            .map(|m| {
                format!(
                    "{}[{}]: analytic={:.6e} numeric={:.6e} rel={:.3e}",
                    m.param, m.index, m.analytic, m.numeric, m.rel_err
                )
            })
            .collect();
        panic!(
            "{} gradient element(s) disagree with finite differences:\n{}",
            bad.len(),
            head.join("\n")
        );
    }
}
