//! Small dense linear algebra helpers: Cholesky factorization and
//! triangular solves on square matrices stored as [`Tensor`]s.

use crate::tensor::Tensor;

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
/// Returns `None` when a pivot is not strictly positive.
pub fn cholesky(a: &Tensor) -> Option<Tensor> {
    let n = a.shape()[0];
    debug_assert_eq!(a.shape(), &[n, n]);
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a.data()[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                l[i * n + j] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Some(Tensor::from_vec(vec![n, n], l).expect("square"))
}

/// Solve L·x = b for lower-triangular L (forward substitution).
pub fn solve_lower(l: &Tensor, b: &[f64]) -> Vec<f64> {
    let n = l.shape()[0];
    debug_assert_eq!(b.len(), n);
    let mut x = vec![0.0; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l.data()[i * n + k] * x[k];
        }
        x[i] = sum / l.data()[i * n + i];
    }
    x
}

/// Solve Lᵀ·x = b for lower-triangular L (back substitution).
pub fn solve_lower_transpose(l: &Tensor, b: &[f64]) -> Vec<f64> {
    let n = l.shape()[0];
    debug_assert_eq!(b.len(), n);
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = b[i];
        for k in i + 1..n {
            sum -= l.data()[k * n + i] * x[k];
        }
        x[i] = sum / l.data()[i * n + i];
    }
    x
}

/// Solve K·x = b given K = L·Lᵀ.
pub fn solve_spd(l: &Tensor, b: &[f64]) -> Vec<f64> {
    solve_lower_transpose(l, &solve_lower(l, b))
}

/// Inverse of K = L·Lᵀ via n triangular solve pairs.
pub fn inverse_from_cholesky(l: &Tensor) -> Tensor {
    let n = l.shape()[0];
    let mut inv = vec![0.0; n * n];
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = solve_spd(l, &e);
        e[j] = 0.0;
        for i in 0..n {
            inv[i * n + j] = col[i];
        }
    }
    // Symmetrize to wash out solve round-off.
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (inv[i * n + j] + inv[j * n + i]);
            inv[i * n + j] = v;
            inv[j * n + i] = v;
        }
    }
    Tensor::from_vec(vec![n, n], inv).expect("square")
}

/// log|K| from its Cholesky factor: 2·Σ log L_ii.
pub fn log_det_from_cholesky(l: &Tensor) -> f64 {
    let n = l.shape()[0];
    (0..n).map(|i| l.data()[i * n + i].ln()).sum::<f64>() * 2.0
}

/// Frobenius norm of A − B.
pub fn frobenius_distance(a: &Tensor, b: &Tensor) -> f64 {
    debug_assert!(a.same_shape(b));
    a.data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd_3x3() -> Tensor {
        // A·Aᵀ + I for A = [[1,2,0],[0,1,1],[1,0,1]]
        let a = Tensor::matrix(3, 3, vec![1.0, 2.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0]).unwrap();
        let mut k = a.matmul(&a.transpose()).unwrap();
        for i in 0..3 {
            let v = k.get2(i, i) + 1.0;
            k.set2(i, i, v);
        }
        k
    }

    #[test]
    fn cholesky_reconstructs() {
        let k = spd_3x3();
        let l = cholesky(&k).unwrap();
        let rec = l.matmul(&l.transpose()).unwrap();
        assert!(frobenius_distance(&rec, &k) < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let k = Tensor::matrix(2, 2, vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        assert!(cholesky(&k).is_none());
    }

    #[test]
    fn solve_matches_direct() {
        let k = spd_3x3();
        let l = cholesky(&k).unwrap();
        let b = vec![1.0, -2.0, 0.5];
        let x = solve_spd(&l, &b);
        // K·x should give back b
        let kx: Vec<f64> = (0..3)
            .map(|i| (0..3).map(|j| k.get2(i, j) * x[j]).sum())
            .collect();
        for (got, want) in kx.iter().zip(b.iter()) {
            assert!((got - want).abs() < 1e-10);
        }
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let k = spd_3x3();
        let l = cholesky(&k).unwrap();
        let inv = inverse_from_cholesky(&l);
        let prod = inv.matmul(&k).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((prod.get2(i, j) - want).abs() < 1e-10);
            }
        }
    }
}
