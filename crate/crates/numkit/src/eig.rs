//! Symmetric eigendecomposition by cyclic Jacobi rotations.

use crate::error::{NumError, Result};
use crate::matrix::Matrix;

/// Symmetry tolerance accepted by [`sym_eig`].
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Sweeps stop once the off-diagonal Frobenius mass drops below this.
pub const OFF_DIAGONAL_TOL: f64 = 1e-12;
pub const MAX_SWEEPS: usize = 100;
/// Magnitudes within this distance of the column maximum count as ties
/// for sign canonicalisation.
const SIGN_TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct EigResult {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors, one per column, in eigenvalue order.
    pub eigenvectors: Matrix,
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a.get(i, j) * a.get(i, j);
            }
        }
    }
    s.sqrt()
}

/// Flips `v` so that its largest-magnitude entry is positive.
///
/// Ties (within a small tolerance) resolve to the lowest index. Returns
/// whether a flip happened.
pub fn canonical_sign(v: &mut [f64]) -> bool {
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if max == 0.0 {
        return false;
    }
    let pivot = v
        .iter()
        .position(|x| x.abs() >= max - SIGN_TIE_TOL * max.max(1.0))
        .expect("some entry attains the maximum");
    if v[pivot] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
        true
    } else {
        false
    }
}

/// Eigenvalues (ascending) and orthonormal eigenvectors of a symmetric matrix.
pub fn sym_eig(s: &Matrix) -> Result<EigResult> {
    if !s.is_square() {
        return Err(NumError::NotSquare { rows: s.rows(), cols: s.cols() });
    }
    if !s.all_finite() {
        return Err(NumError::Invalid("sym_eig input holds non-finite entries".into()));
    }
    let asym = s.max_asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(NumError::NotSymmetric { asymmetry: asym });
    }
    let n = s.rows();
    // Work on the exactly symmetrised copy.
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a.set(i, j, 0.5 * (s.get(i, j) + s.get(j, i)));
        }
    }
    let mut v = Matrix::identity(n);

    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&a) < OFF_DIAGONAL_TOL {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                let tau = sn / (1.0 + c);

                a.set(p, p, app - t * apq);
                a.set(q, q, aqq + t * apq);
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);
                for r in 0..n {
                    if r != p && r != q {
                        let arp = a.get(r, p);
                        let arq = a.get(r, q);
                        let new_rp = arp - sn * (arq + tau * arp);
                        let new_rq = arq + sn * (arp - tau * arq);
                        a.set(r, p, new_rp);
                        a.set(p, r, new_rp);
                        a.set(r, q, new_rq);
                        a.set(q, r, new_rq);
                    }
                }
                for r in 0..n {
                    let vrp = v.get(r, p);
                    let vrq = v.get(r, q);
                    v.set(r, p, vrp - sn * (vrq + tau * vrp));
                    v.set(r, q, vrq + sn * (vrp - tau * vrq));
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps equal eigenvalues in index order.
    order.sort_by(|&i, &j| a.get(i, i).total_cmp(&a.get(j, j)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a.get(i, i)).collect();
    let mut eigenvectors = Matrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        let mut col = v.column(i);
        canonical_sign(&mut col);
        eigenvectors.set_column(k, &col);
    }
    Ok(EigResult { eigenvalues, eigenvectors })
}

impl EigResult {
    /// `U diag(f(λ)) Uᵀ`.
    pub fn spectral_map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let n = self.eigenvalues.len();
        let u = &self.eigenvectors;
        let w: Vec<f64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += u.get(i, k) * w[k] * u.get(j, k);
                }
                out.set(i, j, s);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::matmul;
    use proptest::prelude::*;

    fn check_invariants(s: &Matrix, r: &EigResult) {
        let n = s.rows();
        let u = &r.eigenvectors;
        let su = matmul(s, u).unwrap();
        let ul = matmul(u, &Matrix::diag(&r.eigenvalues)).unwrap();
        let resid = su.sub(&ul).unwrap().frobenius_norm();
        assert!(resid <= 1e-8 * s.frobenius_norm().max(1e-300), "residual {resid}");
        let utu = matmul(&u.transpose(), u).unwrap();
        assert!(utu.sub(&Matrix::identity(n)).unwrap().frobenius_norm() <= 1e-10);
        for w in r.eigenvalues.windows(2) {
            assert!(w[0] <= w[1]);
        }
    }

    #[test]
    fn identity_spectrum() {
        let r = sym_eig(&Matrix::identity(3)).unwrap();
        assert_eq!(r.eigenvalues, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn two_node_laplacian_spectrum() {
        let s = Matrix::from_rows(&[[1.0, -1.0], [-1.0, 1.0]]).unwrap();
        let r = sym_eig(&s).unwrap();
        assert!(r.eigenvalues[0].abs() < 1e-14);
        assert!((r.eigenvalues[1] - 2.0).abs() < 1e-14);
        check_invariants(&s, &r);
        // sign rule: first-index tie wins and is made positive
        assert!(r.eigenvectors.get(0, 1) > 0.0);
    }

    #[test]
    fn rejects_non_symmetric() {
        let s = Matrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eig(&s), Err(NumError::NotSymmetric { .. })));
        assert!(matches!(sym_eig(&Matrix::zeros(2, 3)), Err(NumError::NotSquare { .. })));
    }

    #[test]
    fn canonical_sign_rule() {
        let mut v = vec![0.1, -0.9, 0.3];
        assert!(canonical_sign(&mut v));
        assert_eq!(v, vec![-0.1, 0.9, -0.3]);
        let mut tie = vec![-0.5, 0.5];
        canonical_sign(&mut tie);
        assert_eq!(tie, vec![0.5, -0.5]);
    }

    fn symmetric_strategy(max_n: usize) -> impl Strategy<Value = Matrix> {
        (1..=max_n).prop_flat_map(|n| {
            prop::collection::vec(-5.0f64..5.0, n * n).prop_map(move |raw| {
                let mut m = Matrix::zeros(n, n);
                for i in 0..n {
                    for j in 0..=i {
                        let v = raw[i * n + j];
                        m.set(i, j, v);
                        m.set(j, i, v);
                    }
                }
                m
            })
        })
    }

    proptest! {
        #[test]
        fn jacobi_invariants_hold(s in symmetric_strategy(9)) {
            let r = sym_eig(&s).unwrap();
            check_invariants(&s, &r);
            let back = r.spectral_map(|l| l);
            prop_assert!(back.sub(&s).unwrap().frobenius_norm() <= 1e-8 * s.frobenius_norm().max(1e-300));
        }

        #[test]
        fn jacobi_is_deterministic(s in symmetric_strategy(6)) {
            let a = sym_eig(&s).unwrap();
            let b = sym_eig(&s).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
