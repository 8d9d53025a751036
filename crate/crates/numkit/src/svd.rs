//! Thin SVD from the symmetric eigendecomposition of `AᵀA`.

use crate::eig::{canonical_sign, sym_eig};
use crate::error::Result;
use crate::matrix::Matrix;
use crate::ops::matmul_t;

/// Singular values at or below this fraction of the largest one are treated
/// as exact zeros; their left vectors are completed by orthonormalisation.
const ZERO_SINGULAR_REL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    /// `m × k` with `k = min(m, n)`.
    pub u: Matrix,
    /// Descending, nonnegative, length `k`.
    pub sigma: Vec<f64>,
    /// `n × k`.
    pub v: Matrix,
}

impl SvdResult {
    /// `U_r Σ_r V_rᵀ` from the leading `r` triples.
    pub fn reconstruct(&self, r: usize) -> Matrix {
        let r = r.min(self.sigma.len());
        let (m, n) = (self.u.rows(), self.v.rows());
        let mut out = Matrix::zeros(m, n);
        for k in 0..r {
            let s = self.sigma[k];
            for i in 0..m {
                let us = self.u.get(i, k) * s;
                if us == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] += us * self.v.get(j, k);
                }
            }
        }
        out
    }

    pub fn truncate(&self, r: usize) -> SvdResult {
        let r = r.min(self.sigma.len());
        SvdResult {
            u: self.u.slice_cols(0, r),
            sigma: self.sigma[..r].to_vec(),
            v: self.v.slice_cols(0, r),
        }
    }
}

/// Orthonormalises `candidate` against the given columns (two MGS passes).
fn orthonormal_complement(cols: &[Vec<f64>], dim: usize) -> Vec<f64> {
    for e in 0..dim {
        let mut w = vec![0.0; dim];
        w[e] = 1.0;
        for _ in 0..2 {
            for c in cols {
                let proj: f64 = c.iter().zip(&w).map(|(a, b)| a * b).sum();
                for (wi, ci) in w.iter_mut().zip(c) {
                    *wi -= proj * ci;
                }
            }
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 {
            return w.into_iter().map(|x| x / norm).collect();
        }
    }
    unreachable!("fewer than `dim` columns always leave a complement direction")
}

pub fn svd(a: &Matrix) -> Result<SvdResult> {
    if a.rows() < a.cols() {
        let t = svd(&a.transpose())?;
        return Ok(SvdResult { u: t.v, sigma: t.sigma, v: t.u }.canonicalized());
    }
    let (m, n) = a.shape();
    let ata = matmul_t(a, true, a, false)?;
    let eig = sym_eig(&ata)?;
    // Descending eigenvalue order.
    let order: Vec<usize> = (0..n).rev().collect();
    let mut v = Matrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        v.set_column(k, &eig.eigenvectors.column(i));
    }
    let av = matmul_t(a, false, &v, false)?;
    let mut sigma: Vec<f64> = (0..n)
        .map(|k| av.column(k).iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let smax = sigma.iter().cloned().fold(0.0, f64::max);
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut pending = Vec::new();
    for k in 0..n {
        if sigma[k] > ZERO_SINGULAR_REL * smax && smax > 0.0 {
            u_cols.push(av.column(k).iter().map(|x| x / sigma[k]).collect());
        } else {
            sigma[k] = 0.0;
            u_cols.push(Vec::new());
            pending.push(k);
        }
    }
    for k in pending {
        let existing: Vec<Vec<f64>> = u_cols.iter().filter(|c| !c.is_empty()).cloned().collect();
        u_cols[k] = orthonormal_complement(&existing, m);
    }
    // Column norms from A·v can reorder nearly-equal values; restore descending order.
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]));
    let mut u = Matrix::zeros(m, n);
    let mut vv = Matrix::zeros(n, n);
    let mut s_sorted = Vec::with_capacity(n);
    for (k, &i) in idx.iter().enumerate() {
        u.set_column(k, &u_cols[i]);
        vv.set_column(k, &v.column(i));
        s_sorted.push(sigma[i]);
    }
    Ok(SvdResult { u, sigma: s_sorted, v: vv }.canonicalized())
}

impl SvdResult {
    /// Applies the sign rule to each left vector and mirrors it on the right one.
    fn canonicalized(mut self) -> Self {
        for k in 0..self.sigma.len() {
            let mut col = self.u.column(k);
            if canonical_sign(&mut col) {
                self.u.set_column(k, &col);
                let flipped: Vec<f64> = self.v.column(k).iter().map(|x| -x).collect();
                self.v.set_column(k, &flipped);
            }
        }
        self
    }
}
