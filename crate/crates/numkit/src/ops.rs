//! Dense kernels shared by the eager API and the tape.

use crate::error::{NumError, Result};
use crate::matrix::Matrix;

/// Below this many multiply-adds the packing cost of the blocked kernel
/// outweighs its speed.
const BLOCKED_MIN_MACS: usize = 4096;

/// `c += op(a) * op(b)` where `op` optionally transposes.
///
/// The kernel is chosen from the shapes alone, so results are
/// bit-reproducible for identical inputs on one machine.
pub(crate) fn gemm_acc(a: &Matrix, ta: bool, b: &Matrix, tb: bool, c: &mut Matrix) {
    let (m, k) = if ta { (a.cols(), a.rows()) } else { a.shape() };
    let n = if tb { b.rows() } else { b.cols() };
    debug_assert_eq!(c.shape(), (m, n));
    if m * n * k >= BLOCKED_MIN_MACS {
        let (ra, ca) = if ta { (1, a.cols() as isize) } else { (a.cols() as isize, 1) };
        let (rb, cb) = if tb { (1, b.cols() as isize) } else { (b.cols() as isize, 1) };
        // SAFETY: strides describe `op(a)` (m×k), `op(b)` (k×n) and `c`
        // (m×n) inside their row-major buffers, and `c` does not alias them.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.data().as_ptr(),
                ra,
                ca,
                b.data().as_ptr(),
                rb,
                cb,
                1.0,
                c.data_mut().as_mut_ptr(),
                n as isize,
                1,
            );
        }
        return;
    }
    let ad = a.data();
    let bd = b.data();
    let acols = a.cols();
    let bcols = b.cols();
    let cd = c.data_mut();
    match (ta, tb) {
        (false, false) => {
            for i in 0..m {
                let crow = &mut cd[i * n..(i + 1) * n];
                for p in 0..k {
                    let aip = ad[i * acols + p];
                    if aip == 0.0 {
                        continue;
                    }
                    let brow = &bd[p * bcols..(p + 1) * bcols];
                    for (cv, bv) in crow.iter_mut().zip(brow) {
                        *cv += aip * bv;
                    }
                }
            }
        }
        (false, true) => {
            for i in 0..m {
                let arow = &ad[i * acols..(i + 1) * acols];
                for j in 0..n {
                    let brow = &bd[j * bcols..(j + 1) * bcols];
                    cd[i * n + j] += dot(arow, brow);
                }
            }
        }
        (true, false) => {
            for p in 0..k {
                let arow = &ad[p * acols..(p + 1) * acols];
                let brow = &bd[p * bcols..(p + 1) * bcols];
                for i in 0..m {
                    let api = arow[i];
                    if api == 0.0 {
                        continue;
                    }
                    let crow = &mut cd[i * n..(i + 1) * n];
                    for (cv, bv) in crow.iter_mut().zip(brow) {
                        *cv += api * bv;
                    }
                }
            }
        }
        (true, true) => {
            for i in 0..m {
                for j in 0..n {
                    let mut s = 0.0;
                    for p in 0..k {
                        s += ad[p * acols + i] * bd[j * bcols + p];
                    }
                    cd[i * n + j] += s;
                }
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators let the compiler vectorize.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[c * 4 + l] * b[c * 4 + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub(crate) fn product_shape(a: &Matrix, ta: bool, b: &Matrix, tb: bool) -> Result<(usize, usize)> {
    let (m, k1) = if ta { (a.cols(), a.rows()) } else { a.shape() };
    let (k2, n) = if tb { (b.cols(), b.rows()) } else { b.shape() };
    if k1 != k2 {
        return Err(NumError::DimMismatch { op: "matmul", lhs: (m, k1), rhs: (k2, n) });
    }
    Ok((m, n))
}

/// `op(a) * op(b)`.
pub fn matmul_t(a: &Matrix, ta: bool, b: &Matrix, tb: bool) -> Result<Matrix> {
    let (m, n) = product_shape(a, ta, b, tb)?;
    let mut c = Matrix::zeros(m, n);
    gemm_acc(a, ta, b, tb, &mut c);
    Ok(c)
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    matmul_t(a, false, b, false)
}

/// Row-wise softmax. Entries equal to `-inf` receive exactly zero weight.
pub fn row_softmax(a: &Matrix) -> Result<Matrix> {
    let mut out = a.clone();
    for r in 0..a.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(NumError::DegenerateMask { row: r });
        }
        if max.is_nan() || row.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(NumError::Invalid(format!("softmax row {r} holds NaN or +inf")));
        }
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = if *v == f64::NEG_INFINITY { 0.0 } else { (*v - max).exp() };
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(out)
}

/// Per-row normalisation statistics used by both the eager op and the tape.
pub(crate) fn layer_norm_parts(x: &Matrix, eps: f64) -> (Matrix, Vec<f64>) {
    let d = x.cols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = xhat.row_mut(r);
        let mean = row.iter().sum::<f64>() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let is = 1.0 / (var + eps).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * is;
        }
        inv_std.push(is);
    }
    (xhat, inv_std)
}

/// `(x - mean) / sqrt(var + eps) * gain + bias` per row, population variance.
pub fn layer_norm(x: &Matrix, gain: &[f64], bias: &[f64], eps: f64) -> Result<Matrix> {
    if gain.len() != x.cols() || bias.len() != x.cols() {
        return Err(NumError::DimMismatch {
            op: "layer_norm",
            lhs: x.shape(),
            rhs: (gain.len(), bias.len()),
        });
    }
    let (mut xhat, _) = layer_norm_parts(x, eps);
    for r in 0..x.rows() {
        for ((v, g), b) in xhat.row_mut(r).iter_mut().zip(gain).zip(bias) {
            *v = *v * g + b;
        }
    }
    Ok(xhat)
}

pub fn relu(x: &Matrix) -> Matrix {
    x.map(|v| v.max(0.0))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh approximation of GELU.
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub(crate) fn gelu_grad_scalar(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub fn gelu(x: &Matrix) -> Matrix {
    x.map(gelu_scalar)
}
