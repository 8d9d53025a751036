//! Degree, Laplacian-eigenvector and SVD positional encodings.

use graphkit::{degrees, normalized_laplacian, Graph};
use numkit::{svd, sym_eig, EigResult, Matrix};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

/// Degree tables have `MAX_DEGREE + 1` rows; larger degrees are clipped.
pub const MAX_DEGREE: usize = 64;
/// Eigenvalues at or below this count as trivial.
pub const NONTRIVIAL_EIG_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeKind {
    Degree,
    Eig,
    Svd,
}

impl PeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PeKind::Degree => "degree",
            PeKind::Eig => "eig",
            PeKind::Svd => "svd",
        }
    }

    /// Width of `P` before `f_map`.
    pub fn raw_width(self, size: usize) -> usize {
        match self {
            PeKind::Degree => 0,
            PeKind::Eig => size,
            PeKind::Svd => 2 * size,
        }
    }
}

impl std::str::FromStr for PeKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "degree" => Ok(PeKind::Degree),
            "eig" | "laplacian" | "laplacian-eig" => Ok(PeKind::Eig),
            "svd" => Ok(PeKind::Svd),
            _ => Err(ModelError::Config(format!("unknown PE kind `{s}` (degree|eig|svd)"))),
        }
    }
}

/// Eager PE parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PeParams {
    pub kind: PeKind,
    /// `k` for eig, `r` for svd; unused for degree.
    pub size: usize,
    /// In-degree table, or the single table of an undirected graph.
    pub z_in: Matrix,
    pub z_out: Matrix,
    pub w_map: Matrix,
    pub b_map: Matrix,
    /// Add `P` directly (its width must equal the model width).
    pub identity_map: bool,
}

impl PeParams {
    pub fn zeros(kind: PeKind, size: usize, hidden: usize) -> Self {
        Self {
            kind,
            size,
            z_in: Matrix::zeros(MAX_DEGREE + 1, hidden),
            z_out: Matrix::zeros(MAX_DEGREE + 1, hidden),
            w_map: Matrix::zeros(kind.raw_width(size), hidden),
            b_map: Matrix::zeros(1, hidden),
            identity_map: false,
        }
    }
}

/// Table rows for each node: `(in or unified, out)`; `out` is `None` for
/// undirected graphs.
pub fn degree_indices(g: &Graph, max_degree: usize) -> (Vec<usize>, Option<Vec<usize>>) {
    let (indeg, outdeg) = degrees(g);
    let clip = |v: Vec<usize>| v.into_iter().map(|d| d.min(max_degree)).collect::<Vec<_>>();
    if g.is_directed() {
        (clip(indeg), Some(clip(outdeg)))
    } else {
        (clip(outdeg), None)
    }
}

/// Row `i` is `z⁻[deg⁻(i)] + z⁺[deg⁺(i)]`, or `z[deg(i)]` when undirected.
pub fn degree_pe(g: &Graph, p: &PeParams) -> Result<Matrix> {
    let max_degree = p.z_in.rows().checked_sub(1).ok_or_else(|| {
        ModelError::Shape("degree table needs at least one row".into())
    })?;
    let (a, b) = degree_indices(g, max_degree);
    let d = p.z_in.cols();
    let mut out = Matrix::zeros(g.num_nodes(), d);
    for i in 0..g.num_nodes() {
        out.row_mut(i).copy_from_slice(p.z_in.row(a[i]));
        if let Some(b) = &b {
            if p.z_out.shape() != p.z_in.shape() {
                return Err(ModelError::Shape("in/out degree tables differ in shape".into()));
            }
            for (o, z) in out.row_mut(i).iter_mut().zip(p.z_out.row(b[i])) {
                *o += z;
            }
        }
    }
    Ok(out)
}

/// Canonical eigenvectors for the `k` smallest non-trivial eigenvalues,
/// zero-padded to `k` columns.
pub fn laplacian_pe_from_spectrum(eig: &EigResult, k: usize) -> Matrix {
    let n = eig.eigenvalues.len();
    let mut p = Matrix::zeros(n, k);
    let picked = eig
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &l)| l > NONTRIVIAL_EIG_TOL)
        .map(|(i, _)| i)
        .take(k);
    for (c, i) in picked.enumerate() {
        p.set_column(c, &eig.eigenvectors.column(i));
    }
    p
}

pub fn laplacian_pe(g: &Graph, k: usize, rng: &mut impl Rng, training: bool) -> Result<Matrix> {
    let eig = sym_eig(&normalized_laplacian(g)?)?;
    let mut p = laplacian_pe_from_spectrum(&eig, k);
    if training {
        flip_columns(&mut p, rng);
    }
    Ok(p)
}

/// Each column negated independently with probability ½.
pub fn flip_columns(p: &mut Matrix, rng: &mut impl Rng) {
    for c in 0..p.cols() {
        if rng.gen_bool(0.5) {
            let col: Vec<f64> = p.column(c).iter().map(|v| -v).collect();
            p.set_column(c, &col);
        }
    }
}

/// Negates column pairs `(i, r + i)` together with probability ½.
pub fn flip_column_pairs(p: &mut Matrix, rng: &mut impl Rng) {
    let r = p.cols() / 2;
    for i in 0..r {
        if rng.gen_bool(0.5) {
            for c in [i, r + i] {
                let col: Vec<f64> = p.column(c).iter().map(|v| -v).collect();
                p.set_column(c, &col);
            }
        }
    }
}

/// `[U√Σ ‖ V√Σ]` over the top `r` singular triples of `a`.
pub fn svd_pe_matrix(a: &Matrix, r: usize) -> Result<Matrix> {
    let k = a.rows().min(a.cols());
    if r == 0 || r > k {
        return Err(ModelError::Config(format!("svd PE size {r} must lie in 1..={k}")));
    }
    svd_pe_padded(a, r)
}

/// Like [`svd_pe_matrix`] but keeps `min(r, n)` triples and zero-pads the rest.
pub fn svd_pe_padded(a: &Matrix, r: usize) -> Result<Matrix> {
    let s = svd(a)?;
    let n = a.rows();
    let keep = r.min(s.sigma.len());
    let mut p = Matrix::zeros(n, 2 * r);
    for i in 0..keep {
        let root = s.sigma[i].sqrt();
        let u: Vec<f64> = s.u.column(i).iter().map(|v| v * root).collect();
        p.set_column(i, &u);
        // V has one row per column of `a`; square adjacency keeps them aligned.
        let v: Vec<f64> = s.v.column(i).iter().map(|v| v * root).collect();
        p.set_column(r + i, &v);
    }
    Ok(p)
}

pub fn svd_pe(g: &Graph, r: usize, rng: &mut impl Rng, training: bool) -> Result<Matrix> {
    let mut p = svd_pe_matrix(g.adjacency(), r)?;
    if training {
        flip_column_pairs(&mut p, rng);
    }
    Ok(p)
}

/// `X + P·W_map + b_map`, or `X + P` when the map is flagged as identity.
pub fn apply_pe(x: &Matrix, pe: &Matrix, p: &PeParams) -> Result<Matrix> {
    if x.rows() != pe.rows() {
        return Err(ModelError::Shape(format!("{} tokens but {} PE rows", x.rows(), pe.rows())));
    }
    if p.identity_map {
        if pe.cols() != x.cols() {
            return Err(ModelError::Shape(format!(
                "identity map needs PE width {}, got {}",
                x.cols(),
                pe.cols()
            )));
        }
        return Ok(x.add(pe)?);
    }
    let mut mapped = numkit::matmul(pe, &p.w_map)?;
    if p.b_map.shape() != (1, x.cols()) {
        return Err(ModelError::Shape("b_map must be 1 x d".into()));
    }
    for r in 0..mapped.rows() {
        for (v, b) in mapped.row_mut(r).iter_mut().zip(p.b_map.row(0)) {
            *v += b;
        }
    }
    Ok(x.add(&mapped)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_tables_give_zero_pe() {
        let p = PeParams::zeros(PeKind::Degree, 0, 4);
        assert_eq!(degree_pe(&Graph::path(3), &p).unwrap(), Matrix::zeros(3, 4));
    }

    #[test]
    fn directed_lookup_sums_both_tables() {
        // node 2: in-degree 2, out-degree 1
        let g = Graph::new(4, true, &[(0, 2), (1, 2), (2, 3)], Matrix::ones(4, 1)).unwrap();
        let mut p = PeParams::zeros(PeKind::Degree, 0, 2);
        for r in 0..=MAX_DEGREE {
            p.z_in.row_mut(r).copy_from_slice(&[r as f64, 0.0]);
            p.z_out.row_mut(r).copy_from_slice(&[0.0, 10.0 * r as f64]);
        }
        let pe = degree_pe(&g, &p).unwrap();
        assert_eq!(pe.row(2), &[2.0, 10.0]);
    }

    #[test]
    fn degree_is_clipped_to_table() {
        let g = Graph::star(40);
        let mut p = PeParams::zeros(PeKind::Degree, 0, 1);
        p.z_in = Matrix::from_raw(33, 1, (0..33).map(|r| r as f64).collect());
        let pe = degree_pe(&g, &p).unwrap();
        assert_eq!(pe.get(0, 0), 32.0);
        assert_eq!(pe.get(1, 0), 1.0);
    }

    #[test]
    fn fiedler_vector_of_p3() {
        let g = Graph::path(3);
        let pe = laplacian_pe(&g, 1, &mut ChaCha8Rng::seed_from_u64(0), false).unwrap();
        let eig = sym_eig(&normalized_laplacian(&g).unwrap()).unwrap();
        // spectrum {0, 1, 2}; the Fiedler value is 1
        assert!((eig.eigenvalues[1] - 1.0).abs() < 1e-12);
        assert_eq!(pe.column(0), eig.eigenvectors.column(1));
        assert!(pe.get(1, 0).abs() < 1e-12);
        assert!(pe.get(0, 0) > 0.0);
    }

    #[test]
    fn small_graph_is_zero_padded() {
        let pe = laplacian_pe(&Graph::complete(2), 3, &mut ChaCha8Rng::seed_from_u64(0), false).unwrap();
        assert_eq!(pe.shape(), (2, 3));
        assert!(pe.column(0).iter().all(|v| v.abs() > 0.5));
        assert_eq!(pe.column(1), vec![0.0, 0.0]);
        assert_eq!(pe.column(2), vec![0.0, 0.0]);
    }

    #[test]
    fn training_flips_replay_with_seed() {
        let g = Graph::cycle(7);
        let a = laplacian_pe(&g, 4, &mut ChaCha8Rng::seed_from_u64(5), true).unwrap();
        let b = laplacian_pe(&g, 4, &mut ChaCha8Rng::seed_from_u64(5), true).unwrap();
        assert_eq!(a, b);
        let base = laplacian_pe(&g, 4, &mut ChaCha8Rng::seed_from_u64(5), false).unwrap();
        for c in 0..4 {
            let same = a.column(c) == base.column(c);
            let neg = a.column(c).iter().zip(base.column(c)).all(|(x, y)| *x == -y);
            assert!(same || neg);
        }
    }

    #[test]
    fn svd_pe_examples() {
        let empty = Graph::edgeless(4);
        let pe = svd_pe(&empty, 2, &mut ChaCha8Rng::seed_from_u64(0), false).unwrap();
        assert_eq!(pe, Matrix::zeros(4, 4));

        let pe = svd_pe_matrix(&Matrix::diag(&[3.0, 2.0, 1.0]), 2).unwrap();
        assert!((pe.get(0, 0) - 3f64.sqrt()).abs() < 1e-12);
        assert!((pe.get(1, 1) - 2f64.sqrt()).abs() < 1e-12);
        assert!((pe.get(0, 2) - 3f64.sqrt()).abs() < 1e-12);
        assert!((pe.get(1, 3) - 2f64.sqrt()).abs() < 1e-12);

        assert!(svd_pe(&Graph::path(3), 4, &mut ChaCha8Rng::seed_from_u64(0), false).is_err());
    }

    #[test]
    fn undirected_svd_blocks_agree_up_to_sign() {
        let g = Graph::new(5, false, &[(0, 1), (1, 2), (2, 3), (1, 4), (0, 3), (2, 4)], Matrix::ones(5, 1))
            .unwrap();
        let pe = svd_pe(&g, 2, &mut ChaCha8Rng::seed_from_u64(0), false).unwrap();
        for i in 0..2 {
            let (u, v) = (pe.column(i), pe.column(2 + i));
            let same = u.iter().zip(&v).all(|(a, b)| (a - b).abs() < 1e-9);
            let flip = u.iter().zip(&v).all(|(a, b)| (a + b).abs() < 1e-9);
            assert!(same || flip);
        }
    }

    #[test]
    fn apply_pe_examples() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let pe = Matrix::from_rows(&[[0.5, -1.0, 2.0], [1.5, 0.0, 1.0]]).unwrap();
        let mut p = PeParams::zeros(PeKind::Svd, 1, 2);
        p.w_map = Matrix::zeros(3, 2);
        assert_eq!(apply_pe(&x, &pe, &p).unwrap(), x);
        p.b_map = Matrix::from_rows(&[[0.25, -0.5]]).unwrap();
        let got = apply_pe(&x, &Matrix::zeros(2, 3), &p).unwrap();
        assert_eq!(got.data(), &[1.25, 1.5, 3.25, 3.5]);

        p.w_map = Matrix::from_rows(&[[1.0, 0.0], [2.0, -1.0], [0.0, 3.0]]).unwrap();
        let got = apply_pe(&x, &pe, &p).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mut want = x.get(i, j) + p.b_map.get(0, j);
                for k in 0..3 {
                    want += pe.get(i, k) * p.w_map.get(k, j);
                }
                assert!((got.get(i, j) - want).abs() < 1e-12);
            }
        }
    }
}
