//! Attention masks, biases and kernels built from graph structure.
//!
//! The eager builders return [`AttnModifier`] values for a fixed parameter
//! set. The `*_index`/`*_features` helpers produce the constant structure
//! that the trainable model combines with its parameters on the tape.

use std::rc::Rc;

use graphkit::{shortest_path_edges, Graph, KernelKind, Spd, StructCache, UNREACHABLE};
use numkit::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::txcore::AttnModifier;

/// Largest distance with its own spatial-bias bucket; one more bucket
/// follows for unreachable pairs.
pub const MAX_SPD: usize = 16;
/// Number of proximity views for PMA.
pub const PMA_VIEWS: usize = 3;
/// Longest path the edge-path bias has weight embeddings for.
pub const MAX_PATH_EDGES: usize = MAX_SPD;
pub const DEFAULT_MASK_HOPS: usize = 2;
pub const DEFAULT_DIFFUSION_BETA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AtKind {
    Mask1,
    MaskN { hops: usize },
    Spb,
    Pma,
    Kernel { kernel: KernelSpec },
    EdgeMask,
    EdgeBias,
}

/// Serializable mirror of [`KernelKind`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum KernelSpec {
    Diffusion { beta: f64 },
    RandomWalk { p: u32 },
}

impl From<KernelSpec> for KernelKind {
    fn from(k: KernelSpec) -> Self {
        match k {
            KernelSpec::Diffusion { beta } => KernelKind::Diffusion { beta },
            KernelSpec::RandomWalk { p } => KernelKind::PStepRandomWalk { p },
        }
    }
}

impl AtKind {
    pub fn name(&self) -> &'static str {
        match self {
            AtKind::Mask1 => "mask-1",
            AtKind::MaskN { .. } => "mask-n",
            AtKind::Spb => "spb",
            AtKind::Pma => "pma",
            AtKind::Kernel { .. } => "kernel",
            AtKind::EdgeMask => "edge-mask",
            AtKind::EdgeBias => "edge-bias",
        }
    }

    pub fn needs_edge_features(&self) -> bool {
        matches!(self, AtKind::EdgeMask | AtKind::EdgeBias)
    }
}

/// `1` where `0 ≤ spd ≤ h`.
pub fn spd_mask(spd: &Spd, h: usize) -> Matrix {
    let n = spd.n();
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let d = spd.get(i, j);
            if d >= 0 && d as usize <= h {
                m.set(i, j, 1.0);
            }
        }
    }
    m
}

/// Adjacency plus self-loops, shared by every head.
pub fn mask1_modifier(sc: &StructCache, _heads: usize) -> AttnModifier {
    AttnModifier::Mask(vec![spd_mask(&sc.spd, 1)])
}

/// Head `h` sees pairs within `(h mod n_hops) + 1` hops.
pub fn maskn_modifier(sc: &StructCache, heads: usize, n_hops: usize) -> Result<AttnModifier> {
    Ok(AttnModifier::Mask(maskn_masks(&sc.spd, heads, n_hops)?))
}

pub fn maskn_masks(spd: &Spd, heads: usize, n_hops: usize) -> Result<Vec<Matrix>> {
    if n_hops == 0 {
        return Err(ModelError::Config("mask-n needs at least one hop".into()));
    }
    Ok((0..heads).map(|h| spd_mask(spd, h % n_hops + 1)).collect())
}

/// Bucket of a distance in the spatial-bias table.
pub fn spd_bucket(d: i64, max_spd: usize) -> usize {
    if d == UNREACHABLE {
        max_spd + 1
    } else {
        (d as usize).min(max_spd)
    }
}

/// Flat indices into a `(max_spd + 2) × heads` table giving each head's
/// `total × total` bias. Padding entries use the unreachable bucket.
pub fn spd_gather_index(spd: &Spd, max_spd: usize, heads: usize, total: usize) -> Vec<Rc<[usize]>> {
    let valid = spd.n();
    (0..heads)
        .map(|h| {
            let mut idx = Vec::with_capacity(total * total);
            for i in 0..total {
                for j in 0..total {
                    let b = if i < valid && j < valid {
                        spd_bucket(spd.get(i, j), max_spd)
                    } else {
                        max_spd + 1
                    };
                    idx.push(b * heads + h);
                }
            }
            idx.into()
        })
        .collect()
}

/// `B^s_ij = b[bucket(spd_ij)]` per head; `table` is `(max_spd + 2) × heads`.
pub fn spatial_bias(sc: &StructCache, table: &Matrix) -> Result<AttnModifier> {
    let max_spd = table.rows().checked_sub(2).filter(|&m| m >= 1).ok_or_else(|| {
        ModelError::Shape("spatial bias table needs max_spd + 2 >= 3 rows".into())
    })?;
    let n = sc.spd.n();
    let heads = table.cols();
    let mut out = vec![Matrix::zeros(n, n); heads];
    for i in 0..n {
        for j in 0..n {
            let b = spd_bucket(sc.spd.get(i, j), max_spd);
            for (h, m) in out.iter_mut().enumerate() {
                m.set(i, j, table.get(b, h));
            }
        }
    }
    Ok(AttnModifier::AdditiveBias(out))
}

/// `Φ_m` for `m = 0..views`: powers of the normalised adjacency, `Φ_0 = I`.
///
/// The default normalisation is by row (random-walk transition matrix);
/// `symmetric` uses `D^{-1/2} A D^{-1/2}` instead. Rows of isolated nodes
/// are zero.
pub fn pma_views(g: &Graph, views: usize, symmetric: bool) -> Result<Vec<Matrix>> {
    let n = g.num_nodes();
    let deg: Vec<f64> = (0..n).map(|i| g.out_neighbors(i).len() as f64).collect();
    let mut t = Matrix::zeros(n, n);
    for i in 0..n {
        for &j in g.out_neighbors(i) {
            let w = if symmetric {
                1.0 / (deg[i] * deg[j]).sqrt()
            } else {
                1.0 / deg[i]
            };
            t.set(i, j, w);
        }
    }
    let mut out = Vec::with_capacity(views);
    let mut cur = Matrix::identity(n);
    for m in 0..views {
        if m > 0 {
            cur = numkit::matmul(&cur, &t)?;
        }
        out.push(cur.clone());
    }
    Ok(out)
}

/// Views flattened into a `total² × views` matrix (zero rows for padding).
pub fn pma_view_stack(views: &[Matrix], total: usize) -> Matrix {
    let m = views.len();
    let n = views.first().map_or(0, |v| v.rows());
    let mut out = Matrix::zeros(total * total, m);
    for (k, v) in views.iter().enumerate() {
        for i in 0..n {
            for j in 0..n {
                out.set(i * total + j, k, v.get(i, j));
            }
        }
    }
    out
}

/// `bias_ij = Σ_m Φ_m(i, j) · b[m]` per head; `b` is `views × heads`.
pub fn pma_modifier(g: &Graph, b: &Matrix, symmetric: bool) -> Result<AttnModifier> {
    if b.rows() == 0 {
        return Err(ModelError::Config("PMA needs at least one view".into()));
    }
    let views = pma_views(g, b.rows(), symmetric)?;
    let n = g.num_nodes();
    let out = (0..b.cols())
        .map(|h| {
            let mut m = Matrix::zeros(n, n);
            for (k, v) in views.iter().enumerate() {
                let w = b.get(k, h);
                for (o, x) in m.data_mut().iter_mut().zip(v.data()) {
                    *o += w * x;
                }
            }
            m
        })
        .collect();
    Ok(AttnModifier::AdditiveBias(out))
}

fn require_edge_features(g: &Graph, what: &str) -> Result<usize> {
    g.edge_feature_dim().ok_or_else(|| ModelError::Unsupported {
        variant: what.into(),
        reason: "graph has no edge features".into(),
    })
}

/// Row `i·total + j` holds, for the path `e_1..e_N` from `i` to `j`, the
/// block `x_{e_n} / N` at offset `(n - 1)·d_e`. Self pairs, unreachable
/// pairs and padding stay zero.
pub fn path_features(g: &Graph, max_path: usize, total: usize) -> Result<Matrix> {
    let de = require_edge_features(g, "edge-bias")?;
    let n = g.num_nodes();
    let mut s = Matrix::zeros(total * total, max_path * de);
    for i in 0..n {
        for j in 0..n {
            let Some(path) = shortest_path_edges(g, i, j) else { continue };
            if path.len() > max_path {
                return Err(ModelError::Unsupported {
                    variant: "edge-bias".into(),
                    reason: format!("path {i}->{j} has {} edges, limit {max_path}", path.len()),
                });
            }
            let inv = 1.0 / path.len().max(1) as f64;
            let row = s.row_mut(i * total + j);
            for (k, &(a, b)) in path.iter().enumerate() {
                let x = g.edge_feature(a, b).expect("path edges exist");
                for (o, v) in row[k * de..(k + 1) * de].iter_mut().zip(x) {
                    *o = v * inv;
                }
            }
        }
    }
    Ok(s)
}

/// `B^c_ij = (1/N) Σ_n ⟨x_{e_n}, w_n⟩` per head; `w` is `(max_path · d_e) × heads`.
pub fn edge_path_bias(g: &Graph, w: &Matrix, max_path: usize) -> Result<AttnModifier> {
    let n = g.num_nodes();
    let s = path_features(g, max_path, n)?;
    let b = numkit::matmul(&s, w)?;
    let out = (0..w.cols())
        .map(|h| Matrix::from_raw(n, n, b.column(h)))
        .collect();
    Ok(AttnModifier::AdditiveBias(out))
}

/// Row `i·total + j` holds `e_ij` for edges; the diagonal holds the mean of
/// the node's incident edge features (zero when isolated).
pub fn edge_pair_features(g: &Graph, total: usize) -> Result<Matrix> {
    let de = require_edge_features(g, "edge-mask")?;
    let n = g.num_nodes();
    let mut f = Matrix::zeros(total * total, de);
    for i in 0..n {
        let nbrs = g.neighbors_undirected(i);
        let mut selfloop = vec![0.0; de];
        for &j in &nbrs {
            let x = g.edge_feature(i, j).or_else(|| g.edge_feature(j, i)).expect("incident edge");
            for (s, v) in selfloop.iter_mut().zip(x) {
                *s += v / nbrs.len() as f64;
            }
        }
        f.row_mut(i * total + i).copy_from_slice(&selfloop);
        for &j in g.out_neighbors(i) {
            let x = g.edge_feature(i, j).expect("edge has a feature");
            f.row_mut(i * total + j).copy_from_slice(x);
        }
    }
    Ok(f)
}

/// Scores on permitted pairs scaled by `mean_d(e_ij W_E)`; other pairs masked.
pub fn edge_mask_modifier(g: &Graph, sc: &StructCache, w_e: &Matrix) -> Result<AttnModifier> {
    let n = g.num_nodes();
    let f = edge_pair_features(g, n)?;
    let d = w_e.cols();
    let reduce = Matrix::filled(d, 1, 1.0 / d as f64);
    let s = numkit::matmul(&numkit::matmul(&f, w_e)?, &reduce)?;
    Ok(AttnModifier::EdgeScaledMask {
        scale: Matrix::from_raw(n, n, s.into_data()),
        mask: spd_mask(&sc.spd, 1),
    })
}

/// `D^{-1/2}` entries, zero for isolated nodes.
pub fn inv_sqrt_degrees(g: &Graph) -> Vec<f64> {
    (0..g.num_nodes())
        .map(|i| {
            let d = g.out_neighbors(i).len();
            if d == 0 { 0.0 } else { 1.0 / (d as f64).sqrt() }
        })
        .collect()
}

/// Shared-QK attention Hadamard-multiplied by the cached kernel, with the
/// degree-normalised residual.
pub fn kernel_modifier(g: &Graph, sc: &StructCache) -> Result<AttnModifier> {
    let (_, k) = sc.kernel.as_ref().ok_or_else(|| ModelError::Unsupported {
        variant: "kernel".into(),
        reason: "structure cache holds no kernel".into(),
    })?;
    Ok(AttnModifier::KernelHadamard {
        kernel: k.clone(),
        shared_qk: true,
        degree_scale: Some(inv_sqrt_degrees(g)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::txcore::{mhsa_forward, LayerParams, ModelConfig};
    use graphkit::EdgeSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cache(g: &Graph) -> StructCache {
        StructCache::build(g, 3, None).unwrap()
    }

    #[test]
    fn mask1_on_path() {
        let m = mask1_modifier(&cache(&Graph::path(3)), 2);
        let AttnModifier::Mask(ms) = m else { panic!() };
        assert_eq!(ms[0].row(0), &[1.0, 1.0, 0.0]);
        assert_eq!(ms[0].row(1), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn maskn_heads_get_growing_hops() {
        let sc = cache(&Graph::path(4));
        let ms = maskn_masks(&sc.spd, 2, 2).unwrap();
        assert_eq!(ms[0], spd_mask(&sc.spd, 1));
        assert_eq!(ms[1].row(0), &[1.0, 1.0, 1.0, 0.0]);
        let one = maskn_modifier(&sc, 1, 1).unwrap();
        assert_eq!(one, mask1_modifier(&sc, 1));
        let full = maskn_masks(&cache(&Graph::complete(5)).spd, 4, 3).unwrap();
        assert!(full.iter().all(|m| *m == Matrix::ones(5, 5)));
    }

    #[test]
    fn spatial_bias_lookup() {
        let sc = cache(&Graph::path(3));
        let mut table = Matrix::zeros(MAX_SPD + 2, 1);
        table.set(0, 0, 10.0);
        let AttnModifier::AdditiveBias(b) = spatial_bias(&sc, &table).unwrap() else { panic!() };
        assert_eq!(b[0], Matrix::identity(3).scale(10.0));
    }

    #[test]
    fn spatial_bias_unreachable_bucket() {
        let g = Graph::new(3, false, &[(0, 1)], Matrix::ones(3, 1)).unwrap();
        let mut table = Matrix::zeros(4, 1);
        table.set(3, 0, -7.0);
        table.set(1, 0, 2.0);
        let AttnModifier::AdditiveBias(b) = spatial_bias(&cache(&g), &table).unwrap() else { panic!() };
        assert_eq!(b[0].row(0), &[0.0, 2.0, -7.0]);
    }

    #[test]
    fn pma_single_view_is_diagonal() {
        let b = Matrix::from_rows(&[[0.7, -0.2]]).unwrap();
        let AttnModifier::AdditiveBias(ms) = pma_modifier(&Graph::cycle(4), &b, false).unwrap() else {
            panic!()
        };
        assert_eq!(ms[0], Matrix::identity(4).scale(0.7));
        assert_eq!(ms[1], Matrix::identity(4).scale(-0.2));
    }

    #[test]
    fn pma_matches_transition_powers() {
        let g = Graph::path(3);
        let p = Matrix::from_rows(&[[0.0, 1.0, 0.0], [0.5, 0.0, 0.5], [0.0, 1.0, 0.0]]).unwrap();
        let p2 = numkit::matmul(&p, &p).unwrap();
        let b = Matrix::from_rows(&[[1.0], [2.0], [3.0]]).unwrap();
        let AttnModifier::AdditiveBias(ms) = pma_modifier(&g, &b, false).unwrap() else { panic!() };
        let want = Matrix::identity(3).add(&p.scale(2.0)).unwrap().add(&p2.scale(3.0)).unwrap();
        assert!(ms[0].max_abs_diff(&want) < 1e-15);
    }

    fn featured_path() -> Graph {
        let edges = [
            EdgeSpec::with_feature(0, 1, vec![1.0, 2.0]),
            EdgeSpec::with_feature(1, 2, vec![-1.0, 0.5]),
        ];
        Graph::from_edge_specs(3, false, &edges, Matrix::ones(3, 1)).unwrap()
    }

    #[test]
    fn edge_path_bias_examples() {
        let g = featured_path();
        // w_1 = (1, 1), w_2 = (2, -1)
        let w = Matrix::from_raw(4, 1, vec![1.0, 1.0, 2.0, -1.0]);
        let AttnModifier::AdditiveBias(b) = edge_path_bias(&g, &w, 2).unwrap() else { panic!() };
        assert_eq!(b[0].get(0, 1), 3.0);
        assert_eq!(b[0].get(1, 1), 0.0);
        // ((1·1 + 2·1) + (−1·2 + 0.5·−1)) / 2
        assert_eq!(b[0].get(0, 2), (3.0 - 2.5) / 2.0);
        assert!(edge_path_bias(&g, &w.slice_cols(0, 1), 1).is_err());
        assert!(edge_path_bias(&Graph::path(3), &w, 2).is_err());
    }

    #[test]
    fn unit_edge_mask_reduces_to_mask1_scores() {
        let edges: Vec<_> =
            [(0, 1), (1, 2), (2, 3), (0, 3)].iter().map(|&(a, b)| EdgeSpec::with_feature(a, b, vec![1.0; 4])).collect();
        let g = Graph::from_edge_specs(4, false, &edges, Matrix::ones(4, 1)).unwrap();
        let sc = cache(&g);
        let m = edge_mask_modifier(&g, &sc, &Matrix::identity(4)).unwrap();
        let cfg = ModelConfig::custom(1, 4, 4, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = LayerParams::random(&cfg, &mut rng);
        let x = Matrix::from_raw(4, 4, (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let a = mhsa_forward(&x, &p, &cfg, &m).unwrap();
        let b = mhsa_forward(&x, &p, &cfg, &mask1_modifier(&sc, 2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_edge_features_give_uniform_neighbourhood() {
        let edges = [EdgeSpec::with_feature(0, 1, vec![0.0]), EdgeSpec::with_feature(1, 2, vec![0.0])];
        let g = Graph::from_edge_specs(3, false, &edges, Matrix::ones(3, 1)).unwrap();
        let AttnModifier::EdgeScaledMask { scale, .. } =
            edge_mask_modifier(&g, &cache(&g), &Matrix::from_raw(1, 2, vec![3.0, -1.0])).unwrap()
        else {
            panic!()
        };
        assert_eq!(scale, Matrix::zeros(3, 3));
    }

    #[test]
    fn kernel_modifier_needs_cached_kernel() {
        let g = Graph::path(3);
        assert!(kernel_modifier(&g, &cache(&g)).is_err());
        let sc = StructCache::build(&g, 1, Some(KernelKind::Diffusion { beta: 0.3 })).unwrap();
        let AttnModifier::KernelHadamard { shared_qk, degree_scale, .. } = kernel_modifier(&g, &sc).unwrap()
        else {
            panic!()
        };
        assert!(shared_qk);
        assert_eq!(degree_scale.unwrap()[1], 1.0 / 2f64.sqrt());
    }
}
