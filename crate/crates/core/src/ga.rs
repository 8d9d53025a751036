//! GNN layers used alongside the Transformer blocks.

use std::rc::Rc;

use graphkit::Graph;
use numkit::{Matrix, NodeId, Tape};
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::txcore::padded_keep;

pub const DEFAULT_BEFORE_LAYERS: usize = 2;
const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GnnKind {
    Gcn,
    Gin,
    GatLite,
}

impl GnnKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GnnKind::Gcn => "gcn",
            GnnKind::Gin => "gin",
            GnnKind::GatLite => "gat",
        }
    }
}

impl std::str::FromStr for GnnKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcn" => Ok(GnnKind::Gcn),
            "gin" => Ok(GnnKind::Gin),
            "gat" | "gat-lite" => Ok(GnnKind::GatLite),
            _ => Err(ModelError::Config(format!("unknown GNN kind `{s}` (gcn|gin|gat)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GaPattern {
    Before,
    Alternate,
    Parallel,
}

impl GaPattern {
    pub fn as_str(self) -> &'static str {
        match self {
            GaPattern::Before => "before",
            GaPattern::Alternate => "alternate",
            GaPattern::Parallel => "parallel",
        }
    }
}

impl std::str::FromStr for GaPattern {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "before" => Ok(GaPattern::Before),
            "alternate" => Ok(GaPattern::Alternate),
            "parallel" => Ok(GaPattern::Parallel),
            _ => Err(ModelError::Config(format!(
                "unknown GA pattern `{s}` (before|alternate|parallel)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sigma {
    Relu,
    Identity,
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` with `D̃` the degree matrix of `A + I`.
pub fn gcn_adjacency(g: &Graph) -> Matrix {
    let n = g.num_nodes();
    let d: Vec<f64> = (0..n).map(|i| 1.0 / ((g.out_neighbors(i).len() + 1) as f64).sqrt()).collect();
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        a.set(i, i, d[i] * d[i]);
        for &j in g.out_neighbors(i) {
            a.set(i, j, d[i] * d[j]);
        }
    }
    a
}

/// Eager weights for one GNN layer. Unused fields stay empty for a kind.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnParams {
    pub kind: GnnKind,
    /// `W^G` (GCN, GAT) or the first MLP weight (GIN), `d × d`.
    pub w: Matrix,
    /// GIN only.
    pub eps: f64,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
    /// GAT only, `d × 1` each.
    pub att_src: Matrix,
    pub att_dst: Matrix,
}

impl GnnParams {
    pub fn zeros(kind: GnnKind, d: usize) -> Self {
        Self {
            kind,
            w: Matrix::zeros(d, d),
            eps: 0.0,
            b1: Matrix::zeros(1, d),
            w2: Matrix::zeros(d, d),
            b2: Matrix::zeros(1, d),
            att_src: Matrix::zeros(d, 1),
            att_dst: Matrix::zeros(d, 1),
        }
    }

    pub(crate) fn bind_const(&self, tape: &mut Tape) -> GnnNodes {
        GnnNodes {
            kind: self.kind,
            w: tape.constant(self.w.clone()),
            eps: tape.constant(Matrix::from_raw(1, 1, vec![self.eps])),
            b1: tape.constant(self.b1.clone()),
            w2: tape.constant(self.w2.clone()),
            b2: tape.constant(self.b2.clone()),
            att_src: tape.constant(self.att_src.clone()),
            att_dst: tape.constant(self.att_dst.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct GnnNodes {
    pub kind: GnnKind,
    pub w: NodeId,
    pub eps: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
    pub att_src: NodeId,
    pub att_dst: NodeId,
}

/// Graph constants a GNN layer reads, padded to `total` tokens.
#[derive(Debug, Clone)]
pub(crate) struct GnnGraph {
    pub total: usize,
    pub gcn_adj: Matrix,
    pub adj: Matrix,
    pub keep: Rc<[bool]>,
}

impl GnnGraph {
    pub fn new(g: &Graph, total: usize) -> Self {
        let n = g.num_nodes();
        let mut self_adj = g.adjacency().clone();
        for i in 0..n {
            self_adj.set(i, i, 1.0);
        }
        Self {
            total,
            gcn_adj: gcn_adjacency(g).pad_to(total, total),
            adj: g.adjacency().pad_to(total, total),
            keep: padded_keep(Some(self_adj.data()), n, total),
        }
    }
}

/// Constant handles shared by every GNN layer in one forward pass.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GnnConsts {
    pub gcn_adj: NodeId,
    pub adj: NodeId,
    pub ones_col: NodeId,
    pub ones_row: NodeId,
}

impl GnnConsts {
    pub fn new(tape: &mut Tape, gg: &GnnGraph, d: usize) -> Self {
        Self {
            gcn_adj: tape.constant(gg.gcn_adj.clone()),
            adj: tape.constant(gg.adj.clone()),
            ones_col: tape.constant(Matrix::ones(gg.total, 1)),
            ones_row: tape.constant(Matrix::ones(1, d)),
        }
    }
}

fn apply_sigma(tape: &mut Tape, x: NodeId, sigma: Sigma) -> NodeId {
    match sigma {
        Sigma::Relu => tape.relu(x),
        Sigma::Identity => x,
    }
}

pub(crate) fn gnn_tape(
    tape: &mut Tape,
    x: NodeId,
    p: &GnnNodes,
    gg: &GnnGraph,
    c: &GnnConsts,
    sigma: Sigma,
) -> Result<NodeId> {
    Ok(match p.kind {
        GnnKind::Gcn => {
            let ax = tape.matmul(c.gcn_adj, x)?;
            let h = tape.matmul(ax, p.w)?;
            apply_sigma(tape, h, sigma)
        }
        GnnKind::Gin => {
            let eps_col = tape.matmul(c.ones_col, p.eps)?;
            let eps_full = tape.matmul(eps_col, c.ones_row)?;
            let ex = tape.mul(eps_full, x)?;
            let ax = tape.matmul(c.adj, x)?;
            let h = tape.add(x, ex)?;
            let h = tape.add(h, ax)?;
            let h = tape.matmul(h, p.w)?;
            let h = tape.add_row(h, p.b1)?;
            let h = tape.relu(h);
            let h = tape.matmul(h, p.w2)?;
            tape.add_row(h, p.b2)?
        }
        GnnKind::GatLite => {
            let h = tape.matmul(x, p.w)?;
            let s = tape.matmul(h, p.att_src)?;
            let t = tape.matmul(h, p.att_dst)?;
            let e_src = tape.matmul_t(s, false, c.ones_col, true)?;
            let e_dst = tape.matmul_t(c.ones_col, false, t, true)?;
            let e = tape.add(e_src, e_dst)?;
            let pos = tape.relu(e);
            let neg_in = tape.scale(e, -1.0);
            let neg = tape.relu(neg_in);
            let neg = tape.scale(neg, -LEAKY_SLOPE);
            let e = tape.add(pos, neg)?;
            let e = tape.masked_fill(e, gg.keep.clone())?;
            let alpha = tape.softmax(e)?;
            let out = tape.matmul(alpha, h)?;
            apply_sigma(tape, out, sigma)
        }
    })
}

/// One GNN layer on `x` (`n × d`) in eval mode.
pub fn gnn_layer(g: &Graph, x: &Matrix, p: &GnnParams, sigma: Sigma) -> Result<Matrix> {
    let n = g.num_nodes();
    let d = x.cols();
    if x.rows() != n || p.w.shape() != (d, d) {
        return Err(ModelError::Shape(format!(
            "gnn input {:?} with weight {:?} on {n} nodes",
            x.shape(),
            p.w.shape()
        )));
    }
    let mut tape = Tape::new();
    let xn = tape.constant(x.clone());
    let nodes = p.bind_const(&mut tape);
    let gg = GnnGraph::new(g, n);
    let c = GnnConsts::new(&mut tape, &gg, d);
    let out = gnn_tape(&mut tape, xn, &nodes, &gg, &c, sigma)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_raw(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn isolated_node_identity() {
        let g = Graph::edgeless(1);
        let x = Matrix::from_raw(1, 3, vec![0.5, -2.0, 1.0]);
        let mut p = GnnParams::zeros(GnnKind::Gcn, 3);
        p.w = Matrix::identity(3);
        assert_eq!(gnn_layer(&g, &x, &p, Sigma::Identity).unwrap(), x);
        p.kind = GnnKind::GatLite;
        assert_eq!(gnn_layer(&g, &x, &p, Sigma::Identity).unwrap(), x);
    }

    #[test]
    fn zero_weights_give_sigma_of_zero() {
        let g = Graph::cycle(5);
        let x = rand_matrix(&mut ChaCha8Rng::seed_from_u64(1), 5, 4);
        for kind in [GnnKind::Gcn, GnnKind::Gin, GnnKind::GatLite] {
            let out = gnn_layer(&g, &x, &GnnParams::zeros(kind, 4), Sigma::Relu).unwrap();
            assert_eq!(out, Matrix::zeros(5, 4), "{kind:?}");
        }
    }

    #[test]
    fn gcn_matches_dense_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = Graph::new(6, false, &[(0, 1), (1, 2), (2, 0), (3, 4), (1, 5)], Matrix::ones(6, 1)).unwrap();
        let x = rand_matrix(&mut rng, 6, 3);
        let mut p = GnnParams::zeros(GnnKind::Gcn, 3);
        p.w = rand_matrix(&mut rng, 3, 3);
        let deg = [2.0, 3.0, 2.0, 1.0, 1.0, 1.0];
        let mut want = Matrix::zeros(6, 3);
        for i in 0..6 {
            for j in 0..6 {
                let a = if i == j || g.has_edge(i, j) { 1.0 / f64::sqrt((deg[i] + 1.0) * (deg[j] + 1.0)) } else { 0.0 };
                for c in 0..3 {
                    let mut xw = 0.0;
                    for k in 0..3 {
                        xw += x.get(j, k) * p.w.get(k, c);
                    }
                    want[(i, c)] += a * xw;
                }
            }
        }
        let want = want.map(|v| v.max(0.0));
        let got = gnn_layer(&g, &x, &p, Sigma::Relu).unwrap();
        assert!(got.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn gcn_on_regular_graph_averages_neighbourhood() {
        let g = Graph::cycle(6);
        let x = rand_matrix(&mut ChaCha8Rng::seed_from_u64(3), 6, 2);
        let mut p = GnnParams::zeros(GnnKind::Gcn, 2);
        p.w = Matrix::identity(2);
        let out = gnn_layer(&g, &x, &p, Sigma::Identity).unwrap();
        for i in 0..6 {
            for c in 0..2 {
                let s = x.get(i, c) + x.get((i + 1) % 6, c) + x.get((i + 5) % 6, c);
                assert!((out.get(i, c) - s / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gin_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = Graph::path(3);
        let x = rand_matrix(&mut rng, 3, 2);
        let mut p = GnnParams::zeros(GnnKind::Gin, 2);
        p.w = Matrix::identity(2);
        p.w2 = Matrix::identity(2);
        p.eps = 0.5;
        let got = gnn_layer(&g, &x, &p, Sigma::Relu).unwrap();
        for c in 0..2 {
            let h1 = 1.5 * x.get(1, c) + x.get(0, c) + x.get(2, c);
            assert!((got.get(1, c) - h1.max(0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn gat_weights_are_a_neighbourhood_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = Graph::path(4);
        let x = rand_matrix(&mut rng, 4, 3);
        let mut p = GnnParams::zeros(GnnKind::GatLite, 3);
        p.w = Matrix::identity(3);
        p.att_src = rand_matrix(&mut rng, 3, 1);
        p.att_dst = rand_matrix(&mut rng, 3, 1);
        let got = gnn_layer(&g, &x, &p, Sigma::Identity).unwrap();
        let score = |i: usize, j: usize| {
            let mut e = 0.0;
            for k in 0..3 {
                e += x.get(i, k) * p.att_src.get(k, 0) + x.get(j, k) * p.att_dst.get(k, 0);
            }
            if e > 0.0 { e } else { LEAKY_SLOPE * e }
        };
        // node 0 sees {0, 1}
        let (e0, e1) = (score(0, 0).exp(), score(0, 1).exp());
        for c in 0..3 {
            let want = (e0 * x.get(0, c) + e1 * x.get(1, c)) / (e0 + e1);
            assert!((got.get(0, c) - want).abs() < 1e-12);
        }
    }
}
