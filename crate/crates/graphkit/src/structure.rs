//! Structural quantities derived from a graph's adjacency.

use std::collections::VecDeque;

use numkit::{sym_eig, EigResult, Matrix};

use crate::error::{GraphError, Result};
use crate::graph::Graph;

/// Marker for unreachable pairs in [`Spd`].
pub const UNREACHABLE: i64 = -1;

/// Integer shortest-path-distance matrix, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Spd {
    n: usize,
    data: Vec<i64>,
}

impl Spd {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> i64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[i64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_raw(self.n, self.n, self.data.iter().map(|&v| v as f64).collect())
    }
}

/// `(indegree, outdegree)`.
pub fn degrees(g: &Graph) -> (Vec<usize>, Vec<usize>) {
    let n = g.num_nodes();
    let indeg = (0..n).map(|i| g.in_neighbors(i).len()).collect();
    let outdeg = (0..n).map(|i| g.out_neighbors(i).len()).collect();
    (indeg, outdeg)
}

/// `I − D^{-1/2} A D^{-1/2}`; isolated nodes keep a unit diagonal.
pub fn normalized_laplacian(g: &Graph) -> Result<Matrix> {
    if g.is_directed() {
        return Err(GraphError::DirectedUnsupported);
    }
    let n = g.num_nodes();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d = g.out_neighbors(i).len();
            if d == 0 { 0.0 } else { 1.0 / (d as f64).sqrt() }
        })
        .collect();
    let mut l = Matrix::identity(n);
    for i in 0..n {
        for &j in g.out_neighbors(i) {
            l.set(i, j, -inv_sqrt[i] * inv_sqrt[j]);
        }
    }
    Ok(l)
}

fn bfs_from(g: &Graph, src: usize, out: &mut [i64]) {
    out.fill(UNREACHABLE);
    out[src] = 0;
    let mut queue = VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        for &w in g.out_neighbors(u) {
            if out[w] == UNREACHABLE {
                out[w] = out[u] + 1;
                queue.push_back(w);
            }
        }
    }
}

/// Hop distances along edge direction; `-1` when unreachable.
pub fn spd_matrix(g: &Graph) -> Spd {
    let n = g.num_nodes();
    let mut data = vec![0; n * n];
    for (i, row) in data.chunks_mut(n.max(1)).enumerate().take(n) {
        bfs_from(g, i, row);
    }
    Spd { n, data }
}

fn mask_from_spd(spd: &Spd, h: usize) -> Matrix {
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

/// 1 where `0 ≤ spd(i, j) ≤ h`.
pub fn hop_mask(g: &Graph, h: usize) -> Result<Matrix> {
    if h == 0 {
        return Err(GraphError::Invalid("hop mask needs h >= 1".into()));
    }
    Ok(mask_from_spd(&spd_matrix(g), h))
}

/// Step size of the p-step random-walk kernel; `γ·λmax ≤ 1` keeps it PSD.
pub const RANDOM_WALK_GAMMA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelKind {
    /// `(I − γL)^p`.
    PStepRandomWalk { p: u32 },
    /// `exp(−βL)`.
    Diffusion { beta: f64 },
}

impl KernelKind {
    fn validate(self) -> Result<()> {
        match self {
            KernelKind::Diffusion { beta } if !(beta >= 0.0 && beta.is_finite()) => {
                Err(GraphError::Invalid(format!("diffusion beta must be >= 0, got {beta}")))
            }
            _ => Ok(()),
        }
    }
}

/// Builds the kernel from an already-computed Laplacian spectrum.
pub fn kernel_from_spectrum(eig: &EigResult, kind: KernelKind) -> Result<Matrix> {
    kind.validate()?;
    Ok(match kind {
        KernelKind::PStepRandomWalk { p } => {
            eig.spectral_map(|l| (1.0 - RANDOM_WALK_GAMMA * l).powi(p as i32))
        }
        KernelKind::Diffusion { beta } => eig.spectral_map(|l| (-beta * l).exp()),
    })
}

pub fn graph_kernel(g: &Graph, kind: KernelKind) -> Result<Matrix> {
    kind.validate()?;
    let lap = normalized_laplacian(g)?;
    if let KernelKind::PStepRandomWalk { p } = kind {
        // Repeated products keep p = 0 exactly the identity.
        let n = g.num_nodes();
        let step = Matrix::identity(n).sub(&lap.scale(RANDOM_WALK_GAMMA))?;
        let mut k = Matrix::identity(n);
        for _ in 0..p {
            k = numkit::matmul(&k, &step)?;
        }
        return Ok(k);
    }
    let eig = sym_eig(&lap)?;
    kernel_from_spectrum(&eig, kind)
}

/// One shortest path from `i` to `j` as consecutive edges.
///
/// BFS expands neighbours in ascending id order and keeps the first parent
/// discovered, so ties resolve toward lower ids. `None` when unreachable.
pub fn shortest_path_edges(g: &Graph, i: usize, j: usize) -> Option<Vec<(usize, usize)>> {
    if i == j {
        return Some(Vec::new());
    }
    let n = g.num_nodes();
    let mut parent = vec![usize::MAX; n];
    parent[i] = i;
    let mut queue = VecDeque::from([i]);
    while let Some(u) = queue.pop_front() {
        if u == j {
            break;
        }
        for &w in g.out_neighbors(u) {
            if parent[w] == usize::MAX {
                parent[w] = u;
                queue.push_back(w);
            }
        }
    }
    if parent[j] == usize::MAX {
        return None;
    }
    let mut path = Vec::new();
    let mut cur = j;
    while cur != i {
        path.push((parent[cur], cur));
        cur = parent[cur];
    }
    path.reverse();
    Some(path)
}

/// Per-graph structure shared by every mechanism that needs it.
#[derive(Debug, Clone)]
pub struct StructCache {
    pub indegree: Vec<usize>,
    pub outdegree: Vec<usize>,
    pub degree_matrix: Matrix,
    /// `None` for directed graphs.
    pub laplacian: Option<Matrix>,
    pub spectrum: Option<EigResult>,
    pub spd: Spd,
    /// `hop_masks[h - 1]` is the mask for `h` hops.
    pub hop_masks: Vec<Matrix>,
    pub kernel: Option<(KernelKind, Matrix)>,
}

impl StructCache {
    pub fn build(g: &Graph, max_hops: usize, kernel: Option<KernelKind>) -> Result<Self> {
        let (indegree, outdegree) = degrees(g);
        let degree_matrix =
            Matrix::diag(&outdegree.iter().map(|&d| d as f64).collect::<Vec<_>>());
        let (laplacian, spectrum) = if g.is_directed() {
            (None, None)
        } else {
            let l = normalized_laplacian(g)?;
            let e = sym_eig(&l)?;
            (Some(l), Some(e))
        };
        let spd = spd_matrix(g);
        let hop_masks = (1..=max_hops).map(|h| mask_from_spd(&spd, h)).collect();
        let kernel = match kernel {
            None => None,
            Some(kind) => {
                let eig = spectrum.as_ref().ok_or(GraphError::DirectedUnsupported)?;
                let k = match kind {
                    KernelKind::PStepRandomWalk { .. } => graph_kernel(g, kind)?,
                    KernelKind::Diffusion { .. } => kernel_from_spectrum(eig, kind)?,
                };
                Some((kind, k))
            }
        };
        Ok(Self { indegree, outdegree, degree_matrix, laplacian, spectrum, spd, hop_masks, kernel })
    }

    pub fn hop_mask(&self, h: usize) -> Option<&Matrix> {
        h.checked_sub(1).and_then(|k| self.hop_masks.get(k))
    }
}
