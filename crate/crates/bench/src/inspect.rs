//! CSV dumps of positional encodings and attention structure.

use std::fmt::Write;
use std::str::FromStr;

use graphkit::{Dataset, Graph, KernelKind};
use graphtx::at::{pma_views, spd_mask, DEFAULT_DIFFUSION_BETA, DEFAULT_MASK_HOPS, PMA_VIEWS};
use graphtx::pe::{degree_indices, laplacian_pe, svd_pe_matrix, PeKind, MAX_DEGREE};
use numkit::Matrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{BenchError, Result};

/// Attention structures `inspect` can print.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtView {
    Mask1,
    MaskN,
    Spb,
    Pma,
    Kernel,
}

impl FromStr for AtView {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "mask-1" => AtView::Mask1,
            "mask-n" => AtView::MaskN,
            "spb" => AtView::Spb,
            "pma" => AtView::Pma,
            "kernel" => AtView::Kernel,
            _ => return Err(BenchError::config("at", format!("unknown view `{s}` (mask-1|mask-n|spb|pma|kernel)"))),
        })
    }
}

fn push_rows(out: &mut String, graph: usize, view: &str, m: &Matrix) {
    for r in 0..m.rows() {
        write!(out, "{graph},{view},{r}").unwrap();
        for v in m.row(r) {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
}

fn header(first: &str, width: usize) -> String {
    let cols: Vec<String> = (0..width).map(|c| format!("c{c}")).collect();
    format!("graph,{first},row,{}\n", cols.join(","))
}

/// Positional encoding of every graph. Degree encodings print the degree
/// table rows each node reads.
pub fn encode(data: &Dataset, kind: PeKind, size: usize) -> Result<String> {
    let width = match kind {
        PeKind::Degree => 2,
        _ => kind.raw_width(size),
    };
    let mut out = header("kind", width);
    for (gi, g) in data.graphs.iter().enumerate() {
        let m = match kind {
            PeKind::Degree => {
                let (a, b) = degree_indices(g, MAX_DEGREE);
                let b = b.unwrap_or_else(|| a.clone());
                let n = g.num_nodes();
                Matrix::from_raw(n, 2, (0..n).flat_map(|i| [a[i] as f64, b[i] as f64]).collect())
            }
            PeKind::Eig => {
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                laplacian_pe(g, size, &mut rng, false)?
            }
            PeKind::Svd => svd_pe_matrix(g.adjacency(), size)?,
        };
        push_rows(&mut out, gi, kind.as_str(), &m);
    }
    Ok(out)
}

fn views(g: &Graph, view: AtView) -> Result<Vec<(String, Matrix)>> {
    let spd = graphkit::spd_matrix(g);
    Ok(match view {
        AtView::Mask1 => vec![("mask1".into(), spd_mask(&spd, 1))],
        AtView::MaskN => (1..=DEFAULT_MASK_HOPS).map(|h| (format!("hop{h}"), spd_mask(&spd, h))).collect(),
        AtView::Spb => vec![("spd".into(), spd.to_matrix())],
        AtView::Pma => pma_views(g, PMA_VIEWS, false)?
            .into_iter()
            .enumerate()
            .map(|(k, m)| (format!("view{k}"), m))
            .collect(),
        AtView::Kernel => {
            vec![("diffusion".into(), graphkit::graph_kernel(g, KernelKind::Diffusion { beta: DEFAULT_DIFFUSION_BETA })?)]
        }
    })
}

/// Attention structure of every graph, one matrix row per CSV line.
pub fn inspect(data: &Dataset, view: AtView) -> Result<String> {
    let width = data.graphs.iter().map(|g| g.num_nodes()).max().unwrap_or(0);
    let mut out = header("view", width);
    for (gi, g) in data.graphs.iter().enumerate() {
        for (name, m) in views(g, view)? {
            push_rows(&mut out, gi, &name, &m);
        }
    }
    Ok(out)
}
