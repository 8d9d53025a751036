//! Finite-difference gradient checking for whole models.

use numkit::{Matrix, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{GraphTransformer, PreparedGraph};
use crate::params::ParamStore;
use crate::txcore::ForwardCtx;

/// Gradients smaller than this are compared on an absolute scale.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: (String, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub entries: usize,
}

/// `Σ_g ⟨f(g), R_g⟩` with fixed random `R_g`, so every output entry matters.
fn probe_weights(model: &GraphTransformer, graphs: &[PreparedGraph]) -> Result<Vec<Matrix>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37);
    graphs
        .iter()
        .map(|p| {
            let (r, c) = model.predict(p)?.shape();
            Ok(Matrix::from_raw(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()))
        })
        .collect()
}

fn loss_value(store: &ParamStore, model: &GraphTransformer, graphs: &[PreparedGraph], w: &[Matrix]) -> Result<f64> {
    let mut tape = Tape::new();
    let b = store.bind(&mut tape, false);
    let mut total = 0.0;
    for (p, w) in graphs.iter().zip(w) {
        let out = model.forward(&mut tape, &b, p, p.n(), &mut ForwardCtx::eval())?;
        total += tape.value(out).data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(total)
}

/// Compares backprop gradients of every parameter entry with central
/// differences of step `h`, in eval mode.
pub fn gradient_check(model: &GraphTransformer, graphs: &[PreparedGraph], h: f64) -> Result<GradCheck> {
    let w = probe_weights(model, graphs)?;
    let mut tape = Tape::new();
    let b = model.bind(&mut tape, true);
    let mut terms = Vec::new();
    for (p, wm) in graphs.iter().zip(&w) {
        let out = model.forward(&mut tape, &b, p, p.n(), &mut ForwardCtx::eval())?;
        let wc = tape.constant(wm.clone());
        let prod = tape.mul(out, wc)?;
        terms.push(tape.sum(prod));
    }
    let mut loss = terms[0];
    for &t in &terms[1..] {
        loss = tape.add(loss, t)?;
    }
    let grads = tape.backward(loss)?;
    let analytic = b.gradients(model.params(), &grads);

    let mut store = model.params().clone();
    let mut report = GradCheck { max_rel_err: 0.0, worst: (String::new(), 0), analytic: 0.0, numeric: 0.0, entries: 0 };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for k in 0..store.get(id).len() {
            let orig = store.get(id).data()[k];
            store.get_mut(id).data_mut()[k] = orig + h;
            let up = loss_value(&store, model, graphs, &w)?;
            store.get_mut(id).data_mut()[k] = orig - h;
            let down = loss_value(&store, model, graphs, &w)?;
            store.get_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[id.index()].data()[k];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
            report.entries += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = (store.name(id).to_string(), k);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

fn unique_pivot(col: &[f64], tol: f64) -> bool {
    let mut mags: Vec<f64> = col.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    mags.len() < 2 || mags[0] - mags[1] > tol
}

fn separated(values: &[f64], tol: f64) -> bool {
    values.windows(2).all(|w| (w[1] - w[0]).abs() > tol)
}

/// Whether the eigenvector or SVD encoding of `g` is determined up to the
/// node order: simple spectrum and an unambiguous sign pivot per column.
/// Permutation equivariance of those encodings only holds when this is true.
pub fn spectral_pe_is_unique(g: &graphkit::Graph, kind: crate::pe::PeKind, size: usize) -> Result<bool> {
    const TOL: f64 = 1e-6;
    match kind {
        crate::pe::PeKind::Degree => Ok(true),
        crate::pe::PeKind::Eig => {
            let e = numkit::sym_eig(&graphkit::normalized_laplacian(g)?)?;
            Ok(separated(&e.eigenvalues, TOL)
                && (0..e.eigenvalues.len()).all(|c| unique_pivot(&e.eigenvectors.column(c), TOL)))
        }
        crate::pe::PeKind::Svd => {
            let s = numkit::svd(g.adjacency())?;
            let keep = size.min(s.sigma.len());
            let top: Vec<f64> = s.sigma.iter().take(keep + 1).copied().collect();
            Ok(separated(&top, TOL)
                && top[..keep].iter().all(|&v| v > TOL)
                && (0..keep).all(|c| unique_pivot(&s.u.column(c), TOL)))
        }
    }
}
