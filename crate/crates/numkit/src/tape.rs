//! Matrix-valued reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every primitive applied during a forward pass, in
//! order. Each node stores its value and whatever the backward rule needs.
//! [`Tape::backward`] walks the nodes once in reverse, so inputs always
//! precede the entries that consume them.
//!
//! Leaves created with [`Tape::leaf`] receive gradients; [`Tape::constant`]
//! nodes and everything computed only from constants are skipped.

use std::rc::Rc;

use crate::error::{NumError, Result};
use crate::matrix::Matrix;
use crate::ops::{self, gemm_acc, product_shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    MatMul { a: NodeId, b: NodeId, ta: bool, tb: bool },
    Add(NodeId, NodeId),
    AddRow { a: NodeId, row: NodeId },
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Softmax(NodeId),
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, xhat: Matrix, inv_std: Vec<f64> },
    Relu(NodeId),
    Gelu(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SliceCols { a: NodeId, start: usize },
    ConcatCols(Vec<NodeId>),
    MaskedFill { a: NodeId, keep: Rc<[bool]> },
    Transpose(NodeId),
    Reshape(NodeId),
    Gather { src: NodeId, idx: Rc<[usize]> },
    Mae { pred: NodeId, target: Rc<Matrix>, weight: Rc<[f64]> },
    BceLogits { pred: NodeId, target: Rc<Matrix>, weight: Rc<[f64]> },
    CrossEntropy { logits: NodeId, classes: Rc<[usize]>, weight: Rc<[f64]> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar seed with respect to every node that needed one.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Matrix> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

fn mismatch(op: &'static str, a: &Matrix, b: &Matrix) -> NumError {
    NumError::DimMismatch { op, lhs: a.shape(), rhs: b.shape() }
}

fn weight_total(weight: &[f64], expected: usize) -> Result<f64> {
    if weight.len() != expected {
        return Err(NumError::Invalid(format!(
            "loss weight length {} does not match {expected} elements",
            weight.len()
        )));
    }
    let total: f64 = weight.iter().sum();
    if total <= 0.0 {
        return Err(NumError::Invalid("loss over an empty (fully padded) selection".into()));
    }
    Ok(total)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn needs_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn ng(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|i| self.nodes[i.0].needs_grad)
    }

    /// A differentiable input (parameter).
    pub fn leaf(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Constant, false)
    }

    pub fn matmul_t(&mut self, a: NodeId, ta: bool, b: NodeId, tb: bool) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, n) = product_shape(av, ta, bv, tb)?;
        let mut c = Matrix::zeros(m, n);
        gemm_acc(av, ta, bv, tb, &mut c);
        let ng = self.ng(&[a, b]);
        Ok(self.push(c, Op::MatMul { a, b, ta, tb }, ng))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.matmul_t(a, false, b, false)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), ng))
    }

    /// `a + 1·row`, broadcasting a `1 × d` row over every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(mismatch("add_row", av, rv));
        }
        let mut v = av.clone();
        for r in 0..v.rows() {
            for (x, b) in v.row_mut(r).iter_mut().zip(rv.data()) {
                *x += b;
            }
        }
        let ng = self.ng(&[a, row]);
        Ok(self.push(v, Op::AddRow { a, row }, ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).hadamard(self.value(b))?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a).scale(s);
        let ng = self.ng(&[a]);
        self.push(v, Op::Scale(a, s), ng)
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let v = ops::row_softmax(self.value(a))?;
        let ng = self.ng(&[a]);
        Ok(self.push(v, Op::Softmax(a), ng))
    }

    /// Row layer norm; `gain` and `bias` are `1 × d` nodes.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        if gv.shape() != (1, xv.cols()) || bv.shape() != (1, xv.cols()) {
            return Err(mismatch("layer_norm", xv, gv));
        }
        let (xhat, inv_std) = ops::layer_norm_parts(xv, eps);
        let mut out = xhat.clone();
        for r in 0..out.rows() {
            for ((o, g), b) in out.row_mut(r).iter_mut().zip(gv.data()).zip(bv.data()) {
                *o = *o * g + b;
            }
        }
        let ng = self.ng(&[x, gain, bias]);
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, xhat, inv_std }, ng))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = ops::relu(self.value(a));
        let ng = self.ng(&[a]);
        self.push(v, Op::Relu(a), ng)
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = ops::gelu(self.value(a));
        let ng = self.ng(&[a]);
        self.push(v, Op::Gelu(a), ng)
    }

    /// Sum of all entries, as a `1 × 1` node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Matrix::from_raw(1, 1, vec![self.value(a).sum()]);
        let ng = self.ng(&[a]);
        self.push(v, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let v = Matrix::from_raw(1, 1, vec![av.sum() / av.len().max(1) as f64]);
        let ng = self.ng(&[a]);
        self.push(v, Op::Mean(a), ng)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let av = self.value(a);
        if start + len > av.cols() {
            return Err(NumError::Invalid(format!(
                "column slice {start}..{} exceeds {} columns",
                start + len,
                av.cols()
            )));
        }
        let v = av.slice_cols(start, len);
        let ng = self.ng(&[a]);
        Ok(self.push(v, Op::SliceCols { a, start }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let vals: Vec<&Matrix> = parts.iter().map(|p| self.value(*p)).collect();
        let v = Matrix::hconcat(&vals)?;
        let ng = self.ng(parts);
        Ok(self.push(v, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Entries where `keep` is false become `-inf`; their gradient is zero.
    pub fn masked_fill(&mut self, a: NodeId, keep: Rc<[bool]>) -> Result<NodeId> {
        let av = self.value(a);
        if keep.len() != av.len() {
            return Err(NumError::Invalid(format!(
                "mask of length {} for a {:?} matrix",
                keep.len(),
                av.shape()
            )));
        }
        let mut v = av.clone();
        for (x, k) in v.data_mut().iter_mut().zip(keep.iter()) {
            if !k {
                *x = f64::NEG_INFINITY;
            }
        }
        let ng = self.ng(&[a]);
        Ok(self.push(v, Op::MaskedFill { a, keep }, ng))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        let ng = self.ng(&[a]);
        self.push(v, Op::Transpose(a), ng)
    }

    /// Same row-major data viewed with a new shape.
    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        let av = self.value(a);
        if rows * cols != av.len() {
            return Err(NumError::BadLength { rows, cols, len: av.len() });
        }
        let v = Matrix::from_raw(rows, cols, av.data().to_vec());
        let ng = self.ng(&[a]);
        Ok(self.push(v, Op::Reshape(a), ng))
    }

    /// `out.data[t] = src.data[idx[t]]`, shaped `rows × cols`.
    pub fn gather(&mut self, src: NodeId, idx: Rc<[usize]>, rows: usize, cols: usize) -> Result<NodeId> {
        let sv = self.value(src);
        if idx.len() != rows * cols {
            return Err(NumError::BadLength { rows, cols, len: idx.len() });
        }
        if let Some(bad) = idx.iter().find(|&&i| i >= sv.len()) {
            return Err(NumError::Invalid(format!("gather index {bad} out of {}", sv.len())));
        }
        let data = idx.iter().map(|&i| sv.data()[i]).collect();
        let ng = self.ng(&[src]);
        Ok(self.push(Matrix::from_raw(rows, cols, data), Op::Gather { src, idx }, ng))
    }

    /// Weighted mean absolute error; `weight` is per element (0 excludes).
    pub fn mae_loss(&mut self, pred: NodeId, target: Rc<Matrix>, weight: Rc<[f64]>) -> Result<NodeId> {
        let pv = self.value(pred);
        if pv.shape() != target.shape() {
            return Err(mismatch("mae_loss", pv, &target));
        }
        let total = weight_total(&weight, pv.len())?;
        let s: f64 = pv
            .data()
            .iter()
            .zip(target.data())
            .zip(weight.iter())
            .map(|((p, t), w)| w * (p - t).abs())
            .sum();
        let ng = self.ng(&[pred]);
        Ok(self.push(Matrix::from_raw(1, 1, vec![s / total]), Op::Mae { pred, target, weight }, ng))
    }

    /// Weighted binary cross-entropy on logits.
    pub fn bce_with_logits_loss(
        &mut self,
        pred: NodeId,
        target: Rc<Matrix>,
        weight: Rc<[f64]>,
    ) -> Result<NodeId> {
        let pv = self.value(pred);
        if pv.shape() != target.shape() {
            return Err(mismatch("bce_with_logits_loss", pv, &target));
        }
        let total = weight_total(&weight, pv.len())?;
        let s: f64 = pv
            .data()
            .iter()
            .zip(target.data())
            .zip(weight.iter())
            .map(|((&z, &y), w)| w * (z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()))
            .sum();
        let ng = self.ng(&[pred]);
        Ok(self.push(
            Matrix::from_raw(1, 1, vec![s / total]),
            Op::BceLogits { pred, target, weight },
            ng,
        ))
    }

    /// Weighted softmax cross-entropy; one class index and one weight per row.
    pub fn cross_entropy_loss(
        &mut self,
        logits: NodeId,
        classes: Rc<[usize]>,
        weight: Rc<[f64]>,
    ) -> Result<NodeId> {
        let lv = self.value(logits);
        if classes.len() != lv.rows() {
            return Err(NumError::Invalid(format!(
                "{} class labels for {} rows",
                classes.len(),
                lv.rows()
            )));
        }
        if let Some(c) = classes.iter().find(|&&c| c >= lv.cols()) {
            return Err(NumError::Invalid(format!("class {c} out of {} logits", lv.cols())));
        }
        let total = weight_total(&weight, lv.rows())?;
        let mut s = 0.0;
        for r in 0..lv.rows() {
            let row = lv.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            s += weight[r] * (lse - row[classes[r]]);
        }
        let ng = self.ng(&[logits]);
        Ok(self.push(
            Matrix::from_raw(1, 1, vec![s / total]),
            Op::CrossEntropy { logits, classes, weight },
            ng,
        ))
    }

    /// Reverse pass from a `1 × 1` seed.
    pub fn backward(&self, seed: NodeId) -> Result<Gradients> {
        let sv = self.value(seed);
        if sv.shape() != (1, 1) {
            return Err(NumError::NonScalarSeed { rows: sv.rows(), cols: sv.cols() });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[seed.0] = Some(Matrix::ones(1, 1));
        for i in (0..=seed.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], id: NodeId, delta: Matrix) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn backprop_node(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul { a, b, ta, tb } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs_grad(*a) {
                    let mut da = Matrix::zeros(av.rows(), av.cols());
                    match (ta, tb) {
                        (false, false) => gemm_acc(g, false, bv, true, &mut da),
                        (false, true) => gemm_acc(g, false, bv, false, &mut da),
                        (true, false) => gemm_acc(bv, false, g, true, &mut da),
                        (true, true) => gemm_acc(bv, true, g, true, &mut da),
                    }
                    self.accumulate(grads, *a, da);
                }
                if self.needs_grad(*b) {
                    let mut db = Matrix::zeros(bv.rows(), bv.cols());
                    match (ta, tb) {
                        (false, false) => gemm_acc(av, true, g, false, &mut db),
                        (true, false) => gemm_acc(av, false, g, false, &mut db),
                        (false, true) => gemm_acc(g, true, av, false, &mut db),
                        (true, true) => gemm_acc(g, true, av, true, &mut db),
                    }
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddRow { a, row } => {
                self.accumulate(grads, *a, g.clone());
                if self.needs_grad(*row) {
                    let mut dr = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, v) in dr.data_mut().iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    self.accumulate(grads, *row, dr);
                }
            }
            Op::Mul(a, b) => {
                if self.needs_grad(*a) {
                    self.accumulate(grads, *a, g.hadamard(self.value(*b)).expect("shape"));
                }
                if self.needs_grad(*b) {
                    self.accumulate(grads, *b, g.hadamard(self.value(*a)).expect("shape"));
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.scale(*s)),
            Op::Softmax(a) => {
                let y = &node.value;
                let mut dx = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((d, yv), gv) in dx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *d = yv * (gv - dot);
                    }
                }
                self.accumulate(grads, *a, dx);
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let gv = self.value(*gain);
                let d = xhat.cols();
                if self.needs_grad(*gain) || self.needs_grad(*bias) {
                    let mut dg = Matrix::zeros(1, d);
                    let mut db = Matrix::zeros(1, d);
                    for r in 0..xhat.rows() {
                        for c in 0..d {
                            dg.data_mut()[c] += g.get(r, c) * xhat.get(r, c);
                            db.data_mut()[c] += g.get(r, c);
                        }
                    }
                    self.accumulate(grads, *gain, dg);
                    self.accumulate(grads, *bias, db);
                }
                if self.needs_grad(*x) {
                    let mut dx = Matrix::zeros(xhat.rows(), d);
                    let df = d as f64;
                    for r in 0..xhat.rows() {
                        let xr = xhat.row(r);
                        let dxhat: Vec<f64> =
                            g.row(r).iter().zip(gv.data()).map(|(a, b)| a * b).collect();
                        let m1 = dxhat.iter().sum::<f64>() / df;
                        let m2 = dxhat.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / df;
                        for ((o, dh), xh) in dx.row_mut(r).iter_mut().zip(&dxhat).zip(xr) {
                            *o = inv_std[r] * (dh - m1 - xh * m2);
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::Relu(a) => {
                let dx = g.zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 });
                self.accumulate(grads, *a, dx.expect("shape"));
            }
            Op::Gelu(a) => {
                let dx = g.zip_map(self.value(*a), |gv, x| gv * ops::gelu_grad_scalar(x));
                self.accumulate(grads, *a, dx.expect("shape"));
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                self.accumulate(grads, *a, Matrix::filled(r, c, g.get(0, 0)));
            }
            Op::Mean(a) => {
                let av = self.value(*a);
                let v = g.get(0, 0) / av.len().max(1) as f64;
                self.accumulate(grads, *a, Matrix::filled(av.rows(), av.cols(), v));
            }
            Op::SliceCols { a, start } => {
                let av = self.value(*a);
                let mut dx = Matrix::zeros(av.rows(), av.cols());
                for r in 0..g.rows() {
                    dx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                self.accumulate(grads, *a, dx);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.needs_grad(*p) {
                        self.accumulate(grads, *p, g.slice_cols(off, w));
                    }
                    off += w;
                }
            }
            Op::MaskedFill { a, keep } => {
                let mut dx = g.clone();
                for (d, k) in dx.data_mut().iter_mut().zip(keep.iter()) {
                    if !k {
                        *d = 0.0;
                    }
                }
                self.accumulate(grads, *a, dx);
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()),
            Op::Reshape(a) => {
                let (r, c) = self.value(*a).shape();
                self.accumulate(grads, *a, Matrix::from_raw(r, c, g.data().to_vec()));
            }
            Op::Gather { src, idx } => {
                let sv = self.value(*src);
                let mut ds = Matrix::zeros(sv.rows(), sv.cols());
                for (t, &i) in idx.iter().enumerate() {
                    ds.data_mut()[i] += g.data()[t];
                }
                self.accumulate(grads, *src, ds);
            }
            Op::Mae { pred, target, weight } => {
                let pv = self.value(*pred);
                let total: f64 = weight.iter().sum();
                let s = g.get(0, 0) / total;
                let data = pv
                    .data()
                    .iter()
                    .zip(target.data())
                    .zip(weight.iter())
                    .map(|((p, t), w)| {
                        let diff = p - t;
                        let sign = if diff > 0.0 {
                            1.0
                        } else if diff < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        s * w * sign
                    })
                    .collect();
                self.accumulate(grads, *pred, Matrix::from_raw(pv.rows(), pv.cols(), data));
            }
            Op::BceLogits { pred, target, weight } => {
                let pv = self.value(*pred);
                let total: f64 = weight.iter().sum();
                let s = g.get(0, 0) / total;
                let data = pv
                    .data()
                    .iter()
                    .zip(target.data())
                    .zip(weight.iter())
                    .map(|((&z, &y), w)| s * w * (1.0 / (1.0 + (-z).exp()) - y))
                    .collect();
                self.accumulate(grads, *pred, Matrix::from_raw(pv.rows(), pv.cols(), data));
            }
            Op::CrossEntropy { logits, classes, weight } => {
                let lv = self.value(*logits);
                let total: f64 = weight.iter().sum();
                let s = g.get(0, 0) / total;
                let mut probs = ops::row_softmax(lv).expect("finite logits");
                for r in 0..lv.rows() {
                    let row = probs.row_mut(r);
                    row[classes[r]] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= s * weight[r]);
                }
                self.accumulate(grads, *logits, probs);
            }
        }
    }
}
