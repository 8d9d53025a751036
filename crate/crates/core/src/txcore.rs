//! Post-norm Transformer encoder blocks and the attention hook they expose.

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use numkit::{Matrix, NodeId, Tape};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeTag {
    Small,
    Middle,
    Large,
}

impl SizeTag {
    pub const ALL: [SizeTag; 3] = [SizeTag::Small, SizeTag::Middle, SizeTag::Large];

    pub fn as_str(self) -> &'static str {
        match self {
            SizeTag::Small => "small",
            SizeTag::Middle => "middle",
            SizeTag::Large => "large",
        }
    }

    /// `(layers, hidden, ffn_hidden, heads, head_dim)`.
    pub fn dims(self) -> (usize, usize, usize, usize, usize) {
        match self {
            SizeTag::Small => (6, 80, 80, 8, 10),
            SizeTag::Middle => (12, 80, 80, 8, 10),
            SizeTag::Large => (12, 512, 512, 32, 16),
        }
    }
}

impl fmt::Display for SizeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SizeTag {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        SizeTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| ModelError::Config(format!("unknown size `{s}` (small|middle|large)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub ffn_hidden: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub activation: Activation,
    pub attn_dropout: f64,
    pub ffn_dropout: f64,
    /// `None` when the dimensions were set by hand.
    pub size: Option<SizeTag>,
}

impl ModelConfig {
    pub fn from_size(tag: SizeTag) -> Self {
        let (layers, hidden, ffn_hidden, heads, head_dim) = tag.dims();
        Self {
            layers,
            hidden,
            ffn_hidden,
            heads,
            head_dim,
            activation: Activation::Gelu,
            attn_dropout: 0.1,
            ffn_dropout: 0.1,
            size: Some(tag),
        }
    }

    /// Hand-sized configuration; `hidden` must split evenly across heads.
    pub fn custom(layers: usize, hidden: usize, ffn_hidden: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !hidden.is_multiple_of(heads) {
            return Err(ModelError::Config(format!("hidden {hidden} is not divisible by {heads} heads")));
        }
        let cfg = Self {
            layers,
            hidden,
            ffn_hidden,
            heads,
            head_dim: hidden / heads,
            activation: Activation::Gelu,
            attn_dropout: 0.1,
            ffn_dropout: 0.1,
            size: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn without_dropout(mut self) -> Self {
        self.attn_dropout = 0.0;
        self.ffn_dropout = 0.0;
        self
    }

    /// Size label used in results: the tag name, or the dimensions.
    pub fn label(&self) -> String {
        match self.size {
            Some(t) => t.as_str().to_string(),
            None => format!("L{}-d{}-f{}-h{}", self.layers, self.hidden, self.ffn_hidden, self.heads),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.hidden == 0 || self.ffn_hidden == 0 || self.heads == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.heads * self.head_dim != self.hidden {
            return bad(format!(
                "heads ({}) x head_dim ({}) must equal hidden ({})",
                self.heads, self.head_dim, self.hidden
            ));
        }
        for (name, p) in [("attn_dropout", self.attn_dropout), ("ffn_dropout", self.ffn_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1), got {p}"));
            }
        }
        if let Some(tag) = self.size {
            let dims = (self.layers, self.hidden, self.ffn_hidden, self.heads, self.head_dim);
            if dims != tag.dims() {
                return bad(format!("dimensions {dims:?} do not match size `{tag}`"));
            }
        }
        Ok(())
    }
}

/// One encoder block's weights. Vectors are stored as `1 × width` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    pub o: Matrix,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
    pub ln1_gain: Matrix,
    pub ln1_bias: Matrix,
    pub ln2_gain: Matrix,
    pub ln2_bias: Matrix,
}

pub(crate) fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, fan_in: usize) -> Matrix {
    let a = 1.0 / (fan_in.max(1) as f64).sqrt();
    Matrix::from_raw(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect())
}

impl LayerParams {
    /// Uniform `±1/√fan_in` weights and biases, unit gains, zero norm biases.
    pub fn random(cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let (d, f) = (cfg.hidden, cfg.ffn_hidden);
        Self {
            q: uniform(rng, d, d, d),
            k: uniform(rng, d, d, d),
            v: uniform(rng, d, d, d),
            o: uniform(rng, d, d, d),
            w1: uniform(rng, d, f, d),
            b1: uniform(rng, 1, f, d),
            w2: uniform(rng, f, d, f),
            b2: uniform(rng, 1, d, f),
            ln1_gain: Matrix::ones(1, d),
            ln1_bias: Matrix::zeros(1, d),
            ln2_gain: Matrix::ones(1, d),
            ln2_bias: Matrix::zeros(1, d),
        }
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let (d, f) = (cfg.hidden, cfg.ffn_hidden);
        let expect = [
            ("Q", &self.q, (d, d)),
            ("K", &self.k, (d, d)),
            ("V", &self.v, (d, d)),
            ("O", &self.o, (d, d)),
            ("W1", &self.w1, (d, f)),
            ("b1", &self.b1, (1, f)),
            ("W2", &self.w2, (f, d)),
            ("b2", &self.b2, (1, d)),
            ("ln1 gain", &self.ln1_gain, (1, d)),
            ("ln1 bias", &self.ln1_bias, (1, d)),
            ("ln2 gain", &self.ln2_gain, (1, d)),
            ("ln2 bias", &self.ln2_bias, (1, d)),
        ];
        for (name, m, shape) in expect {
            if m.shape() != shape {
                return Err(ModelError::Shape(format!("{name} is {:?}, expected {shape:?}", m.shape())));
            }
        }
        Ok(())
    }

    pub(crate) fn bind_const(&self, tape: &mut Tape) -> LayerNodes {
        let mut c = |m: &Matrix| tape.constant(m.clone());
        LayerNodes {
            q: c(&self.q),
            k: Some(c(&self.k)),
            v: c(&self.v),
            o: c(&self.o),
            w1: c(&self.w1),
            b1: c(&self.b1),
            w2: c(&self.w2),
            b2: c(&self.b2),
            ln1_gain: c(&self.ln1_gain),
            ln1_bias: c(&self.ln1_bias),
            ln2_gain: c(&self.ln2_gain),
            ln2_bias: c(&self.ln2_bias),
        }
    }
}

/// Tape handles for one block's parameters.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerNodes {
    pub q: NodeId,
    /// Absent when queries and keys share one matrix.
    pub k: Option<NodeId>,
    pub v: NodeId,
    pub o: NodeId,
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
    pub ln1_gain: NodeId,
    pub ln1_bias: NodeId,
    pub ln2_gain: NodeId,
    pub ln2_bias: NodeId,
}

/// How a block's attention scores are altered by graph structure.
///
/// Per-head vectors hold either one matrix per head or a single matrix
/// shared by every head.
#[derive(Debug, Clone, PartialEq)]
pub enum AttnModifier {
    None,
    /// 0/1 matrices; zeros become `-inf` before the softmax.
    Mask(Vec<Matrix>),
    /// Added to the scaled scores before the softmax.
    AdditiveBias(Vec<Matrix>),
    /// Scores multiplied entrywise by `kernel`. With `shared_qk` the key
    /// projection is replaced by the query projection. `degree_scale`
    /// holds per-node factors applied to the attention output before the
    /// residual add.
    KernelHadamard { kernel: Matrix, shared_qk: bool, degree_scale: Option<Vec<f64>> },
    /// Scores multiplied by `scale`, then masked by `mask`.
    EdgeScaledMask { scale: Matrix, mask: Matrix },
}

impl AttnModifier {
    pub fn validate(&self, n: usize, heads: usize) -> Result<()> {
        let square = |m: &Matrix| {
            if m.shape() == (n, n) {
                Ok(())
            } else {
                Err(ModelError::Shape(format!("modifier matrix {:?} for {n} tokens", m.shape())))
            }
        };
        let per_head = |ms: &[Matrix]| {
            if ms.len() != 1 && ms.len() != heads {
                return Err(ModelError::Shape(format!("{} matrices for {heads} heads", ms.len())));
            }
            ms.iter().try_for_each(square)
        };
        let mask_rows = |m: &Matrix| {
            for r in 0..n {
                if m.row(r).iter().all(|&v| v == 0.0) {
                    return Err(ModelError::Numeric(numkit::NumError::DegenerateMask { row: r }));
                }
            }
            Ok(())
        };
        match self {
            AttnModifier::None => Ok(()),
            AttnModifier::Mask(ms) => {
                per_head(ms)?;
                ms.iter().try_for_each(mask_rows)
            }
            AttnModifier::AdditiveBias(ms) => per_head(ms),
            AttnModifier::KernelHadamard { kernel, degree_scale, .. } => {
                square(kernel)?;
                match degree_scale {
                    Some(s) if s.len() != n => {
                        Err(ModelError::Shape(format!("{} degree factors for {n} tokens", s.len())))
                    }
                    _ => Ok(()),
                }
            }
            AttnModifier::EdgeScaledMask { scale, mask } => {
                square(scale)?;
                square(mask)?;
                mask_rows(mask)
            }
        }
    }

    /// Lowers the modifier onto a tape for `total` tokens of which the
    /// first `valid` are real.
    pub(crate) fn to_plan(&self, tape: &mut Tape, valid: usize, total: usize) -> AttnPlan {
        let mut plan = AttnPlan::default();
        let pad = |m: &Matrix| m.pad_to(total, total);
        match self {
            AttnModifier::None => {}
            AttnModifier::Mask(ms) => {
                plan.keep = ms.iter().map(|m| padded_keep(Some(m.data()), valid, total)).collect();
            }
            AttnModifier::AdditiveBias(ms) => {
                plan.bias = ms.iter().map(|m| tape.constant(pad(m))).collect();
            }
            AttnModifier::KernelHadamard { kernel, shared_qk, degree_scale } => {
                plan.hadamard = Some(tape.constant(pad(kernel)));
                plan.shared_qk = *shared_qk;
                plan.residual_scale =
                    degree_scale.as_ref().map(|s| tape.constant(Matrix::diag(s).pad_to(total, total)));
            }
            AttnModifier::EdgeScaledMask { scale, mask } => {
                plan.hadamard = Some(tape.constant(pad(scale)));
                plan.keep = vec![padded_keep(Some(mask.data()), valid, total)];
            }
        }
        plan.ensure_padding(valid, total);
        plan
    }
}

/// Keep-mask over `total × total` tokens built from a `valid × valid` 0/1
/// mask. Padding rows see only themselves; real rows never see padding.
pub(crate) fn padded_keep(mask: Option<&[f64]>, valid: usize, total: usize) -> Rc<[bool]> {
    let mut keep = vec![false; total * total];
    for i in 0..total {
        for j in 0..total {
            keep[i * total + j] = if i < valid && j < valid {
                mask.is_none_or(|m| m[i * valid + j] != 0.0)
            } else {
                i == j
            };
        }
    }
    keep.into()
}

/// Attention alterations already lowered to tape nodes.
#[derive(Debug, Clone, Default)]
pub(crate) struct AttnPlan {
    /// Empty, shared (length 1) or per head.
    pub keep: Vec<Rc<[bool]>>,
    /// Same convention as `keep`.
    pub bias: Vec<NodeId>,
    pub hadamard: Option<NodeId>,
    pub shared_qk: bool,
    /// Diagonal matrix left-multiplied onto the projected attention output.
    pub residual_scale: Option<NodeId>,
}

impl AttnPlan {
    fn keep_for(&self, h: usize) -> Option<&Rc<[bool]>> {
        match self.keep.len() {
            0 => None,
            1 => Some(&self.keep[0]),
            _ => Some(&self.keep[h]),
        }
    }

    fn bias_for(&self, h: usize) -> Option<NodeId> {
        match self.bias.len() {
            0 => None,
            1 => Some(self.bias[0]),
            _ => Some(self.bias[h]),
        }
    }

    /// Adds the padding mask when padded tokens are present and no mask exists.
    pub fn ensure_padding(&mut self, valid: usize, total: usize) {
        if total > valid && self.keep.is_empty() {
            self.keep = vec![padded_keep(None, valid, total)];
        }
    }
}

/// Dropout source. Eval mode never touches an rng.
pub enum Dropout<'a> {
    Off,
    On(&'a mut ChaCha8Rng),
}

impl Dropout<'_> {
    pub(crate) fn apply(&mut self, tape: &mut Tape, x: NodeId, rate: f64) -> Result<NodeId> {
        let Dropout::On(rng) = self else { return Ok(x) };
        if rate <= 0.0 {
            return Ok(x);
        }
        let (r, c) = tape.value(x).shape();
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> =
            (0..r * c).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect();
        let m = tape.constant(Matrix::from_raw(r, c, mask));
        Ok(tape.mul(x, m)?)
    }

    pub fn is_training(&self) -> bool {
        matches!(self, Dropout::On(_))
    }
}

/// Mutable state threaded through one forward pass.
pub struct ForwardCtx<'a> {
    pub dropout: Dropout<'a>,
    /// When set, every block's per-head attention weights are appended.
    pub attention_trace: Option<Vec<Vec<Matrix>>>,
}

impl<'a> ForwardCtx<'a> {
    pub fn eval() -> Self {
        Self { dropout: Dropout::Off, attention_trace: None }
    }

    pub fn train(rng: &'a mut ChaCha8Rng) -> Self {
        Self { dropout: Dropout::On(rng), attention_trace: None }
    }

    pub fn with_trace(mut self) -> Self {
        self.attention_trace = Some(Vec::new());
        self
    }
}

/// `M = LN(X̃O + X)` with `X̃` the concatenated per-head attention outputs.
pub(crate) fn mhsa(
    tape: &mut Tape,
    x: NodeId,
    p: &LayerNodes,
    cfg: &ModelConfig,
    plan: &AttnPlan,
    ctx: &mut ForwardCtx<'_>,
) -> Result<NodeId> {
    let xq = tape.matmul(x, p.q)?;
    let xk = if plan.shared_qk {
        xq
    } else {
        let k = p.k.ok_or_else(|| ModelError::Config("key projection missing".into()))?;
        tape.matmul(x, k)?
    };
    let xv = tape.matmul(x, p.v)?;
    let inv_sqrt_d = 1.0 / (cfg.hidden as f64).sqrt();
    let dh = cfg.head_dim;
    let mut outs = Vec::with_capacity(cfg.heads);
    let mut trace = Vec::new();
    for h in 0..cfg.heads {
        let (qh, kh, vh) = if cfg.heads == 1 {
            (xq, xk, xv)
        } else {
            let qh = tape.slice_cols(xq, h * dh, dh)?;
            let kh = if plan.shared_qk { qh } else { tape.slice_cols(xk, h * dh, dh)? };
            (qh, kh, tape.slice_cols(xv, h * dh, dh)?)
        };
        let raw = tape.matmul_t(qh, false, kh, true)?;
        let mut s = tape.scale(raw, inv_sqrt_d);
        if let Some(k) = plan.hadamard {
            s = tape.mul(s, k)?;
        }
        if let Some(b) = plan.bias_for(h) {
            s = tape.add(s, b)?;
        }
        if let Some(keep) = plan.keep_for(h) {
            s = tape.masked_fill(s, keep.clone())?;
        }
        let a = tape.softmax(s)?;
        if ctx.attention_trace.is_some() {
            trace.push(tape.value(a).clone());
        }
        let a = ctx.dropout.apply(tape, a, cfg.attn_dropout)?;
        outs.push(tape.matmul(a, vh)?);
    }
    if let Some(t) = ctx.attention_trace.as_mut() {
        t.push(trace);
    }
    let xt = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    let mut y = tape.matmul(xt, p.o)?;
    if let Some(r) = plan.residual_scale {
        y = tape.matmul(r, y)?;
    }
    let res = tape.add(y, x)?;
    Ok(tape.layer_norm(res, p.ln1_gain, p.ln1_bias, LN_EPS)?)
}

/// `Z = LN(M + σ(M W1 + b1) W2 + b2)`.
pub(crate) fn ffn(
    tape: &mut Tape,
    m: NodeId,
    p: &LayerNodes,
    cfg: &ModelConfig,
    ctx: &mut ForwardCtx<'_>,
) -> Result<NodeId> {
    let h = tape.matmul(m, p.w1)?;
    let h = tape.add_row(h, p.b1)?;
    let h = match cfg.activation {
        Activation::Gelu => tape.gelu(h),
        Activation::Relu => tape.relu(h),
    };
    let h = ctx.dropout.apply(tape, h, cfg.ffn_dropout)?;
    let f = tape.matmul(h, p.w2)?;
    let f = tape.add_row(f, p.b2)?;
    let r = tape.add(m, f)?;
    Ok(tape.layer_norm(r, p.ln2_gain, p.ln2_bias, LN_EPS)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Readout {
    /// One row per real token.
    PerNode,
    /// Mean over real tokens.
    MaskedMean,
    /// The row of one token.
    Target(usize),
}

pub(crate) fn readout(
    tape: &mut Tape,
    z: NodeId,
    how: Readout,
    valid: usize,
    total: usize,
) -> Result<NodeId> {
    let select = match how {
        Readout::PerNode if valid == total => return Ok(z),
        Readout::PerNode => {
            let mut s = Matrix::zeros(valid, total);
            for i in 0..valid {
                s.set(i, i, 1.0);
            }
            s
        }
        Readout::MaskedMean => {
            if valid == 0 {
                return Err(ModelError::Shape("mean readout over zero tokens".into()));
            }
            let w = 1.0 / valid as f64;
            Matrix::from_raw(1, total, (0..total).map(|j| if j < valid { w } else { 0.0 }).collect())
        }
        Readout::Target(t) => {
            if t >= valid {
                return Err(ModelError::Shape(format!("target token {t} of {valid}")));
            }
            let mut s = Matrix::zeros(1, total);
            s.set(0, t, 1.0);
            s
        }
    };
    let s = tape.constant(select);
    Ok(tape.matmul(s, z)?)
}

/// `(1/√d) · XQ (XK)ᵀ` with `d = scale_dim`.
pub fn attention_scores(x: &Matrix, q: &Matrix, k: &Matrix, scale_dim: usize) -> Result<Matrix> {
    let xq = numkit::matmul(x, q)?;
    let xk = numkit::matmul(x, k)?;
    Ok(numkit::matmul_t(&xq, false, &xk, true)?.scale(1.0 / (scale_dim as f64).sqrt()))
}

fn check_tokens(x: &Matrix, cfg: &ModelConfig) -> Result<()> {
    if x.cols() != cfg.hidden {
        return Err(ModelError::Shape(format!("tokens have width {}, model {}", x.cols(), cfg.hidden)));
    }
    Ok(())
}

/// Attention sublayer of one block in eval mode.
pub fn mhsa_forward(x: &Matrix, p: &LayerParams, cfg: &ModelConfig, m: &AttnModifier) -> Result<Matrix> {
    cfg.validate()?;
    p.validate(cfg)?;
    check_tokens(x, cfg)?;
    m.validate(x.rows(), cfg.heads)?;
    let mut tape = Tape::new();
    let xn = tape.constant(x.clone());
    let nodes = p.bind_const(&mut tape);
    let plan = m.to_plan(&mut tape, x.rows(), x.rows());
    let out = mhsa(&mut tape, xn, &nodes, cfg, &plan, &mut ForwardCtx::eval())?;
    Ok(tape.value(out).clone())
}

pub fn ffn_forward(m: &Matrix, p: &LayerParams, cfg: &ModelConfig) -> Result<Matrix> {
    p.validate(cfg)?;
    check_tokens(m, cfg)?;
    let mut tape = Tape::new();
    let mn = tape.constant(m.clone());
    let nodes = p.bind_const(&mut tape);
    let out = ffn(&mut tape, mn, &nodes, cfg, &mut ForwardCtx::eval())?;
    Ok(tape.value(out).clone())
}

/// Stack of blocks in eval mode. Rows at or beyond `valid` are padding.
pub fn model_forward(
    tokens: &Matrix,
    valid: usize,
    layers: &[LayerParams],
    cfg: &ModelConfig,
    mods: &[AttnModifier],
    how: Readout,
) -> Result<Matrix> {
    model_forward_with(tokens, valid, layers, cfg, mods, how, &mut ForwardCtx::eval())
}

/// [`model_forward`] with an explicit context (dropout rng, attention trace).
pub fn model_forward_with(
    tokens: &Matrix,
    valid: usize,
    layers: &[LayerParams],
    cfg: &ModelConfig,
    mods: &[AttnModifier],
    how: Readout,
    ctx: &mut ForwardCtx<'_>,
) -> Result<Matrix> {
    cfg.validate()?;
    check_tokens(tokens, cfg)?;
    if layers.len() != cfg.layers || mods.len() != cfg.layers {
        return Err(ModelError::Config(format!(
            "{} layer params and {} modifiers for {} layers",
            layers.len(),
            mods.len(),
            cfg.layers
        )));
    }
    let total = tokens.rows();
    if valid > total {
        return Err(ModelError::Shape(format!("{valid} valid tokens of {total}")));
    }
    let mut tape = Tape::new();
    let mut x = tape.constant(tokens.clone());
    for (p, m) in layers.iter().zip(mods) {
        p.validate(cfg)?;
        m.validate(valid, cfg.heads)?;
        let nodes = p.bind_const(&mut tape);
        let plan = m.to_plan(&mut tape, valid, total);
        let mid = mhsa(&mut tape, x, &nodes, cfg, &plan, ctx)?;
        x = ffn(&mut tape, mid, &nodes, cfg, ctx)?;
    }
    let out = readout(&mut tape, x, how, valid, total)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_raw(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn size_tags_bind_to_table_rows() {
        let s = ModelConfig::from_size(SizeTag::Small);
        assert_eq!((s.layers, s.hidden, s.ffn_hidden, s.heads, s.head_dim), (6, 80, 80, 8, 10));
        let m = ModelConfig::from_size(SizeTag::Middle);
        assert_eq!((m.layers, m.hidden, m.ffn_hidden, m.heads, m.head_dim), (12, 80, 80, 8, 10));
        let l = ModelConfig::from_size(SizeTag::Large);
        assert_eq!((l.layers, l.hidden, l.ffn_hidden, l.heads, l.head_dim), (12, 512, 512, 32, 16));
        for t in SizeTag::ALL {
            ModelConfig::from_size(t).validate().unwrap();
        }
        let mut broken = ModelConfig::from_size(SizeTag::Small);
        broken.head_dim = 9;
        assert!(broken.validate().is_err());
    }

    #[test]
    fn scores_examples() {
        let i2 = Matrix::identity(2);
        let s = attention_scores(&i2, &i2, &i2, 2).unwrap();
        assert_eq!(s, Matrix::identity(2).scale(1.0 / 2f64.sqrt()));
        let z = attention_scores(&Matrix::zeros(3, 2), &i2, &i2, 2).unwrap();
        assert_eq!(z, Matrix::zeros(3, 3));
    }

    #[test]
    fn scores_match_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (x, q, k) = (rand_matrix(&mut rng, 5, 4), rand_matrix(&mut rng, 4, 4), rand_matrix(&mut rng, 4, 4));
        let s = attention_scores(&x, &q, &k, 4).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let mut want = 0.0;
                for a in 0..4 {
                    for b in 0..4 {
                        for c in 0..4 {
                            want += x.get(i, a) * q.get(a, b) * x.get(j, c) * k.get(c, b);
                        }
                    }
                }
                assert!((s.get(i, j) - want / 2.0).abs() < 1e-12);
            }
        }
    }

    fn ln_rows(x: &Matrix) -> Matrix {
        numkit::layer_norm(x, &vec![1.0; x.cols()], &vec![0.0; x.cols()], LN_EPS).unwrap()
    }

    #[test]
    fn zero_values_collapse_to_layer_norm() {
        let cfg = ModelConfig::custom(1, 4, 6, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = LayerParams::random(&cfg, &mut rng);
        p.v = Matrix::zeros(4, 4);
        let x = rand_matrix(&mut rng, 3, 4);
        let m = mhsa_forward(&x, &p, &cfg, &AttnModifier::None).unwrap();
        assert_eq!(m, ln_rows(&x));
    }

    #[test]
    fn vacuous_mask_equals_no_modifier() {
        let cfg = ModelConfig::custom(1, 4, 6, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = LayerParams::random(&cfg, &mut rng);
        let x = rand_matrix(&mut rng, 5, 4);
        let a = mhsa_forward(&x, &p, &cfg, &AttnModifier::None).unwrap();
        let b = mhsa_forward(&x, &p, &cfg, &AttnModifier::Mask(vec![Matrix::ones(5, 5)])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_head_matches_formula() {
        let cfg = ModelConfig::custom(1, 3, 5, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = LayerParams::random(&cfg, &mut rng);
        let x = rand_matrix(&mut rng, 4, 3);
        let a = numkit::row_softmax(&attention_scores(&x, &p.q, &p.k, 3).unwrap()).unwrap();
        let xt = numkit::matmul(&a, &numkit::matmul(&x, &p.v).unwrap()).unwrap();
        let want = ln_rows(&numkit::matmul(&xt, &p.o).unwrap().add(&x).unwrap());
        let got = mhsa_forward(&x, &p, &cfg, &AttnModifier::None).unwrap();
        assert!(got.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn ffn_examples() {
        let cfg = ModelConfig::custom(1, 4, 6, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = LayerParams::random(&cfg, &mut rng);
        let m = rand_matrix(&mut rng, 3, 4);
        let z = ffn_forward(&m, &p, &cfg).unwrap();
        assert_eq!(z.shape(), (3, 4));
        let mut pre = numkit::matmul(&m, &p.w1).unwrap();
        for r in 0..3 {
            for c in 0..6 {
                pre[(r, c)] += p.b1.get(0, c);
            }
        }
        let mut f = numkit::matmul(&numkit::gelu(&pre), &p.w2).unwrap();
        for r in 0..3 {
            for c in 0..4 {
                f[(r, c)] += p.b2.get(0, c);
            }
        }
        let want = ln_rows(&m.add(&f).unwrap());
        assert!(z.max_abs_diff(&want) < 1e-12);

        p.w1 = Matrix::zeros(4, 6);
        p.w2 = Matrix::zeros(6, 4);
        p.b1 = Matrix::zeros(1, 6);
        p.b2 = Matrix::zeros(1, 4);
        assert_eq!(ffn_forward(&m, &p, &cfg).unwrap(), ln_rows(&m));
    }

    #[test]
    fn empty_stack_reads_out_raw_tokens() {
        let cfg = ModelConfig::custom(0, 4, 4, 2).unwrap();
        let x = Matrix::from_raw(2, 4, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let out = model_forward(&x, 2, &[], &cfg, &[], Readout::MaskedMean).unwrap();
        assert_eq!(out.data(), &[3.0, 4.0, 5.0, 6.0]);
        let out = model_forward(&x, 2, &[], &cfg, &[], Readout::PerNode).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn eval_forward_is_bit_identical() {
        let cfg = ModelConfig::custom(2, 4, 6, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let layers: Vec<_> = (0..2).map(|_| LayerParams::random(&cfg, &mut rng)).collect();
        let x = rand_matrix(&mut rng, 5, 4);
        let mods = vec![AttnModifier::None; 2];
        let a = model_forward(&x, 5, &layers, &cfg, &mods, Readout::PerNode).unwrap();
        let b = model_forward(&x, 5, &layers, &cfg, &mods, Readout::PerNode).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn padding_does_not_change_real_rows() {
        let cfg = ModelConfig::custom(2, 4, 6, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let layers: Vec<_> = (0..2).map(|_| LayerParams::random(&cfg, &mut rng)).collect();
        let x = rand_matrix(&mut rng, 4, 4);
        let mut padded = x.pad_to(7, 4);
        for r in 4..7 {
            padded.row_mut(r).copy_from_slice(&[9.0, -3.0, 0.5, 2.0]);
        }
        let mask = Matrix::from_rows(&[
            [1.0, 1.0, 0.0, 0.0],
            [1.0, 1.0, 1.0, 0.0],
            [0.0, 1.0, 1.0, 1.0],
            [0.0, 0.0, 1.0, 1.0],
        ])
        .unwrap();
        for m in [AttnModifier::None, AttnModifier::Mask(vec![mask])] {
            let mods = vec![m; 2];
            for how in [Readout::MaskedMean, Readout::PerNode, Readout::Target(2)] {
                let a = model_forward(&x, 4, &layers, &cfg, &mods, how).unwrap();
                let b = model_forward(&padded, 4, &layers, &cfg, &mods, how).unwrap();
                assert!(a.max_abs_diff(&b) <= 1e-9, "{how:?}");
            }
        }
    }

    #[test]
    fn fully_masked_row_is_rejected() {
        let cfg = ModelConfig::custom(1, 2, 2, 1).unwrap();
        let p = LayerParams::random(&cfg, &mut ChaCha8Rng::seed_from_u64(0));
        let mask = Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap();
        let err = mhsa_forward(&Matrix::ones(2, 2), &p, &cfg, &AttnModifier::Mask(vec![mask])).unwrap_err();
        assert!(matches!(err, ModelError::Numeric(numkit::NumError::DegenerateMask { row: 1 })));
    }
}
