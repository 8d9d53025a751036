//! The trainable graph Transformer: input embedding, optional graph
//! mechanism, encoder blocks, readout and a linear head.

use std::rc::Rc;

use graphkit::{Graph, KernelKind, Spd, StructCache};
use numkit::{Matrix, NodeId, Tape};
use serde::{Deserialize, Serialize};

use crate::at::{
    edge_pair_features, inv_sqrt_degrees, maskn_masks, path_features, pma_view_stack, pma_views,
    spd_gather_index, spd_mask, AtKind, MAX_PATH_EDGES, MAX_SPD, PMA_VIEWS,
};
use crate::error::{ModelError, Result};
use crate::ga::{gnn_tape, GaPattern, GnnConsts, GnnGraph, GnnKind, GnnNodes, Sigma, DEFAULT_BEFORE_LAYERS};
use crate::params::{init_rng, Bound, ParamId, ParamStore};
use crate::pe::{degree_indices, flip_column_pairs, flip_columns, laplacian_pe_from_spectrum, svd_pe_padded, PeKind, MAX_DEGREE};
use crate::txcore::{
    ffn, mhsa, padded_keep, readout, uniform, AttnPlan, Dropout, ForwardCtx, LayerNodes, ModelConfig,
    Readout,
};
use crate::variant::Variant;

/// How per-token outputs become predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReadoutKind {
    /// One prediction per node.
    PerNode,
    /// Mean over the graph's nodes.
    Mean,
    /// The prepared graph's target node.
    Target,
}

/// Knobs that only some variants read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VariantOptions {
    pub gnn_sigma: Sigma,
    /// GNN depth for the `before` pattern.
    pub before_layers: usize,
    /// PMA views normalised as `D^{-1/2} A D^{-1/2}` instead of by row.
    pub pma_symmetric: bool,
    /// Kernel attention scales its output by `D^{-1/2}` before the residual.
    pub kernel_degree_residual: bool,
    /// Separate in/out degree tables for directed inputs.
    pub directed: bool,
    /// Edge feature width for the edge variants.
    pub edge_dim: usize,
}

impl Default for VariantOptions {
    fn default() -> Self {
        Self {
            gnn_sigma: Sigma::Relu,
            before_layers: DEFAULT_BEFORE_LAYERS,
            pma_symmetric: false,
            kernel_degree_residual: true,
            directed: false,
            edge_dim: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub config: ModelConfig,
    pub variant: Variant,
    pub d_in: usize,
    pub out_dim: usize,
    pub readout: ReadoutKind,
    #[serde(default)]
    pub options: VariantOptions,
}

impl ModelSpec {
    pub fn new(config: ModelConfig, variant: Variant, d_in: usize, out_dim: usize, readout: ReadoutKind) -> Self {
        Self { config, variant, d_in, out_dim, readout, options: VariantOptions::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.d_in == 0 || self.out_dim == 0 {
            return Err(ModelError::Config("input and output widths must be positive".into()));
        }
        if let Variant::Ga { pattern: GaPattern::Before, .. } = self.variant {
            if self.options.before_layers == 0 {
                return Err(ModelError::Config("before pattern needs at least one GNN layer".into()));
            }
        }
        if self.variant.needs_edge_features() && self.options.edge_dim == 0 {
            return Err(ModelError::Config(format!("variant `{}` needs edge_dim > 0", self.variant)));
        }
        Ok(())
    }
}

/// Structure a variant reads, computed once per graph.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    graph: Graph,
    features: Matrix,
    target: Option<usize>,
    /// 0/1 attention masks, shared or per head.
    masks: Vec<Matrix>,
    spd: Option<Spd>,
    pma_views: Vec<Matrix>,
    /// Per-pair features at `total = n`.
    pair_features: Option<Matrix>,
    kernel: Option<Matrix>,
    degree_scale: Option<Vec<f64>>,
    degree_rows: Option<(Vec<usize>, Option<Vec<usize>>)>,
    pe_base: Option<Matrix>,
    gnn_needed: bool,
}

impl PreparedGraph {
    pub fn n(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn target(&self) -> Option<usize> {
        self.target
    }

    /// Canonical (unflipped) eigenvector or SVD encoding.
    pub fn pe_base(&self) -> Option<&Matrix> {
        self.pe_base.as_ref()
    }

    pub fn kernel(&self) -> Option<&Matrix> {
        self.kernel.as_ref()
    }

    /// Replaces the attention kernel of a kernel-variant graph.
    pub fn set_kernel(&mut self, k: Matrix) -> Result<()> {
        let n = self.n();
        if self.kernel.is_none() || k.shape() != (n, n) {
            return Err(ModelError::Shape(format!("kernel {:?} for {n} nodes", k.shape())));
        }
        self.kernel = Some(k);
        Ok(())
    }
}

/// Rows `i·n + j` of a pair matrix moved to `i·total + j`.
fn pad_pairs(m: &Matrix, n: usize, total: usize) -> Matrix {
    if n == total {
        return m.clone();
    }
    let mut out = Matrix::zeros(total * total, m.cols());
    for i in 0..n {
        for j in 0..n {
            out.row_mut(i * total + j).copy_from_slice(m.row(i * n + j));
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct LayerIds {
    q: ParamId,
    k: Option<ParamId>,
    v: ParamId,
    o: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    ln1_gain: ParamId,
    ln1_bias: ParamId,
    ln2_gain: ParamId,
    ln2_bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct GnnIds {
    kind: GnnKind,
    w: ParamId,
    eps: Option<ParamId>,
    b1: Option<ParamId>,
    w2: Option<ParamId>,
    b2: Option<ParamId>,
    att_src: Option<ParamId>,
    att_dst: Option<ParamId>,
}

#[derive(Debug, Clone, Default)]
struct Ids {
    embed_w: Option<ParamId>,
    embed_b: Option<ParamId>,
    layers: Vec<LayerIds>,
    head_w: Option<ParamId>,
    head_b: Option<ParamId>,
    pe_in: Option<ParamId>,
    pe_out: Option<ParamId>,
    pe_map_w: Option<ParamId>,
    pe_map_b: Option<ParamId>,
    spb: Option<ParamId>,
    pma: Option<ParamId>,
    edge_w: Option<ParamId>,
    w_e: Option<ParamId>,
    gnn: Vec<GnnIds>,
    gres: Vec<ParamId>,
}

enum Init {
    Uniform(usize),
    Zeros,
    Ones,
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    seed: u64,
}

impl Builder<'_> {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> ParamId {
        let m = match init {
            Init::Uniform(fan_in) => uniform(&mut init_rng(self.seed, &name), rows, cols, fan_in),
            Init::Zeros => Matrix::zeros(rows, cols),
            Init::Ones => Matrix::ones(rows, cols),
        };
        self.store.insert(name, m)
    }

    fn gnn(&mut self, prefix: &str, kind: GnnKind, d: usize) -> GnnIds {
        let w = self.add(format!("{prefix}.w"), d, d, Init::Uniform(d));
        let mut ids = GnnIds { kind, w, eps: None, b1: None, w2: None, b2: None, att_src: None, att_dst: None };
        match kind {
            GnnKind::Gcn => {}
            GnnKind::Gin => {
                ids.eps = Some(self.add(format!("{prefix}.eps"), 1, 1, Init::Zeros));
                ids.b1 = Some(self.add(format!("{prefix}.b1"), 1, d, Init::Uniform(d)));
                ids.w2 = Some(self.add(format!("{prefix}.w2"), d, d, Init::Uniform(d)));
                ids.b2 = Some(self.add(format!("{prefix}.b2"), 1, d, Init::Uniform(d)));
            }
            GnnKind::GatLite => {
                ids.att_src = Some(self.add(format!("{prefix}.att_src"), d, 1, Init::Uniform(d)));
                ids.att_dst = Some(self.add(format!("{prefix}.att_dst"), d, 1, Init::Uniform(d)));
            }
        }
        ids
    }
}

/// Prefixes of parameters that only graph-aware variants own.
const GRAPH_PREFIXES: [&str; 4] = ["pe.", "at.", "gnn", "gres"];

#[derive(Debug, Clone)]
pub struct GraphTransformer {
    spec: ModelSpec,
    store: ParamStore,
    ids: Ids,
}

impl GraphTransformer {
    /// Fresh model; parameter values depend only on `seed` and their names.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let cfg = &spec.config;
        let (d, f, h) = (cfg.hidden, cfg.ffn_hidden, cfg.heads);
        let mut store = ParamStore::new();
        let mut ids = Ids::default();
        let mut b = Builder { store: &mut store, seed };
        let shared_qk = matches!(spec.variant, Variant::At(AtKind::Kernel { .. }));

        ids.embed_w = Some(b.add("embed.w".into(), spec.d_in, d, Init::Uniform(spec.d_in)));
        ids.embed_b = Some(b.add("embed.b".into(), 1, d, Init::Uniform(spec.d_in)));
        for l in 0..cfg.layers {
            let p = |s: &str| format!("layer{l}.{s}");
            ids.layers.push(LayerIds {
                q: b.add(p("attn.q"), d, d, Init::Uniform(d)),
                k: (!shared_qk).then(|| b.add(p("attn.k"), d, d, Init::Uniform(d))),
                v: b.add(p("attn.v"), d, d, Init::Uniform(d)),
                o: b.add(p("attn.o"), d, d, Init::Uniform(d)),
                w1: b.add(p("ffn.w1"), d, f, Init::Uniform(d)),
                b1: b.add(p("ffn.b1"), 1, f, Init::Uniform(d)),
                w2: b.add(p("ffn.w2"), f, d, Init::Uniform(f)),
                b2: b.add(p("ffn.b2"), 1, d, Init::Uniform(f)),
                ln1_gain: b.add(p("ln1.gain"), 1, d, Init::Ones),
                ln1_bias: b.add(p("ln1.bias"), 1, d, Init::Zeros),
                ln2_gain: b.add(p("ln2.gain"), 1, d, Init::Ones),
                ln2_bias: b.add(p("ln2.bias"), 1, d, Init::Zeros),
            });
        }
        ids.head_w = Some(b.add("head.w".into(), d, spec.out_dim, Init::Uniform(d)));
        ids.head_b = Some(b.add("head.b".into(), 1, spec.out_dim, Init::Uniform(d)));

        let de = spec.options.edge_dim;
        match spec.variant {
            Variant::Vanilla => {}
            Variant::Ga { pattern, gnn } => match pattern {
                GaPattern::Before => {
                    for k in 0..spec.options.before_layers {
                        let g = b.gnn(&format!("gnn{k}"), gnn, d);
                        ids.gnn.push(g);
                    }
                }
                GaPattern::Alternate => {
                    for l in 0..cfg.layers {
                        let g = b.gnn(&format!("gnn{l}"), gnn, d);
                        ids.gnn.push(g);
                    }
                }
                GaPattern::Parallel => {
                    for l in 0..cfg.layers {
                        ids.gres.push(b.add(format!("gres{l}.w"), d, d, Init::Uniform(d)));
                    }
                }
            },
            Variant::Pe { kind: PeKind::Degree, .. } => {
                ids.pe_in = Some(b.add("pe.z_in".into(), MAX_DEGREE + 1, d, Init::Uniform(d)));
                if spec.options.directed {
                    ids.pe_out = Some(b.add("pe.z_out".into(), MAX_DEGREE + 1, d, Init::Uniform(d)));
                }
            }
            Variant::Pe { kind, size } => {
                let w = kind.raw_width(size);
                ids.pe_map_w = Some(b.add("pe.map.w".into(), w, d, Init::Uniform(w)));
                ids.pe_map_b = Some(b.add("pe.map.b".into(), 1, d, Init::Uniform(w)));
            }
            Variant::At(kind) => match kind {
                AtKind::Spb => ids.spb = Some(b.add("at.spb".into(), MAX_SPD + 2, h, Init::Zeros)),
                AtKind::Pma => ids.pma = Some(b.add("at.pma".into(), PMA_VIEWS, h, Init::Zeros)),
                AtKind::EdgeBias => {
                    ids.edge_w = Some(b.add("at.edge_w".into(), MAX_PATH_EDGES * de, h, Init::Uniform(de)))
                }
                AtKind::EdgeMask => ids.w_e = Some(b.add("at.w_e".into(), de, d, Init::Ones)),
                AtKind::Mask1 | AtKind::MaskN { .. } | AtKind::Kernel { .. } => {}
            },
        }
        Ok(Self { spec, store, ids })
    }

    /// Rebuilds a model around stored parameters, checking names and shapes.
    pub fn from_parts(spec: ModelSpec, store: ParamStore) -> Result<Self> {
        let mut model = Self::new(spec, 0)?;
        if !model.store.same_layout(&store) {
            return Err(ModelError::Shape("stored parameters do not match the model layout".into()));
        }
        model.store = store;
        Ok(model)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn into_parts(self) -> (ModelSpec, ParamStore) {
        (self.spec, self.store)
    }

    /// Block `l`'s weights as eager parameters; shared-QK blocks repeat `Q` as `K`.
    pub fn layer_params(&self, l: usize) -> crate::txcore::LayerParams {
        let ids = &self.ids.layers[l];
        let g = |id: ParamId| self.store.get(id).clone();
        crate::txcore::LayerParams {
            q: g(ids.q),
            k: g(ids.k.unwrap_or(ids.q)),
            v: g(ids.v),
            o: g(ids.o),
            w1: g(ids.w1),
            b1: g(ids.b1),
            w2: g(ids.w2),
            b2: g(ids.b2),
            ln1_gain: g(ids.ln1_gain),
            ln1_bias: g(ids.ln1_bias),
            ln2_gain: g(ids.ln2_gain),
            ln2_bias: g(ids.ln2_bias),
        }
    }

    /// Parameters owned by the graph mechanism rather than the plain Transformer.
    pub fn graph_specific_params(&self) -> Vec<ParamId> {
        self.store
            .iter()
            .filter(|(_, name, _)| GRAPH_PREFIXES.iter().any(|p| name.starts_with(p)))
            .map(|(id, _, _)| id)
            .collect()
    }

    pub fn zero_graph_specific(&mut self) {
        for id in self.graph_specific_params() {
            let m = self.store.get_mut(id);
            m.data_mut().fill(0.0);
        }
    }

    /// Computes the structure this variant needs. `target` selects the
    /// readout node for [`ReadoutKind::Target`].
    pub fn prepare(&self, g: &Graph, target: Option<usize>) -> Result<PreparedGraph> {
        let spec = &self.spec;
        let n = g.num_nodes();
        if n == 0 {
            return Err(ModelError::Shape("graph has no nodes".into()));
        }
        let features = g.node_features().clone();
        if features.shape() != (n, spec.d_in) {
            return Err(ModelError::Shape(format!(
                "node features are {:?}, model expects {n} x {}",
                features.shape(),
                spec.d_in
            )));
        }
        match (spec.readout, target) {
            (ReadoutKind::Target, None) => {
                return Err(ModelError::Config("target readout needs a target node".into()))
            }
            (_, Some(t)) if t >= n => {
                return Err(ModelError::Shape(format!("target node {t} of {n}")))
            }
            _ => {}
        }
        let mut p = PreparedGraph {
            graph: g.clone(),
            features,
            target,
            masks: Vec::new(),
            spd: None,
            pma_views: Vec::new(),
            pair_features: None,
            kernel: None,
            degree_scale: None,
            degree_rows: None,
            pe_base: None,
            gnn_needed: matches!(spec.variant, Variant::Ga { .. }),
        };
        let unsupported = |reason: &str| ModelError::Unsupported {
            variant: spec.variant.to_string(),
            reason: reason.into(),
        };
        match spec.variant {
            Variant::Vanilla | Variant::Ga { .. } => {}
            Variant::Pe { kind: PeKind::Degree, .. } => {
                let rows = degree_indices(g, MAX_DEGREE);
                if rows.1.is_some() && self.ids.pe_out.is_none() {
                    return Err(unsupported("directed graph but the model has no out-degree table"));
                }
                p.degree_rows = Some(rows);
            }
            Variant::Pe { kind: PeKind::Eig, size } => {
                let sc = StructCache::build(g, 0, None)?;
                let eig = sc.spectrum.as_ref().ok_or_else(|| unsupported("directed graph"))?;
                p.pe_base = Some(laplacian_pe_from_spectrum(eig, size));
            }
            Variant::Pe { kind: PeKind::Svd, size } => {
                p.pe_base = Some(svd_pe_padded(g.adjacency(), size)?);
            }
            Variant::At(kind) => match kind {
                AtKind::Mask1 => {
                    let spd = graphkit::spd_matrix(g);
                    p.masks = vec![spd_mask(&spd, 1)];
                }
                AtKind::MaskN { hops } => {
                    let spd = graphkit::spd_matrix(g);
                    p.masks = maskn_masks(&spd, spec.config.heads, hops)?;
                }
                AtKind::Spb => p.spd = Some(graphkit::spd_matrix(g)),
                AtKind::Pma => p.pma_views = pma_views(g, PMA_VIEWS, spec.options.pma_symmetric)?,
                AtKind::Kernel { kernel } => {
                    let sc = StructCache::build(g, 0, Some(KernelKind::from(kernel)))?;
                    p.kernel = sc.kernel.map(|(_, k)| k);
                    p.degree_scale = Some(inv_sqrt_degrees(g));
                }
                AtKind::EdgeMask | AtKind::EdgeBias => {
                    if g.edge_feature_dim() != Some(spec.options.edge_dim) {
                        return Err(unsupported(&format!(
                            "edge feature width {:?}, model expects {}",
                            g.edge_feature_dim(),
                            spec.options.edge_dim
                        )));
                    }
                    if kind == AtKind::EdgeMask {
                        let spd = graphkit::spd_matrix(g);
                        p.masks = vec![spd_mask(&spd, 1)];
                        p.pair_features = Some(edge_pair_features(g, n)?);
                    } else {
                        p.pair_features = Some(path_features(g, MAX_PATH_EDGES, n)?);
                    }
                }
            },
        }
        Ok(p)
    }

    /// Every parameter copied onto the tape; leaves when `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        self.store.bind(tape, trainable)
    }

    fn layer_nodes(&self, b: &Bound, l: usize) -> LayerNodes {
        let ids = &self.ids.layers[l];
        LayerNodes {
            q: b.node(ids.q),
            k: ids.k.map(|k| b.node(k)),
            v: b.node(ids.v),
            o: b.node(ids.o),
            w1: b.node(ids.w1),
            b1: b.node(ids.b1),
            w2: b.node(ids.w2),
            b2: b.node(ids.b2),
            ln1_gain: b.node(ids.ln1_gain),
            ln1_bias: b.node(ids.ln1_bias),
            ln2_gain: b.node(ids.ln2_gain),
            ln2_bias: b.node(ids.ln2_bias),
        }
    }

    fn gnn_nodes(&self, b: &Bound, k: usize) -> GnnNodes {
        let ids = &self.ids.gnn[k];
        let w = b.node(ids.w);
        let or_w = |id: Option<ParamId>| id.map_or(w, |i| b.node(i));
        GnnNodes {
            kind: ids.kind,
            w,
            eps: or_w(ids.eps),
            b1: or_w(ids.b1),
            w2: or_w(ids.w2),
            b2: or_w(ids.b2),
            att_src: or_w(ids.att_src),
            att_dst: or_w(ids.att_dst),
        }
    }

    fn attention_plan(&self, tape: &mut Tape, b: &Bound, p: &PreparedGraph, total: usize) -> Result<AttnPlan> {
        let n = p.n();
        let heads = self.spec.config.heads;
        let mut plan = AttnPlan::default();
        let per_head = |tape: &mut Tape, all: NodeId| -> Result<Vec<NodeId>> {
            (0..heads)
                .map(|h| {
                    let col = tape.slice_cols(all, h, 1)?;
                    Ok(tape.reshape(col, total, total)?)
                })
                .collect()
        };
        if let Variant::At(kind) = self.spec.variant {
            match kind {
                AtKind::Mask1 | AtKind::MaskN { .. } => {
                    plan.keep = p.masks.iter().map(|m| padded_keep(Some(m.data()), n, total)).collect();
                }
                AtKind::Spb => {
                    let spd = p.spd.as_ref().expect("prepared for spb");
                    let table = b.node(self.ids.spb.expect("spb table"));
                    plan.bias = spd_gather_index(spd, MAX_SPD, heads, total)
                        .into_iter()
                        .map(|idx| tape.gather(table, idx, total, total))
                        .collect::<std::result::Result<_, _>>()?;
                }
                AtKind::Pma => {
                    let stack = tape.constant(pma_view_stack(&p.pma_views, total));
                    let all = tape.matmul(stack, b.node(self.ids.pma.expect("pma weights")))?;
                    plan.bias = per_head(tape, all)?;
                }
                AtKind::Kernel { .. } => {
                    let k = p.kernel.as_ref().expect("prepared kernel");
                    plan.hadamard = Some(tape.constant(k.pad_to(total, total)));
                    plan.shared_qk = true;
                    if self.spec.options.kernel_degree_residual {
                        let s = p.degree_scale.as_ref().expect("prepared degrees");
                        plan.residual_scale = Some(tape.constant(Matrix::diag(s).pad_to(total, total)));
                    }
                }
                AtKind::EdgeMask => {
                    let f = p.pair_features.as_ref().expect("prepared pair features");
                    let f = tape.constant(pad_pairs(f, n, total));
                    let s = tape.matmul(f, b.node(self.ids.w_e.expect("edge weights")))?;
                    let d = self.spec.config.hidden;
                    let reduce = tape.constant(Matrix::filled(d, 1, 1.0 / d as f64));
                    let s = tape.matmul(s, reduce)?;
                    plan.hadamard = Some(tape.reshape(s, total, total)?);
                    plan.keep = p.masks.iter().map(|m| padded_keep(Some(m.data()), n, total)).collect();
                }
                AtKind::EdgeBias => {
                    let s = p.pair_features.as_ref().expect("prepared path features");
                    let s = tape.constant(pad_pairs(s, n, total));
                    let all = tape.matmul(s, b.node(self.ids.edge_w.expect("edge weights")))?;
                    plan.bias = per_head(tape, all)?;
                }
            }
        }
        plan.ensure_padding(n, total);
        Ok(plan)
    }

    fn positional(
        &self,
        tape: &mut Tape,
        b: &Bound,
        p: &PreparedGraph,
        total: usize,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<Option<NodeId>> {
        let d = self.spec.config.hidden;
        if let Some((rows_in, rows_out)) = &p.degree_rows {
            let lookup = |tape: &mut Tape, table: ParamId, rows: &[usize]| -> Result<NodeId> {
                let mut idx = Vec::with_capacity(total * d);
                for i in 0..total {
                    let r = rows.get(i).copied().unwrap_or(0);
                    idx.extend((0..d).map(|c| r * d + c));
                }
                Ok(tape.gather(b.node(table), Rc::from(idx), total, d)?)
            };
            let mut out = lookup(tape, self.ids.pe_in.expect("degree table"), rows_in)?;
            if let Some(rows_out) = rows_out {
                let z = lookup(tape, self.ids.pe_out.expect("out-degree table"), rows_out)?;
                out = tape.add(out, z)?;
            }
            return Ok(Some(out));
        }
        let Some(base) = &p.pe_base else { return Ok(None) };
        let mut pe = base.clone();
        if let Dropout::On(rng) = &mut ctx.dropout {
            match self.spec.variant {
                Variant::Pe { kind: PeKind::Svd, .. } => flip_column_pairs(&mut pe, &mut **rng),
                _ => flip_columns(&mut pe, &mut **rng),
            }
        }
        let pe = tape.constant(pe.pad_to(total, pe.cols()));
        let mapped = tape.matmul(pe, b.node(self.ids.pe_map_w.expect("PE map")))?;
        Ok(Some(tape.add_row(mapped, b.node(self.ids.pe_map_b.expect("PE bias")))?))
    }

    /// Forward pass for one graph padded to `total` tokens. Returns
    /// `n × out` for per-node readout and `1 × out` otherwise.
    pub fn forward(
        &self,
        tape: &mut Tape,
        b: &Bound,
        p: &PreparedGraph,
        total: usize,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<NodeId> {
        let n = p.n();
        if total < n {
            return Err(ModelError::Shape(format!("{n} nodes padded to {total}")));
        }
        let cfg = &self.spec.config;
        let d = cfg.hidden;
        let sigma = self.spec.options.gnn_sigma;
        let raw = tape.constant(p.features.pad_to(total, self.spec.d_in));
        let x0 = tape.matmul(raw, b.node(self.ids.embed_w.expect("embedding")))?;
        let x0 = tape.add_row(x0, b.node(self.ids.embed_b.expect("embedding bias")))?;
        let mut x = x0;
        if let Some(pe) = self.positional(tape, b, p, total, ctx)? {
            x = tape.add(x, pe)?;
        }

        let gnn = if p.gnn_needed {
            let gg = GnnGraph::new(&p.graph, total);
            let c = GnnConsts::new(tape, &gg, d);
            Some((gg, c))
        } else {
            None
        };
        let pattern = match self.spec.variant {
            Variant::Ga { pattern, .. } => Some(pattern),
            _ => None,
        };
        if pattern == Some(GaPattern::Before) {
            let (gg, c) = gnn.as_ref().expect("GNN constants");
            for k in 0..self.ids.gnn.len() {
                let h = gnn_tape(tape, x, &self.gnn_nodes(b, k), gg, c, sigma)?;
                x = tape.add(x, h)?;
            }
        }
        let gres_base = if pattern == Some(GaPattern::Parallel) {
            let (_, c) = gnn.as_ref().expect("GNN constants");
            Some(tape.matmul(c.gcn_adj, x0)?)
        } else {
            None
        };

        let plan = self.attention_plan(tape, b, p, total)?;
        for l in 0..cfg.layers {
            let nodes = self.layer_nodes(b, l);
            let mut m = mhsa(tape, x, &nodes, cfg, &plan, ctx)?;
            match pattern {
                Some(GaPattern::Alternate) => {
                    let (gg, c) = gnn.as_ref().expect("GNN constants");
                    let h = gnn_tape(tape, m, &self.gnn_nodes(b, l), gg, c, sigma)?;
                    m = tape.add(m, h)?;
                }
                Some(GaPattern::Parallel) => {
                    let r = tape.matmul(gres_base.expect("G-Res input"), b.node(self.ids.gres[l]))?;
                    m = tape.add(m, r)?;
                }
                _ => {}
            }
            x = ffn(tape, m, &nodes, cfg, ctx)?;
        }

        let how = match self.spec.readout {
            ReadoutKind::PerNode => Readout::PerNode,
            ReadoutKind::Mean => Readout::MaskedMean,
            ReadoutKind::Target => Readout::Target(p.target.expect("checked in prepare")),
        };
        let r = readout(tape, x, how, n, total)?;
        let y = tape.matmul(r, b.node(self.ids.head_w.expect("head")))?;
        Ok(tape.add_row(y, b.node(self.ids.head_b.expect("head bias")))?)
    }

    /// Eval-mode prediction for one graph.
    pub fn predict(&self, p: &PreparedGraph) -> Result<Matrix> {
        self.predict_with(p, p.n(), &mut ForwardCtx::eval())
    }

    /// Prediction with explicit padding and context.
    pub fn predict_with(&self, p: &PreparedGraph, total: usize, ctx: &mut ForwardCtx<'_>) -> Result<Matrix> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let out = self.forward(&mut tape, &b, p, total, ctx)?;
        Ok(tape.value(out).clone())
    }
}
