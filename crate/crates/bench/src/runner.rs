//! Experiment runner: data preparation, batched training and evaluation.

use std::path::Path;
use std::rc::Rc;
use std::time::Instant;

use graphtx::{ForwardCtx, GraphTransformer, ModelSpec, ParamStore, PreparedGraph, ReadoutKind};
use numkit::{Matrix, NodeId, Tape};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, TaskLevel, TaskType};
use crate::error::{BenchError, Result};
use crate::metrics::{self, LossKind, MetricKind, Target};
use crate::optim::{lr_at, AdamConfig, TrainState};
use crate::results::{self, round_sig6, ResultRecord};
use crate::tasks::{self, Sample, Split, FEATURE_DIM};

const DATA_STREAM: u64 = 0;
const SAMPLER_STREAM: u64 = 1;
const TRAIN_STREAM: u64 = 2;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// A prepared model input with its target.
#[derive(Debug, Clone)]
pub struct Example {
    pub input: PreparedGraph,
    pub y: f64,
}

/// The three splits, prepared for one model.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
}

impl Splits {
    pub fn get(&self, s: Split) -> &[Example] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

pub fn model_spec(cfg: &ExperimentConfig) -> Result<ModelSpec> {
    let readout = match cfg.task.level {
        TaskLevel::Node => ReadoutKind::Target,
        TaskLevel::Graph => ReadoutKind::Mean,
    };
    let spec = ModelSpec::new(cfg.model_config()?, cfg.variant, FEATURE_DIM, 1, readout);
    spec.validate()?;
    Ok(spec)
}

/// Raw samples of every split; node-level subgraphs are drawn in split order.
pub fn build_samples(cfg: &ExperimentConfig) -> Result<[Vec<Sample>; 3]> {
    let t = &cfg.task;
    let data = tasks::gen_task(t.name, t.instances, &mut rng(t.data_seed, DATA_STREAM))?;
    let mut sampler = rng(t.data_seed, SAMPLER_STREAM);
    let mut get = |s: Split| -> Result<Vec<Sample>> {
        let v = tasks::samples(&data, t.level, s, t.data_seed, &cfg.sampler, &mut sampler)?;
        if v.is_empty() {
            return Err(BenchError::config("task.instances", format!("{} instances leave the {} split empty", t.instances, s.as_str())));
        }
        Ok(v)
    };
    Ok([get(Split::Train)?, get(Split::Val)?, get(Split::Test)?])
}

pub fn prepare(model: &GraphTransformer, samples: &[Sample]) -> Result<Vec<Example>> {
    samples
        .iter()
        .map(|s| Ok(Example { input: model.prepare(&s.graph, s.target_node)?, y: s.y }))
        .collect()
}

pub fn prepare_splits(model: &GraphTransformer, cfg: &ExperimentConfig) -> Result<Splits> {
    let [tr, va, te] = build_samples(cfg)?;
    Ok(Splits { train: prepare(model, &tr)?, val: prepare(model, &va)?, test: prepare(model, &te)? })
}

/// Examples processed together, every graph padded to `n_max` tokens.
pub struct Batch<'a> {
    pub items: Vec<&'a Example>,
    pub n_max: usize,
}

impl<'a> Batch<'a> {
    pub fn new(items: Vec<&'a Example>) -> Self {
        let n_max = items.iter().map(|e| e.input.n()).max().unwrap_or(0);
        Self { items, n_max }
    }

    /// Pads further, to `total ≥ n_max` tokens.
    pub fn with_padding(mut self, total: usize) -> Self {
        self.n_max = self.n_max.max(total);
        self
    }

    /// `true` at real tokens, row-major per graph.
    pub fn pad_mask(&self) -> Vec<Vec<bool>> {
        self.items.iter().map(|e| (0..self.n_max).map(|i| i < e.input.n()).collect()).collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.items.iter().map(|e| e.y).collect()
    }
}

/// Mean loss over the batch, recorded on `tape`.
pub fn batch_loss(
    model: &GraphTransformer,
    tape: &mut Tape,
    bound: &graphtx::Bound,
    batch: &Batch<'_>,
    loss: LossKind,
    ctx: &mut ForwardCtx<'_>,
) -> Result<NodeId> {
    let outs = batch
        .items
        .iter()
        .map(|e| Ok(model.forward(tape, bound, &e.input, batch.n_max, ctx)?))
        .collect::<Result<Vec<_>>>()?;
    let pred = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    let b = outs.len();
    let target = Target::Values(Rc::new(Matrix::from_raw(1, b, batch.targets())));
    metrics::loss(tape, loss, pred, &target, Rc::from(vec![1.0; b]))
}

/// Eval-mode score for every example.
pub fn predict(model: &GraphTransformer, examples: &[Example]) -> Result<Vec<f64>> {
    examples.iter().map(|e| Ok(model.predict(&e.input)?.get(0, 0))).collect()
}

/// Metric value on `examples`.
pub fn evaluate(model: &GraphTransformer, examples: &[Example], metric: MetricKind, task: TaskType) -> Result<f64> {
    let scores = predict(model, examples)?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(BenchError::Numeric("non-finite prediction".into()));
    }
    let labels: Vec<f64> = examples.iter().map(|e| e.y).collect();
    let scores = match (metric, task) {
        (MetricKind::Accuracy, TaskType::Binary) => scores.iter().map(|&s| if s > 0.0 { 1.0 } else { 0.0 }).collect(),
        _ => scores,
    };
    metrics::metric(metric, &scores, &labels)
}

/// Strictly better than `threshold`.
fn reached(metric: MetricKind, value: f64, threshold: f64) -> bool {
    if metric.higher_is_better() {
        value > threshold
    } else {
        value < threshold
    }
}

/// Everything a finished run produced.
pub struct RunOutput {
    pub records: Vec<ResultRecord>,
    pub model: GraphTransformer,
    pub state: TrainState,
    /// Updates actually performed.
    pub steps: usize,
}

impl RunOutput {
    /// Final value of `metric` on `split`.
    pub fn final_value(&self, split: Split, metric: MetricKind) -> Option<f64> {
        self.records
            .iter()
            .rev()
            .find(|r| r.split == split.as_str() && r.metric == metric.as_str())
            .map(|r| r.value)
    }
}

struct Recorder<'a> {
    cfg: &'a ExperimentConfig,
    hash: String,
    start: Instant,
    records: Vec<ResultRecord>,
}

impl Recorder<'_> {
    fn push(&mut self, step: usize, split: Split, metric: &str, value: f64) {
        self.records.push(ResultRecord {
            config_hash: self.hash.clone(),
            variant: self.cfg.variant.to_string(),
            task: self.cfg.task.name.to_string(),
            size: self.cfg.model.label(),
            seed: self.cfg.seed,
            step,
            split: split.as_str().to_string(),
            metric: metric.to_string(),
            value: round_sig6(value),
            wall_ms: self.start.elapsed().as_millis() as u64,
        });
    }
}

/// Trains and evaluates one configuration. A pure function of `cfg`
/// apart from the `wall_ms` column.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let mut model = GraphTransformer::new(model_spec(cfg)?, cfg.seed)?;
    let splits = prepare_splits(&model, cfg)?;
    let tc = &cfg.train;
    let adam = AdamConfig::from(tc);
    let loss_kind = cfg.task.name.loss();
    let task_type = cfg.task.name.task_type();
    let metric = cfg.task.metric;
    let mut state = TrainState::for_store(model.params());
    let mut rng = rng(cfg.seed, TRAIN_STREAM);
    let mut rec = Recorder { cfg, hash: cfg.hash(), start, records: Vec::new() };

    let mut order: Vec<usize> = (0..splits.train.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut loss_sum = 0.0;
    let mut loss_count = 0usize;
    let mut step = 0;
    while step < tc.max_steps {
        let mut items = Vec::with_capacity(tc.batch_size);
        for _ in 0..tc.batch_size.min(order.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            items.push(&splits.train[order[cursor]]);
            cursor += 1;
        }
        let batch = Batch::new(items);
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, true);
        let loss = {
            let mut ctx = ForwardCtx::train(&mut rng);
            batch_loss(&model, &mut tape, &bound, &batch, loss_kind, &mut ctx)?
        };
        let lv = tape.value(loss).get(0, 0);
        if !lv.is_finite() {
            return Err(BenchError::Numeric(format!("loss is {lv} at step {step}")));
        }
        let grads = tape.backward(loss)?;
        let grads = bound.gradients(model.params(), &grads);
        state.adam_step_store(model.params_mut(), &grads, &adam, lr_at(step + 1, tc))?;
        step += 1;
        loss_sum += lv;
        loss_count += 1;

        let last = step == tc.max_steps;
        if step % tc.eval_interval == 0 || last {
            rec.push(step, Split::Train, "loss", loss_sum / loss_count as f64);
            loss_sum = 0.0;
            loss_count = 0;
            let v = evaluate(&model, &splits.val, metric, task_type)?;
            rec.push(step, Split::Val, metric.as_str(), v);
            if tc.early_stop.is_some_and(|t| reached(metric, v, t)) {
                break;
            }
        }
    }
    let t = evaluate(&model, &splits.test, metric, task_type)?;
    rec.push(step, Split::Test, metric.as_str(), t);
    Ok(RunOutput { records: rec.records, model, state, steps: step })
}

/// Saved model: its spec and parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub params: ParamStore,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const RESULTS_FILE: &str = "results.csv";

/// Writes results, manifest and checkpoint into `dir`.
pub fn save_run(dir: &Path, cfg: &ExperimentConfig, out: &RunOutput) -> Result<()> {
    results::write_text(&dir.join(MANIFEST_FILE), &cfg.to_toml_string())?;
    let ck = Checkpoint { spec: out.model.spec().clone(), params: out.model.params().clone() };
    let json = serde_json::to_string(&ck).expect("checkpoint serializes");
    results::write_text(&dir.join(CHECKPOINT_FILE), &json)?;
    results::append_csv(&dir.join(RESULTS_FILE), &out.records)
}

/// Model and configuration saved by [`save_run`].
pub fn load_run(dir: &Path) -> Result<(ExperimentConfig, GraphTransformer)> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&mpath).map_err(|e| BenchError::io(&mpath, e))?;
    let cfg = ExperimentConfig::from_toml_str(&text)?;
    let cpath = dir.join(CHECKPOINT_FILE);
    let json = std::fs::read_to_string(&cpath).map_err(|e| BenchError::io(&cpath, e))?;
    let ck: Checkpoint = serde_json::from_str(&json)
        .map_err(|e| BenchError::Format { path: cpath.clone(), message: e.to_string() })?;
    let model = GraphTransformer::from_parts(ck.spec, ck.params)?;
    Ok((cfg, model))
}

/// Evaluates a saved run on `split`, returning one record.
pub fn eval_saved(dir: &Path, split: Split) -> Result<ResultRecord> {
    let start = Instant::now();
    let (cfg, model) = load_run(dir)?;
    let splits = prepare_splits(&model, &cfg)?;
    let v = evaluate(&model, splits.get(split), cfg.task.metric, cfg.task.name.task_type())?;
    let step = results::read_csv(&dir.join(RESULTS_FILE))
        .ok()
        .and_then(|r| r.iter().map(|r| r.step).max())
        .unwrap_or(0);
    let mut rec = Recorder { cfg: &cfg, hash: cfg.hash(), start, records: Vec::new() };
    rec.push(step, split, cfg.task.metric.as_str(), v);
    Ok(rec.records.remove(0))
}
