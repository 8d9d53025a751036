use std::path::Path;
use std::process::Command;

use bench::config::{ExperimentConfig, ModelSize, TaskName};
use bench::metrics::{average_precision, roc_auc, LossKind};
use bench::optim::{AdamConfig, TrainState};
use bench::results::{parse_csv, to_csv_string, ResultRecord};
use bench::runner::{self, batch_loss, evaluate, model_spec, prepare_splits, Batch};
use bench::{run_experiment, MetricKind, Split};
use graphtx::{ForwardCtx, GraphTransformer};
use numkit::{Matrix, Tape};
use proptest::prelude::*;

fn tiny(task: TaskName, variant: &str, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::desk(task, variant.parse().unwrap(), seed);
    c.model = ModelSize::Custom { layers: 2, hidden: 16, ffn_hidden: 16, heads: 2 };
    c.task.instances = 40;
    c.train.max_steps = 30;
    c.train.warmup_steps = 3;
    c.train.eval_interval = 10;
    c.train.batch_size = 4;
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn roc_auc_ignores_monotone_transforms(
        data in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 2..40),
        scale in 0.1f64..10.0,
        shift in -3.0f64..3.0,
    ) {
        let scores: Vec<f64> = data.iter().map(|d| (d.0 * 4.0).round() / 4.0).collect();
        let mut labels: Vec<f64> = data.iter().map(|d| if d.1 { 1.0 } else { 0.0 }).collect();
        labels[0] = 1.0;
        labels[1] = 0.0;
        let a = roc_auc(&scores, &labels).unwrap();
        let t: Vec<f64> = scores.iter().map(|s| (scale * s + shift).exp()).collect();
        prop_assert_eq!(roc_auc(&t, &labels).unwrap(), a);
        prop_assert!((0.0..=1.0).contains(&a));
        let ap = average_precision(&scores, &labels).unwrap();
        prop_assert!(ap > 0.0 && ap <= 1.0);
    }

    #[test]
    fn results_reload_exactly(
        rows in prop::collection::vec((any::<u32>(), 0usize..100_000, -1e6f64..1e6, any::<u32>()), 0..20),
    ) {
        let records: Vec<ResultRecord> = rows
            .iter()
            .map(|&(seed, step, v, ms)| ResultRecord {
                config_hash: "00ff".into(),
                variant: "at:mask-n:2".into(),
                task: "triangle-count-reg".into(),
                size: "L2-d8-f8-h2".into(),
                seed: seed as u64,
                step,
                split: "val".into(),
                metric: "mae".into(),
                value: bench::results::round_sig6(v),
                wall_ms: ms as u64,
            })
            .collect();
        let text = to_csv_string(&records);
        prop_assert!(text.starts_with("config_hash,variant,task,size,seed,step,split,metric,value,wall_ms\n"));
        prop_assert_eq!(parse_csv(&text, Path::new("mem")).unwrap(), records);
    }
}

#[test]
fn adam_matches_scripted_recurrence_over_ten_steps() {
    let cfg = AdamConfig { beta1: 0.9, beta2: 0.99, eps: 1e-8, weight_decay: 1e-3, clip_norm: 5.0 };
    let (a, c, lr) = (2.0, -0.3, 0.02);
    let mut p = vec![Matrix::from_raw(1, 1, vec![1.5])];
    let mut s = TrainState::new(&p);
    let (mut x, mut m, mut v) = (1.5f64, 0.0, 0.0);
    for t in 1..=10 {
        let g = a * (x - c);
        let gm = Matrix::from_raw(1, 1, vec![a * (p[0].get(0, 0) - c)]);
        s.adam_step(&mut p, &[gm], &cfg, lr).unwrap();
        m = 0.9 * m + 0.1 * g;
        v = 0.99 * v + 0.01 * g * g;
        let step = (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.99f64.powi(t))).sqrt() + 1e-8);
        x -= lr * step + lr * 1e-3 * x;
        assert!((p[0].get(0, 0) - x).abs() < 1e-12);
    }
    assert_eq!(s.step, 10);
}

#[test]
fn padding_leaves_batch_loss_and_metric_unchanged() {
    for (task, variant) in [(TaskName::SpdToAnchorReg, "at:spb"), (TaskName::BipartiteCls, "ga:parallel")] {
        let cfg = tiny(task, variant, 3);
        let model = GraphTransformer::new(model_spec(&cfg).unwrap(), 3).unwrap();
        let splits = prepare_splits(&model, &cfg).unwrap();
        let items: Vec<_> = splits.train.iter().take(6).collect();
        let loss_at = |extra: usize| {
            let batch = Batch::new(items.clone());
            let total = batch.n_max + extra;
            let batch = batch.with_padding(total);
            let mut tape = Tape::new();
            let b = model.bind(&mut tape, false);
            let l = batch_loss(&model, &mut tape, &b, &batch, cfg.task.name.loss(), &mut ForwardCtx::eval()).unwrap();
            tape.value(l).get(0, 0)
        };
        let base = loss_at(0);
        for extra in [1, 4, 9] {
            assert!((loss_at(extra) - base).abs() < 1e-9, "{variant}");
        }
        let mask = Batch::new(items.clone()).with_padding(25).pad_mask();
        assert!(mask.iter().zip(&items).all(|(m, e)| m.iter().filter(|&&b| b).count() == e.input.n()));
        let metric = cfg.task.metric;
        let v = evaluate(&model, &splits.val, metric, cfg.task.name.task_type());
        assert!(v.is_ok() || matches!(v, Err(bench::BenchError::UndefinedMetric { .. })));
    }
}

#[test]
fn runs_are_pure_functions_of_the_config() {
    let cfg = tiny(TaskName::SpdToAnchorReg, "pe:eig:4", 8);
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    let strip = |r: &[ResultRecord]| r.iter().map(|x| ResultRecord { wall_ms: 0, ..x.clone() }).collect::<Vec<_>>();
    assert_eq!(strip(&a.records), strip(&b.records));
    assert_eq!(a.model.params(), b.model.params());
    // 3 evaluation events, each a train loss and a val metric, then test.
    assert_eq!(a.records.len(), 7);
    assert!(a.records.iter().all(|r| r.config_hash == cfg.hash() && r.seed == 8));
    let mut other = cfg.clone();
    other.seed = 9;
    let c = run_experiment(&other).unwrap();
    assert_ne!(strip(&a.records)[1].value, strip(&c.records)[1].value);
}

#[test]
fn early_stop_ends_training() {
    let mut cfg = tiny(TaskName::NodeDegreeReg, "vanilla", 1);
    cfg.train.early_stop = Some(10.0);
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.steps, cfg.train.eval_interval);
    assert_eq!(out.records.last().unwrap().split, "test");
}

#[test]
fn binary_tasks_train_with_logits() {
    let mut cfg = tiny(TaskName::ConnectivityCls, "at:mask-1", 2);
    cfg.task.instances = 80;
    let out = run_experiment(&cfg).unwrap();
    let auc = out.final_value(Split::Test, MetricKind::RocAuc);
    assert!(auc.is_some_and(|a| (0.0..=1.0).contains(&a)));
    assert_eq!(cfg.task.name.loss(), LossKind::BceWithLogits);
}

#[test]
fn saved_runs_reload_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(TaskName::TriangleCountReg, "at:pma", 4);
    let out = run_experiment(&cfg).unwrap();
    runner::save_run(dir.path(), &cfg, &out).unwrap();
    let (back, model) = runner::load_run(dir.path()).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(model.params(), out.model.params());
    let rec = runner::eval_saved(dir.path(), Split::Test).unwrap();
    assert_eq!(Some(rec.value), out.final_value(Split::Test, MetricKind::Mae));
    assert_eq!(rec.step, out.steps);
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_graphtx"))
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[task]\nname = \"node-degree-reg\"\n[train]\nbatch_size = 0\n").unwrap();
    let o = cli().args(["train", "--config"]).arg(&bad).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("train.batch_size"));

    let missing = cli().args(["train", "--config", "/nonexistent.toml", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(missing.status.code(), Some(1));

    let graph = dir.path().join("g.json");
    std::fs::write(&graph, r#"{"directed": false, "graphs": [{"num_nodes": 3, "node_features": [[1], [1], [1]], "edges": [[0, 1], [1, 2]]}]}"#).unwrap();
    let o = cli().args(["encode", "--pe", "svd", "--size", "5", "--graph"]).arg(&graph).output().unwrap();
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let o = cli().args(["encode", "--pe", "eig", "--size", "2", "--graph"]).arg(&graph).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 4);
    let o = cli().args(["inspect", "--at", "spb", "--graph"]).arg(&graph).output().unwrap();
    assert!(String::from_utf8_lossy(&o.stdout).contains("0,spd,0,0,1,2"));
    let o = cli().args(["inspect", "--at", "nope", "--graph"]).arg(&graph).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn cli_train_eval_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(
        &cfg,
        "seed = 5\nvariant = \"at:mask-n:2\"\n[model]\nlayers = 1\nhidden = 8\nffn_hidden = 8\nheads = 2\n\
         [task]\nname = \"triangle-count-reg\"\ninstances = 30\n\
         [train]\npreset = \"desk\"\nmax_steps = 10\nwarmup_steps = 2\neval_interval = 5\nbatch_size = 4\n",
    )
    .unwrap();
    let out = dir.path().join("run");
    let o = cli().args(["train", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["results.csv", "manifest.toml", "checkpoint.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let before = bench::results::read_csv(&out.join("results.csv")).unwrap();
    let o = cli().args(["eval", "--split", "test", "--checkpoint"]).arg(&out).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let after = bench::results::read_csv(&out.join("results.csv")).unwrap();
    assert_eq!(after.len(), before.len() + 1);
    assert_eq!(after.last().unwrap().value, before.last().unwrap().value);

    let grid = dir.path().join("grid.toml");
    std::fs::write(
        &grid,
        "[task]\nname = \"triangle-count-reg\"\ninstances = 60\n\
         [train]\npreset = \"desk\"\nmax_steps = 4\nwarmup_steps = 1\nbatch_size = 2\n\
         [grid]\nvariants = [\"vanilla\", \"at:spb\"]\nsizes = [\"small\"]\nseeds = [1, 2]\n",
    )
    .unwrap();
    let o = cli().args(["sweep", "--grid"]).arg(&grid).arg("--out").arg(dir.path().join("sweep")).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = String::from_utf8_lossy(&o.stdout);
    assert_eq!(table.lines().count(), 3);
    assert!(table.lines().nth(2).unwrap().starts_with("at:spb"));
    let rows = bench::results::read_csv(&dir.path().join("sweep/results.csv")).unwrap();
    assert_eq!(rows.iter().filter(|r| r.split == "test").count(), 4);
}
