//! Losses and evaluation metrics.

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use numkit::{Matrix, NodeId, Tape};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Mae,
    BceWithLogits,
    CrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Mae,
    RocAuc,
    Ap,
    Accuracy,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Mae => "mae",
            MetricKind::RocAuc => "roc_auc",
            MetricKind::Ap => "ap",
            MetricKind::Accuracy => "accuracy",
        }
    }

    /// Whether larger values are better.
    pub fn higher_is_better(self) -> bool {
        !matches!(self, MetricKind::Mae)
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mae" => Ok(MetricKind::Mae),
            "roc_auc" => Ok(MetricKind::RocAuc),
            "ap" => Ok(MetricKind::Ap),
            "accuracy" => Ok(MetricKind::Accuracy),
            _ => Err(BenchError::config("task.metric", format!("unknown metric `{s}`"))),
        }
    }
}

/// Targets of one instance, in the layout the loss expects.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// Regression values or 0/1 labels, one per output entry.
    Values(Rc<Matrix>),
    /// One class index per output row.
    Classes(Rc<[usize]>),
}

impl Target {
    pub fn len(&self) -> usize {
        match self {
            Target::Values(m) => m.len(),
            Target::Classes(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Mean loss over the non-pad entries of `pred`, recorded on the tape.
/// `mask` holds 1 for real entries and 0 for padding.
pub fn loss(tape: &mut Tape, kind: LossKind, pred: NodeId, target: &Target, mask: Rc<[f64]>) -> Result<NodeId> {
    Ok(match (kind, target) {
        (LossKind::Mae, Target::Values(t)) => tape.mae_loss(pred, t.clone(), mask)?,
        (LossKind::BceWithLogits, Target::Values(t)) => tape.bce_with_logits_loss(pred, t.clone(), mask)?,
        (LossKind::CrossEntropy, Target::Classes(c)) => tape.cross_entropy_loss(pred, c.clone(), mask)?,
        _ => return Err(BenchError::Shape(format!("{kind:?} loss does not accept this target layout"))),
    })
}

/// Eager [`loss`] with every entry real.
pub fn loss_value(kind: LossKind, pred: &Matrix, target: &Target) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(pred.clone());
    let n = match target {
        Target::Classes(c) => c.len(),
        Target::Values(_) => pred.len(),
    };
    let l = loss(&mut tape, kind, p, target, Rc::from(vec![1.0; n]))?;
    Ok(tape.value(l).get(0, 0))
}

fn check_lengths(scores: &[f64], labels: &[f64]) -> Result<()> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(BenchError::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    Ok(())
}

fn binary_counts(metric: &'static str, labels: &[f64]) -> Result<(usize, usize)> {
    let pos = labels.iter().filter(|&&y| y > 0.5).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(BenchError::UndefinedMetric { metric, reason: "labels hold a single class".into() });
    }
    Ok((pos, neg))
}

pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_lengths(pred, target)?;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// Probability that a random positive outranks a random negative; ties count ½.
pub fn roc_auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let (pos, neg) = binary_counts("roc_auc", labels)?;
    // Rank-sum with midranks for tied scores.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] > 0.5 {
                rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// `Σ (R_k − R_{k−1}) · P_k` over the ranking by descending score, ties
/// broken by ascending index.
pub fn average_precision(scores: &[f64], labels: &[f64]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let (pos, _) = binary_counts("ap", labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    // Literal sum of (R_k - R_{k-1}) * P_k; negatives add an exact zero term.
    let (mut hits, mut prev_recall, mut ap) = (0usize, 0.0, 0.0);
    for (k, &i) in order.iter().enumerate() {
        if labels[i] > 0.5 {
            hits += 1;
        }
        let recall = hits as f64 / pos as f64;
        ap += (recall - prev_recall) * (hits as f64 / (k + 1) as f64);
        prev_recall = recall;
    }
    Ok(ap)
}

pub fn accuracy(pred: &[f64], labels: &[f64]) -> Result<f64> {
    check_lengths(pred, labels)?;
    let right = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(right as f64 / pred.len() as f64)
}

/// Evaluates `kind`. Binary metrics take raw scores; accuracy takes
/// predicted labels.
pub fn metric(kind: MetricKind, scores: &[f64], labels: &[f64]) -> Result<f64> {
    match kind {
        MetricKind::Mae => mae(scores, labels),
        MetricKind::RocAuc => roc_auc(scores, labels),
        MetricKind::Ap => average_precision(scores, labels),
        MetricKind::Accuracy => accuracy(scores, labels),
    }
}
