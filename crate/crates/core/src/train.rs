//! Losses, metrics, data splits and the training loop.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{AggregateError, AggregationConfig};
use crate::hgraph::{FeatureMatrix, HgraphError, Hypergraph};
use crate::matrix::Matrix;
use crate::model::{
    forward, forward_on_tape, predict_unseen, ForwardMode, GraphClassifier, ModelError, ModelParams, ModelSpec, Nonlinearity,
};
use crate::optim::{AdamConfig, AdamState, OptimError};
use crate::tensor::{Tape, TensorError, Var};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("no labeled nodes in the training mask")]
    NoLabeledNodes,
    #[error("insufficient labels: {0}")]
    InsufficientLabels(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("invalid masks: {0}")]
    InvalidMask(&'static str),
    #[error("labels cover {found} nodes but the hypergraph has {expected}")]
    LabelCount { expected: usize, found: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Hypergraph(#[from] HgraphError),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    MultiClassNode,
    BinaryNode,
    MultiLabelNode,
    HypergraphLevel,
}

impl Task {
    /// Name of the headline metric reported for the task.
    pub fn metric_name(self) -> &'static str {
        match self {
            Task::MultiClassNode | Task::HypergraphLevel => "accuracy",
            Task::BinaryNode => "auc_roc",
            Task::MultiLabelNode => "average_precision",
        }
    }
}

/// Node labels; `None` marks an unlabeled node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Labels {
    Class { num_classes: usize, y: Vec<Option<usize>> },
    MultiLabel { num_labels: usize, y: Vec<Option<Vec<bool>>> },
}

impl Labels {
    pub fn classes(num_classes: usize, y: Vec<usize>) -> Self {
        Labels::Class {
            num_classes,
            y: y.into_iter().map(Some).collect(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Labels::Class { y, .. } => y.len(),
            Labels::MultiLabel { y, .. } => y.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_labeled(&self, v: usize) -> bool {
        match self {
            Labels::Class { y, .. } => y.get(v).is_some_and(Option::is_some),
            Labels::MultiLabel { y, .. } => y.get(v).is_some_and(Option::is_some),
        }
    }

    pub fn labeled_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&v| self.is_labeled(v)).collect()
    }

    pub fn class_of(&self, v: usize) -> Option<usize> {
        match self {
            Labels::Class { y, .. } => y.get(v).copied().flatten(),
            Labels::MultiLabel { .. } => None,
        }
    }

    /// Stratum used for splitting: the class, or the first positive label.
    fn stratum(&self, v: usize) -> usize {
        match self {
            Labels::Class { y, .. } => y[v].unwrap_or(usize::MAX),
            Labels::MultiLabel { y, .. } => y[v].as_ref().and_then(|l| l.iter().position(|&b| b)).unwrap_or(usize::MAX),
        }
    }

    /// Number of output columns the task needs.
    pub fn output_dim(&self, task: Task) -> usize {
        match (self, task) {
            (_, Task::BinaryNode) => 1,
            (Labels::Class { num_classes, .. }, _) => *num_classes,
            (Labels::MultiLabel { num_labels, .. }, _) => *num_labels,
        }
    }

    /// Labels of the nodes in `keep`, in that order.
    pub fn select(&self, keep: &[usize]) -> Labels {
        match self {
            Labels::Class { num_classes, y } => Labels::Class {
                num_classes: *num_classes,
                y: keep.iter().map(|&v| y[v]).collect(),
            },
            Labels::MultiLabel { num_labels, y } => Labels::MultiLabel {
                num_labels: *num_labels,
                y: keep.iter().map(|&v| y[v].clone()).collect(),
            },
        }
    }

    pub fn check_task(&self, task: Task) -> Result<(), TrainError> {
        match (self, task) {
            (Labels::Class { num_classes, .. }, Task::BinaryNode) if *num_classes != 2 => {
                Err(TrainError::InvalidConfig("binary tasks need exactly two classes"))
            }
            (Labels::Class { .. }, Task::MultiLabelNode) => Err(TrainError::InvalidConfig("multi-label task needs multi-label targets")),
            (Labels::MultiLabel { .. }, Task::MultiClassNode | Task::BinaryNode) => {
                Err(TrainError::InvalidConfig("class task needs single-class labels"))
            }
            _ => Ok(()),
        }
    }
}

/// Node ids of the train, validation and test sets.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Masks {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Masks {
    /// Masks must be pairwise disjoint, in range and labeled.
    pub fn validate(&self, labels: &Labels) -> Result<(), TrainError> {
        let mut seen = vec![false; labels.len()];
        for &v in self.train.iter().chain(&self.val).chain(&self.test) {
            if v >= labels.len() {
                return Err(TrainError::InvalidMask("node id out of range"));
            }
            if core::mem::replace(&mut seen[v], true) {
                return Err(TrainError::InvalidMask("masks overlap"));
            }
            if !labels.is_labeled(v) {
                return Err(TrainError::InvalidMask("mask contains an unlabeled node"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitSpec {
    /// Stratified random split; the test set receives the remaining labeled nodes.
    Ratio {
        train: f64,
        val: f64,
    },
    Masks(Masks),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub hidden: Vec<usize>,
    pub nonlinearity: Nonlinearity,
    pub aggregation: AggregationConfig,
    /// `false` trains the aggregation-free ablation.
    pub message_passing: bool,
    pub seeds: Vec<u64>,
    pub split: SplitSpec,
    pub task: Task,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 250,
            lr: 0.01,
            weight_decay: 0.0005,
            dropout: 0.5,
            hidden: vec![16],
            nonlinearity: Nonlinearity::Relu,
            aggregation: AggregationConfig::default(),
            message_passing: true,
            seeds: vec![0],
            split: SplitSpec::Ratio { train: 0.1, val: 0.1 },
            task: Task::MultiClassNode,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be at least 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(TrainError::InvalidConfig("lr and weight decay must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TrainError::InvalidConfig("dropout must lie in [0, 1)"));
        }
        if self.hidden.contains(&0) {
            return Err(TrainError::InvalidConfig("hidden sizes must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(TrainError::InvalidConfig("at least one seed is required"));
        }
        if let SplitSpec::Ratio { train, val } = self.split {
            let ok = train > 0.0 && train < 1.0 && (0.0..1.0).contains(&val) && train + val < 1.0;
            if !ok {
                return Err(TrainError::InvalidConfig("split ratios must lie in (0, 1) and sum below 1"));
            }
        }
        self.aggregation.validate()?;
        Ok(())
    }

    fn model_spec(&self, input_dim: usize, output_dim: usize) -> ModelSpec {
        ModelSpec {
            dropout: self.dropout,
            nonlinearity: self.nonlinearity,
            adaptive: self.aggregation.adaptive,
            message_passing: self.message_passing,
            ..ModelSpec::new(input_dim, self.hidden.clone(), output_dim)
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

/// Training loss of `scores` on the nodes in `rows`: softmax cross-entropy
/// for class tasks, per-column logistic loss for binary and multi-label
/// tasks. Averaged over `rows`.
pub fn loss(tape: &mut Tape, scores: Var, labels: &Labels, rows: &[usize], task: Task) -> Result<Var, TrainError> {
    if rows.is_empty() || rows.iter().any(|&v| !labels.is_labeled(v)) {
        return Err(TrainError::NoLabeledNodes);
    }
    let picked = tape.gather_rows(scores, rows)?;
    let out = match (labels, task) {
        (Labels::Class { y, .. }, Task::BinaryNode) => {
            let t = Matrix::from_fn(rows.len(), 1, |i, _| if y[rows[i]] == Some(1) { 1.0 } else { 0.0 });
            tape.sigmoid_bce(picked, &t)?
        }
        (Labels::Class { y, .. }, _) => {
            let t: Vec<usize> = rows.iter().map(|&v| y[v].expect("checked labeled")).collect();
            tape.softmax_cross_entropy(picked, &t)?
        }
        (Labels::MultiLabel { num_labels, y }, _) => {
            let t = Matrix::from_fn(rows.len(), *num_labels, |i, k| {
                if y[rows[i]].as_ref().expect("checked labeled")[k] {
                    1.0
                } else {
                    0.0
                }
            });
            tape.sigmoid_bce(picked, &t)?
        }
    };
    Ok(out)
}

/// Fraction of equal entries.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64
}

/// 1-based ranks of `scores` in ascending order, tied values sharing their
/// average rank.
fn average_ranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Area under the ROC curve from rank statistics (ties count one half).
/// `None` when either class is absent.
pub fn auc_roc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let ranks = average_ranks(scores);
    let r_pos: f64 = ranks.iter().zip(positive).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    let np = n_pos as f64;
    Some((r_pos - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// Average precision: `Σ (R_k − R_{k−1}) P_k` over distinct score thresholds
/// in decreasing order, tied scores entering together. `None` without positives.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp, mut prev_recall, mut ap) = (0usize, 0usize, 0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Some(ap)
}

fn macro_average(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Metrics of one evaluation. Fields a task does not define are `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: Option<f64>,
    pub auc_roc: Option<f64>,
    pub average_precision: Option<f64>,
}

impl EvalMetrics {
    /// Headline metric for `task` (0 when undefined).
    pub fn primary(&self, task: Task) -> f64 {
        match task {
            Task::MultiClassNode | Task::HypergraphLevel => self.accuracy,
            Task::BinaryNode => self.auc_roc,
            Task::MultiLabelNode => self.average_precision,
        }
        .unwrap_or(0.0)
    }
}

/// Metrics of `scores` on `rows`. Multi-label accuracy is the fraction of
/// correct (node, label) decisions; AUC and AP are macro-averaged over labels.
pub fn score_metrics(scores: &Matrix, labels: &Labels, rows: &[usize], task: Task) -> EvalMetrics {
    if rows.is_empty() {
        return EvalMetrics::default();
    }
    match (labels, task) {
        (Labels::Class { y, .. }, Task::BinaryNode) => {
            let s: Vec<f64> = rows.iter().map(|&v| scores.get(v, 0)).collect();
            let pos: Vec<bool> = rows.iter().map(|&v| y[v] == Some(1)).collect();
            let pred: Vec<usize> = s.iter().map(|&z| usize::from(z > 0.0)).collect();
            let truth: Vec<usize> = pos.iter().map(|&p| usize::from(p)).collect();
            EvalMetrics {
                accuracy: Some(accuracy(&pred, &truth)),
                auc_roc: auc_roc(&s, &pos),
                average_precision: average_precision(&s, &pos),
            }
        }
        (Labels::Class { y, .. }, _) => {
            let pred: Vec<usize> = rows.iter().map(|&v| scores.argmax_row(v)).collect();
            let truth: Vec<usize> = rows.iter().map(|&v| y[v].unwrap_or(usize::MAX)).collect();
            EvalMetrics {
                accuracy: Some(accuracy(&pred, &truth)),
                ..EvalMetrics::default()
            }
        }
        (Labels::MultiLabel { num_labels, y }, _) => {
            let truth = |v: usize, k: usize| y[v].as_ref().is_some_and(|l| l[k]);
            let mut correct = 0usize;
            for &v in rows {
                for k in 0..*num_labels {
                    correct += usize::from((scores.get(v, k) > 0.0) == truth(v, k));
                }
            }
            let column = |k: usize| -> (Vec<f64>, Vec<bool>) {
                (
                    rows.iter().map(|&v| scores.get(v, k)).collect(),
                    rows.iter().map(|&v| truth(v, k)).collect(),
                )
            };
            EvalMetrics {
                accuracy: Some(correct as f64 / (rows.len() * num_labels.max(&1)) as f64),
                auc_roc: macro_average((0..*num_labels).map(|k| {
                    let (s, t) = column(k);
                    auc_roc(&s, &t)
                })),
                average_precision: macro_average((0..*num_labels).map(|k| {
                    let (s, t) = column(k);
                    average_precision(&s, &t)
                })),
            }
        }
    }
}

/// Evaluation-mode metrics of a trained model on `rows`.
pub fn evaluate(
    params: &ModelParams,
    h: &Hypergraph,
    x: &FeatureMatrix,
    labels: &Labels,
    rows: &[usize],
    task: Task,
    cfg: &AggregationConfig,
) -> Result<EvalMetrics, TrainError> {
    let scores = forward(h, x, params, cfg, ForwardMode::eval())?;
    Ok(score_metrics(&scores, labels, rows, task))
}

/// Splits `total` into parts proportional to `weights` (summing to `total`)
/// by largest remainder; ties go to the lower index.
fn apportion(total: usize, weights: &[usize]) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|&w| total as f64 * w as f64 / sum as f64).collect();
    let mut out: Vec<usize> = exact.iter().map(|&e| e as usize).collect();
    let mut left = total - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - out[b] as f64).total_cmp(&(exact[a] - out[a] as f64)).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if out[i] < weights[i] {
            out[i] += 1;
            left -= 1;
        }
    }
    out
}

/// Stratified random split of the labeled nodes: `round(train · n)` train
/// nodes and `round(val · n)` validation nodes, apportioned across classes
/// by largest remainder; every other labeled node is a test node. Each mask
/// is sorted.
pub fn make_splits(labels: &Labels, train: f64, val: f64, seed: u64) -> Result<Masks, TrainError> {
    let labeled = labels.labeled_nodes();
    let n = labeled.len();
    let n_train = libm::round(train * n as f64) as usize;
    let n_val = libm::round(val * n as f64) as usize;
    if n_train == 0 || n_train + n_val >= n {
        return Err(TrainError::InsufficientLabels(alloc::format!(
            "{n} labeled nodes cannot give {n_train} train and {n_val} validation nodes plus a test set"
        )));
    }
    let mut strata: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for v in labeled {
        strata.entry(labels.stratum(v)).or_default().push(v);
    }
    let mut rng = crate::rng_from_seed(seed);
    let groups: Vec<Vec<usize>> = strata
        .into_values()
        .map(|mut g| {
            g.shuffle(&mut rng);
            g
        })
        .collect();
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let train_counts = apportion(n_train, &sizes);
    let rest: Vec<usize> = sizes.iter().zip(&train_counts).map(|(s, t)| s - t).collect();
    let val_counts = apportion(n_val, &rest);
    let mut masks = Masks::default();
    for ((g, &t), &v) in groups.iter().zip(&train_counts).zip(&val_counts) {
        masks.train.extend_from_slice(&g[..t]);
        masks.val.extend_from_slice(&g[t..t + v]);
        masks.test.extend_from_slice(&g[t + v..]);
    }
    masks.train.sort_unstable();
    masks.val.sort_unstable();
    masks.test.sort_unstable();
    Ok(masks)
}

/// Seen/unseen split for inductive evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct InductiveSplit {
    /// Sub-hypergraph over the seen nodes, relabeled `seen[k] -> k`.
    pub h_train: Hypergraph,
    /// Original ids of the seen nodes (every node outside `masks.test`).
    pub seen: Vec<usize>,
    /// Train, validation (seen) and test (unseen) sets in original ids.
    pub masks: Masks,
}

impl InductiveSplit {
    /// Maps original ids of seen nodes to `h_train` ids.
    pub fn to_train_ids(&self, nodes: &[usize]) -> Vec<usize> {
        nodes.iter().map(|v| self.seen.binary_search(v).expect("node is seen")).collect()
    }

    /// Number of places where unseen nodes leak into the training view: the
    /// seen list, and every member of every `h_train` hyperedge mapped back
    /// to original ids. Zero by construction.
    pub fn exposure_count(&self) -> usize {
        let unseen = |v: &usize| self.masks.test.binary_search(v).is_ok();
        let in_seen = self.seen.iter().filter(|v| unseen(v)).count();
        let in_edges = self
            .h_train
            .hyperedges()
            .iter()
            .flatten()
            .filter(|&&k| unseen(&self.seen[k]))
            .count();
        in_seen + in_edges
    }
}

/// 1:3:1 stratified split into train, validation (seen) and test (unseen).
/// The unseen nodes are removed from every hyperedge of `h_train`; hyperedges
/// left with fewer than two members are dropped.
pub fn inductive_split(h: &Hypergraph, labels: &Labels, seed: u64) -> Result<InductiveSplit, TrainError> {
    if labels.len() != h.num_nodes() {
        return Err(TrainError::LabelCount {
            expected: h.num_nodes(),
            found: labels.len(),
        });
    }
    let masks = make_splits(labels, 0.2, 0.6, seed)?;
    let seen: Vec<usize> = (0..h.num_nodes()).filter(|v| masks.test.binary_search(v).is_err()).collect();
    let h_train = h.subhypergraph(&seen)?;
    Ok(InductiveSplit { h_train, seen, masks })
}

/// Per-seed metric values with their mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: Task,
    pub seeds: Vec<u64>,
    pub metric_name: String,
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub wall_clock_s: f64,
    /// Training loss per epoch, one curve per seed.
    #[serde(default)]
    pub loss_curves: Vec<Vec<f64>>,
}

impl MetricsReport {
    pub fn new(task: Task, seeds: Vec<u64>, values: Vec<f64>, wall_clock_s: f64, loss_curves: Vec<Vec<f64>>) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            task,
            seeds,
            metric_name: task.metric_name().into(),
            values,
            mean,
            std: libm::sqrt(var),
            wall_clock_s,
            loss_curves,
        }
    }
}

/// One training run: model, optimizer and the data it is bound to.
pub struct Trainer<'a> {
    h: &'a Hypergraph,
    x: &'a FeatureMatrix,
    labels: &'a Labels,
    train_rows: &'a [usize],
    cfg: &'a TrainConfig,
    seed: u64,
    params: ModelParams,
    adam: AdamState,
}

impl<'a> Trainer<'a> {
    pub fn new(
        h: &'a Hypergraph,
        x: &'a FeatureMatrix,
        labels: &'a Labels,
        train_rows: &'a [usize],
        cfg: &'a TrainConfig,
        seed: u64,
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        if cfg.task == Task::HypergraphLevel {
            return Err(TrainError::InvalidConfig("use train_graph_classifier for hypergraph-level tasks"));
        }
        labels.check_task(cfg.task)?;
        if labels.len() != h.num_nodes() {
            return Err(TrainError::LabelCount {
                expected: h.num_nodes(),
                found: labels.len(),
            });
        }
        if train_rows.is_empty() || train_rows.iter().any(|&v| !labels.is_labeled(v)) {
            return Err(TrainError::NoLabeledNodes);
        }
        let spec = cfg.model_spec(x.cols(), labels.output_dim(cfg.task));
        let params = ModelParams::init(spec, crate::derive_seed(seed, 0))?;
        let adam = AdamState::new(cfg.adam(), &params.store);
        Ok(Self {
            h,
            x,
            labels,
            train_rows,
            cfg,
            seed,
            params,
            adam,
        })
    }

    /// One epoch: training-mode forward with a fresh sampling/dropout seed,
    /// loss on the training rows, backward and an Adam step. Returns the loss.
    pub fn step(&mut self, epoch: usize) -> Result<f64, TrainError> {
        let mut tape = Tape::new();
        let mode = ForwardMode::train(crate::derive_seed(self.seed, 1 + epoch as u64));
        let scores = forward_on_tape(&mut tape, self.h, self.x, &self.params, &self.cfg.aggregation, mode)?;
        let l = loss(&mut tape, scores, self.labels, self.train_rows, self.cfg.task)?;
        let value = tape.value(l).get(0, 0);
        tape.backward(l, &mut self.params.store)?;
        self.adam.step(&mut self.params.store)?;
        Ok(value)
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }
}

/// Result of [`train_run`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub params: ModelParams,
    pub loss_curve: Vec<f64>,
    /// Headline validation metric after each epoch (empty without a validation set).
    pub val_curve: Vec<f64>,
    pub test: EvalMetrics,
}

/// Trains for `cfg.epochs` epochs on `masks.train` and evaluates on `masks.test`.
pub fn train_run(
    h: &Hypergraph,
    x: &FeatureMatrix,
    labels: &Labels,
    masks: &Masks,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<RunResult, TrainError> {
    masks.validate(labels)?;
    let mut trainer = Trainer::new(h, x, labels, &masks.train, cfg, seed)?;
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    let mut val_curve = Vec::new();
    for epoch in 0..cfg.epochs {
        loss_curve.push(trainer.step(epoch)?);
        if !masks.val.is_empty() {
            let m = evaluate(trainer.params(), h, x, labels, &masks.val, cfg.task, &cfg.aggregation)?;
            val_curve.push(m.primary(cfg.task));
        }
    }
    let params = trainer.into_params();
    let test = evaluate(&params, h, x, labels, &masks.test, cfg.task, &cfg.aggregation)?;
    Ok(RunResult {
        params,
        loss_curve,
        val_curve,
        test,
    })
}

/// Masks for one seed under `cfg.split`.
pub fn resolve_masks(labels: &Labels, cfg: &TrainConfig, seed: u64) -> Result<Masks, TrainError> {
    match &cfg.split {
        SplitSpec::Ratio { train, val } => make_splits(labels, *train, *val, seed),
        SplitSpec::Masks(m) => Ok(m.clone()),
    }
}

/// Trains once per seed in `cfg.seeds` and reports the headline test metric.
/// Returns the model of the first seed. `clock` returns seconds and only
/// feeds `wall_clock_s`.
pub fn train_model(
    h: &Hypergraph,
    x: &FeatureMatrix,
    labels: &Labels,
    cfg: &TrainConfig,
    clock: Option<&dyn Fn() -> f64>,
) -> Result<(ModelParams, MetricsReport), TrainError> {
    cfg.validate()?;
    let start = clock.map_or(0.0, |c| c());
    let mut first = None;
    let mut values = Vec::new();
    let mut curves = Vec::new();
    for &seed in &cfg.seeds {
        let masks = resolve_masks(labels, cfg, seed)?;
        let run = train_run(h, x, labels, &masks, cfg, seed)?;
        values.push(run.test.primary(cfg.task));
        curves.push(run.loss_curve);
        first.get_or_insert(run.params);
    }
    let elapsed = clock.map_or(0.0, |c| c() - start);
    let report = MetricsReport::new(cfg.task, cfg.seeds.clone(), values, elapsed, curves);
    Ok((first.expect("at least one seed"), report))
}

/// Outcome of [`train_inductive`].
#[derive(Debug, Clone, PartialEq)]
pub struct InductiveOutcome {
    pub params: ModelParams,
    /// Metrics on the validation (seen) nodes, evaluated on `h_train`.
    pub seen: EvalMetrics,
    /// Metrics on the test (unseen) nodes via [`predict_unseen`] on `h_full`.
    pub unseen: EvalMetrics,
    pub exposure_count: usize,
}

/// Trains on the seen sub-hypergraph only, then scores unseen nodes on the
/// full hypergraph.
pub fn train_inductive(
    split: &InductiveSplit,
    h_full: &Hypergraph,
    x_full: &FeatureMatrix,
    labels: &Labels,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<InductiveOutcome, TrainError> {
    let x_train = x_full.select_rows(&split.seen);
    let labels_train = labels.select(&split.seen);
    let masks_train = Masks {
        train: split.to_train_ids(&split.masks.train),
        val: Vec::new(),
        test: split.to_train_ids(&split.masks.val),
    };
    let run = train_run(&split.h_train, &x_train, &labels_train, &masks_train, cfg, seed)?;
    let unseen_scores = predict_unseen(h_full, x_full, &run.params, &cfg.aggregation, &split.masks.test)?;
    let unseen_labels = labels.select(&split.masks.test);
    let rows: Vec<usize> = (0..split.masks.test.len()).collect();
    let unseen = score_metrics(&unseen_scores, &unseen_labels, &rows, cfg.task);
    Ok(InductiveOutcome {
        params: run.params,
        seen: run.test,
        unseen,
        exposure_count: split.exposure_count(),
    })
}

/// Settings of [`runtime_scaling_probe`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub edge_size: usize,
    pub degree: usize,
    pub feature_dim: usize,
    pub hidden: usize,
    pub classes: usize,
    /// Timed epochs per size; the median is reported.
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            edge_size: 4,
            degree: 3,
            feature_dim: 16,
            hidden: 16,
            classes: 4,
            epochs: 7,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub nodes: usize,
    /// `Σ_e |e|`.
    pub incidence: usize,
    pub epoch_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub points: Vec<ScalingPoint>,
    /// Least-squares slope of `ln(epoch_seconds)` against `ln(incidence)`.
    pub slope: f64,
}

/// Least-squares slope of `ys` against `xs`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Median per-epoch training time on regular uniform hypergraphs with
/// `sizes[i]` nodes (rounded so that `nodes · degree` divides by the edge
/// size), regressed log-log against `N = Σ|e|`. `clock` returns seconds.
pub fn runtime_scaling_probe(
    sizes: &[usize],
    probe: &ProbeConfig,
    train: &TrainConfig,
    clock: &dyn Fn() -> f64,
) -> Result<ScalingReport, TrainError> {
    if sizes.len() < 4 {
        return Err(TrainError::InvalidConfig("the scaling probe needs at least four sizes"));
    }
    let lo = *sizes.iter().min().expect("non-empty");
    let hi = *sizes.iter().max().expect("non-empty");
    if lo == 0 || hi < 8 * lo {
        return Err(TrainError::InvalidConfig("probe sizes must span at least a factor of 8"));
    }
    if probe.epochs == 0 {
        return Err(TrainError::InvalidConfig("probe needs at least one timed epoch"));
    }
    let cfg = TrainConfig {
        hidden: vec![probe.hidden],
        epochs: probe.epochs,
        task: Task::MultiClassNode,
        ..train.clone()
    };
    let mut points = Vec::new();
    for (i, &size) in sizes.iter().enumerate() {
        let step = probe.edge_size / gcd(probe.edge_size, probe.degree);
        let n = size.div_ceil(step).max(1) * step;
        let n = n.max(probe.edge_size);
        let mut rng = crate::rng_from_seed(crate::derive_seed(probe.seed, i as u64));
        let h = crate::synth::regular_uniform_hypergraph(n, probe.edge_size, probe.degree, &mut rng);
        let x = crate::synth::random_features(n, probe.feature_dim, &mut rng);
        let labels = Labels::classes(probe.classes, (0..n).map(|v| v % probe.classes).collect());
        let rows: Vec<usize> = (0..n).collect();
        let mut trainer = Trainer::new(&h, &x, &labels, &rows, &cfg, probe.seed)?;
        trainer.step(0)?;
        let mut times = Vec::with_capacity(probe.epochs);
        for epoch in 0..probe.epochs {
            let t0 = clock();
            trainer.step(epoch + 1)?;
            times.push(clock() - t0);
        }
        times.sort_by(f64::total_cmp);
        points.push(ScalingPoint {
            nodes: n,
            incidence: h.total_incidence(),
            epoch_seconds: times[times.len() / 2],
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| libm::log(p.incidence as f64)).collect();
    let ys: Vec<f64> = points.iter().map(|p| libm::log(p.epoch_seconds.max(1e-12))).collect();
    Ok(ScalingReport {
        slope: fit_slope(&xs, &ys),
        points,
    })
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// One labeled hypergraph of a hypergraph-level dataset.
pub type GraphSample = (Hypergraph, FeatureMatrix, usize);

/// Outcome of [`train_graph_classifier`].
#[derive(Debug, Clone, PartialEq)]
pub struct GraphRun {
    pub model: GraphClassifier,
    pub loss_curve: Vec<f64>,
    pub test_accuracy: f64,
}

/// Hypergraph-level classification: node model, mean-pool readout and a
/// dense head, trained full-batch on the graphs in `train`.
pub fn train_graph_classifier(
    graphs: &[GraphSample],
    num_classes: usize,
    train: &[usize],
    test: &[usize],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<GraphRun, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::NoLabeledNodes);
    }
    if train.iter().chain(test).any(|&i| i >= graphs.len()) {
        return Err(TrainError::InvalidMask("graph index out of range"));
    }
    let input_dim = graphs[0].1.cols();
    let width = *cfg.hidden.last().unwrap_or(&16);
    let spec = cfg.model_spec(input_dim, width);
    let mut model = GraphClassifier::init(spec, num_classes, crate::derive_seed(seed, 0))?;
    let mut adam = AdamState::new(cfg.adam(), &model.nodes.store);
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let mut total: Option<Var> = None;
        for (k, &i) in train.iter().enumerate() {
            let (h, x, y) = &graphs[i];
            let mode = ForwardMode::train(crate::derive_seed(seed, ((epoch as u64) << 32) | k as u64));
            let s = model.forward_on_tape(&mut tape, h, x, &cfg.aggregation, mode)?;
            let l = tape.softmax_cross_entropy(s, &[*y])?;
            total = Some(match total {
                Some(t) => tape.add(t, l)?,
                None => l,
            });
        }
        let l = tape.scale(total.expect("train is non-empty"), 1.0 / train.len() as f64)?;
        loss_curve.push(tape.value(l).get(0, 0));
        tape.backward(l, &mut model.nodes.store)?;
        adam.step(&mut model.nodes.store)?;
    }
    let mut correct = 0;
    for &i in test {
        let (h, x, y) = &graphs[i];
        let mut tape = Tape::new();
        let s = model.forward_on_tape(&mut tape, h, x, &cfg.aggregation, ForwardMode::eval())?;
        correct += usize::from(tape.value(s).argmax_row(0) == *y);
    }
    let test_accuracy = if test.is_empty() { 0.0 } else { correct as f64 / test.len() as f64 };
    Ok(GraphRun {
        model,
        loss_curve,
        test_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_check, GradCheckConfig};
    use crate::synth::{planted_partition, PlantedConfig};

    #[test]
    fn defaults_match_the_reference_setup() {
        let c = TrainConfig::default();
        assert_eq!((c.epochs, c.lr, c.weight_decay, c.dropout), (250, 0.01, 0.0005, 0.5));
        assert_eq!(c.hidden, vec![16]);
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            split: SplitSpec::Ratio { train: 1.2, val: 0.0 },
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn loss_examples() {
        let labels = Labels::classes(3, vec![0, 1, 2]);
        let mut tape = Tape::new();
        let z = tape.leaf(Matrix::zeros(3, 3), false);
        let l = loss(&mut tape, z, &labels, &[0, 1, 2], Task::MultiClassNode).unwrap();
        assert!((tape.value(l).get(0, 0) - libm::log(3.0)).abs() < 1e-12);
        let sharp = Matrix::from_fn(3, 3, |i, j| if i == j { 50.0 } else { -50.0 });
        let z = tape.leaf(sharp, false);
        let l = loss(&mut tape, z, &labels, &[0, 1, 2], Task::MultiClassNode).unwrap();
        assert!(tape.value(l).get(0, 0) < 1e-20);
        assert!(matches!(
            loss(&mut tape, z, &labels, &[], Task::MultiClassNode),
            Err(TrainError::NoLabeledNodes)
        ));
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let h = Hypergraph::new(6, &[vec![0, 1, 2], vec![2, 3, 4], vec![4, 5, 0]]).unwrap();
        let x = Matrix::from_fn(6, 3, |i, j| 0.2 + ((i + 2 * j) % 5) as f64 * 0.15);
        let labels = Labels::classes(2, vec![0, 1, 0, 1, 0, 1]);
        let spec = ModelSpec {
            dropout: 0.0,
            ..ModelSpec::new(3, vec![4], 2)
        };
        let mut params = ModelParams::init(spec, 9).unwrap();
        let p0 = params.clone();
        let cfg = AggregationConfig::power(2.0);
        let f = |store: &crate::tensor::ParamStore, tape: &mut Tape| {
            let p = ModelParams::from_store(p0.spec.clone(), store.clone()).expect("same layout");
            let z = forward_on_tape(tape, &h, &x, &p, &cfg, ForwardMode::eval()).map_err(|e| match e {
                ModelError::Tensor(t) => t,
                _ => TensorError::InvalidArgument {
                    op: "forward",
                    reason: "model error",
                },
            })?;
            let picked = tape.gather_rows(z, &[0, 1, 2, 3])?;
            tape.softmax_cross_entropy(picked, &[0, 1, 0, 1])
        };
        let _ = &labels;
        let r = finite_diff_check(&f, &mut params.store, &GradCheckConfig::default()).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn auc_and_ap_examples() {
        let s = [0.9, 0.8, 0.3, 0.1];
        let y = [true, true, false, false];
        assert_eq!(auc_roc(&s, &y), Some(1.0));
        assert_eq!(average_precision(&s, &y), Some(1.0));
        // all tied: AUC is one half, AP is the positive rate
        assert_eq!(auc_roc(&[0.5; 4], &y), Some(0.5));
        assert_eq!(average_precision(&[0.5; 4], &y), Some(0.5));
        assert_eq!(auc_roc(&s, &[true; 4]), None);
        // hand-computed: ranking + - + - gives AP = (1 + 2/3)/2
        let ap = average_precision(&[4.0, 3.0, 2.0, 1.0], &[true, false, true, false]).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(auc_roc(&[4.0, 3.0, 2.0, 1.0], &[true, false, true, false]), Some(0.75));
    }

    #[test]
    fn random_scores_give_auc_near_one_half() {
        use rand::Rng;
        let mut rng = crate::rng_from_seed(4);
        let s: Vec<f64> = (0..1000).map(|_| rng.gen()).collect();
        let y: Vec<bool> = (0..1000).map(|i| i % 2 == 0).collect();
        let auc = auc_roc(&s, &y).unwrap();
        assert!((auc - 0.5).abs() < 0.05, "{auc}");
    }

    #[test]
    fn constant_prediction_accuracy_is_one_over_k() {
        let truth: Vec<usize> = (0..90).map(|i| i % 3).collect();
        assert!((accuracy(&[0; 90], &truth) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn split_sizes() {
        let labels = Labels::classes(7, (0..2708).map(|v| v % 7).collect());
        let m = make_splits(&labels, 0.054, 0.0, 1).unwrap();
        assert_eq!(m.train.len(), 146);
        m.validate(&labels).unwrap();
        assert_eq!(m.train.len() + m.test.len(), 2708);

        let labels = Labels::classes(4, (0..1000).map(|v| v % 4).collect());
        let m = make_splits(&labels, 0.2, 0.6, 2).unwrap();
        assert_eq!((m.train.len(), m.val.len(), m.test.len()), (200, 600, 200));
        for c in 0..4 {
            assert_eq!(m.train.iter().filter(|&&v| v % 4 == c).count(), 50);
        }
        assert!(make_splits(&Labels::classes(2, vec![0, 1]), 0.1, 0.0, 0).is_err());
    }

    #[test]
    fn inductive_split_hides_unseen_nodes() {
        let p = planted_partition(&PlantedConfig::default(), 3);
        let labels = Labels::classes(2, p.labels.clone());
        let s = inductive_split(&p.hypergraph, &labels, 5).unwrap();
        assert_eq!((s.masks.train.len(), s.masks.val.len(), s.masks.test.len()), (40, 120, 40));
        assert_eq!(s.exposure_count(), 0);
        assert_eq!(s.h_train.num_nodes(), 160);
        for e in s.h_train.hyperedges() {
            assert!(e.len() >= 2);
            for &k in e {
                assert!(s.masks.test.binary_search(&s.seen[k]).is_err());
            }
        }
    }

    fn planted_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            split: SplitSpec::Ratio { train: 0.1, val: 0.0 },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn loss_decreases_on_planted_fixture() {
        let p = planted_partition(&PlantedConfig::default(), 1);
        let labels = Labels::classes(2, p.labels.clone());
        let cfg = planted_cfg(20);
        let masks = resolve_masks(&labels, &cfg, 0).unwrap();
        let run = train_run(&p.hypergraph, &p.features, &labels, &masks, &cfg, 0).unwrap();
        let head: f64 = run.loss_curve[..5].iter().sum();
        let tail: f64 = run.loss_curve[15..].iter().sum();
        assert!(tail < head, "{:?}", run.loss_curve);
    }

    #[test]
    fn same_seed_same_report_and_zero_lr_keeps_init() {
        let p = planted_partition(&PlantedConfig::default(), 2);
        let labels = Labels::classes(2, p.labels.clone());
        let cfg = planted_cfg(5);
        let a = train_model(&p.hypergraph, &p.features, &labels, &cfg, None).unwrap();
        let b = train_model(&p.hypergraph, &p.features, &labels, &cfg, None).unwrap();
        assert_eq!(a, b);

        let frozen = TrainConfig { lr: 0.0, ..cfg };
        let masks = resolve_masks(&labels, &frozen, 0).unwrap();
        let run = train_run(&p.hypergraph, &p.features, &labels, &masks, &frozen, 0).unwrap();
        let init = Trainer::new(&p.hypergraph, &p.features, &labels, &masks.train, &frozen, 0).unwrap();
        assert_eq!(run.params.store, init.params().store);
        let m0 = evaluate(
            init.params(),
            &p.hypergraph,
            &p.features,
            &labels,
            &masks.test,
            Task::MultiClassNode,
            &frozen.aggregation,
        )
        .unwrap();
        assert_eq!(run.test, m0);
    }

    #[test]
    fn report_statistics() {
        let r = MetricsReport::new(Task::MultiClassNode, vec![0, 1], vec![0.5, 0.7], 1.0, vec![]);
        assert!((r.mean - 0.6).abs() < 1e-15);
        assert!((r.std - 0.1).abs() < 1e-15);
        assert_eq!(r.metric_name, "accuracy");
    }

    #[test]
    fn hypergraph_level_training_reduces_loss() {
        let graphs = crate::synth::hypergraph_collection(12, 8, 3);
        let cfg = TrainConfig {
            epochs: 30,
            dropout: 0.0,
            task: Task::HypergraphLevel,
            ..TrainConfig::default()
        };
        let train: Vec<usize> = (0..8).collect();
        let run = train_graph_classifier(&graphs, 2, &train, &[8, 9, 10, 11], &cfg, 0).unwrap();
        assert!(run.loss_curve[29] < run.loss_curve[0]);
    }
}
