//! Command implementations behind the CLI.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use anyhow::anyhow;
use hypermsg_core::hgraph::{fano_plane, fano_plane_swapped, ConnectednessStats};
use hypermsg_core::model::predict_unseen;
use hypermsg_core::synth::{
    planted_partition, random_features, random_hypergraph, random_split_plan, regular_uniform_hypergraph, PlantedConfig,
};
use hypermsg_core::train::{
    evaluate, inductive_split, resolve_masks, score_metrics, train_inductive, train_run, EvalMetrics, Labels, Masks, MetricsReport,
    SplitSpec,
};
use hypermsg_core::verify::{check_equivariance, check_fano_degeneracy, check_graph_reduction, check_sampler, check_split_invariance};
use hypermsg_core::{rng_from_seed, AggregationConfig, Hypergraph, Matrix, ModelParams, OracleReport, Task};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::dataset::{Dataset, DatasetError};
use crate::fsio::{write_atomic, write_json};

/// A failed command, carrying its exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags or invalid input: exit code 2.
    Usage(anyhow::Error),
    /// Anything that went wrong after validation: exit code 3.
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }

    pub fn usage(msg: impl std::fmt::Display) -> Self {
        Failure::Usage(anyhow!("{msg}"))
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(e) | Failure::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

pub type CmdResult<T> = Result<T, Failure>;

trait OrRuntime<T> {
    fn runtime(self) -> CmdResult<T>;
    fn usage(self) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> OrRuntime<T> for Result<T, E> {
    fn runtime(self) -> CmdResult<T> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
    fn usage(self) -> CmdResult<T> {
        self.map_err(|e| Failure::Usage(e.into()))
    }
}

/// Seconds since the first call in this process.
pub fn clock() -> f64 {
    static START: std::sync::OnceLock<Instant> = std::sync::OnceLock::new();
    START.get_or_init(Instant::now).elapsed().as_secs_f64()
}

pub fn load_dataset(path: &Path) -> CmdResult<Dataset> {
    Dataset::load(path).map_err(|e| match e {
        DatasetError::NotFound(_) | DatasetError::Json(_) | DatasetError::Hypergraph(_) | DatasetError::Invalid(_) => {
            Failure::Usage(e.into())
        }
        DatasetError::Io { .. } => Failure::Runtime(e.into()),
    })
}

fn require_labels(data: &Dataset) -> CmdResult<&Labels> {
    data.labels.as_ref().ok_or_else(|| Failure::usage("dataset has no labels"))
}

/// Runs `f` over `items` on up to `jobs` threads; results keep item order.
pub fn par_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let out: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                out.lock().expect("no worker panicked")[i] = Some(r);
            });
        }
    });
    out.into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every item ran"))
        .collect()
}

/// Report of an inductive run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InductiveReport {
    pub task: Task,
    pub seeds: Vec<u64>,
    pub metric_name: String,
    pub seen: MetricsReport,
    pub unseen: MetricsReport,
    /// `seen.mean - unseen.mean`.
    pub gap: f64,
    /// Unseen-node appearances in the training view, summed over seeds.
    pub exposure_count: usize,
}

/// Output of `train`.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainOutput {
    Transductive(MetricsReport),
    Inductive(InductiveReport),
}

impl TrainOutput {
    pub fn to_json(&self) -> String {
        match self {
            TrainOutput::Transductive(r) => serde_json::to_string_pretty(r),
            TrainOutput::Inductive(r) => serde_json::to_string_pretty(r),
        }
        .expect("reports serialize")
    }
}

pub fn checkpoint_path(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("checkpoint-seed{seed}.json"))
}

/// Trains once per seed and writes `config.json`, `metrics.json` and one
/// checkpoint per seed into `cfg.out`.
pub fn cmd_train(cfg: &ExperimentConfig) -> CmdResult<TrainOutput> {
    let mut cfg = cfg.clone();
    let path = cfg.data.clone().ok_or_else(|| Failure::usage("no dataset given; use --data"))?;
    let data = load_dataset(&path)?;
    let labels = require_labels(&data)?.clone();
    // masks shipped with the data win unless a split was configured
    if let Some(m) = &data.masks {
        if cfg.train.split == hypermsg_core::TrainConfig::default().split {
            cfg.train.split = SplitSpec::Masks(m.clone());
        }
    }
    cfg.train.validate().usage()?;
    labels.check_task(cfg.train.task).usage()?;
    let (h, x) = (&data.hypergraph, &data.features);
    let seeds = cfg.train.seeds.clone();
    let start = clock();
    let output = if cfg.inductive {
        let splits: Vec<_> = seeds
            .iter()
            .map(|&s| inductive_split(h, &labels, s))
            .collect::<Result<_, _>>()
            .usage()?;
        let jobs: Vec<_> = seeds.iter().copied().zip(splits).collect();
        let runs = par_map(&jobs, cfg.jobs, |(s, split)| train_inductive(split, h, x, &labels, &cfg.train, *s));
        let runs: Vec<_> = runs.into_iter().collect::<Result<_, _>>().runtime()?;
        let elapsed = clock() - start;
        for (run, &s) in runs.iter().zip(&seeds) {
            Checkpoint::new(&run.params, &cfg.train, s, true)
                .save(&checkpoint_path(&cfg.out, s))
                .runtime()?;
        }
        let task = cfg.train.task;
        let seen = MetricsReport::new(
            task,
            seeds.clone(),
            runs.iter().map(|r| r.seen.primary(task)).collect(),
            elapsed,
            Vec::new(),
        );
        let unseen = MetricsReport::new(
            task,
            seeds.clone(),
            runs.iter().map(|r| r.unseen.primary(task)).collect(),
            elapsed,
            Vec::new(),
        );
        TrainOutput::Inductive(InductiveReport {
            task,
            seeds: seeds.clone(),
            metric_name: task.metric_name().into(),
            gap: seen.mean - unseen.mean,
            seen,
            unseen,
            exposure_count: runs.iter().map(|r| r.exposure_count).sum(),
        })
    } else {
        let masks: Vec<Masks> = seeds
            .iter()
            .map(|&s| resolve_masks(&labels, &cfg.train, s))
            .collect::<Result<_, _>>()
            .usage()?;
        for m in &masks {
            m.validate(&labels).usage()?;
        }
        let jobs: Vec<_> = seeds.iter().copied().zip(masks).collect();
        let runs = par_map(&jobs, cfg.jobs, |(s, m)| train_run(h, x, &labels, m, &cfg.train, *s));
        let runs: Vec<_> = runs.into_iter().collect::<Result<_, _>>().runtime()?;
        let elapsed = clock() - start;
        for (run, &s) in runs.iter().zip(&seeds) {
            Checkpoint::new(&run.params, &cfg.train, s, false)
                .save(&checkpoint_path(&cfg.out, s))
                .runtime()?;
        }
        let task = cfg.train.task;
        let values = runs.iter().map(|r| r.test.primary(task)).collect();
        let curves = runs.into_iter().map(|r| r.loss_curve).collect();
        TrainOutput::Transductive(MetricsReport::new(task, seeds.clone(), values, elapsed, curves))
    };
    write_json(&cfg.out.join("config.json"), &cfg).runtime()?;
    let mut text = output.to_json();
    text.push('\n');
    write_atomic(&cfg.out.join("metrics.json"), text.as_bytes()).runtime()?;
    Ok(output)
}

/// Output of `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EvalOutput {
    Test {
        seed: u64,
        metric_name: String,
        value: f64,
        metrics: EvalMetrics,
    },
    Unseen {
        seed: u64,
        metric_name: String,
        seen: EvalMetrics,
        unseen: EvalMetrics,
        exposure_count: usize,
    },
}

/// Evaluation-mode metrics of a checkpoint. The test nodes are recovered
/// from the split stored in the checkpoint; with `unseen`, the inductive
/// split is rebuilt and seen and unseen nodes are scored separately.
pub fn cmd_eval(checkpoint: &Path, data_path: &Path, unseen: bool) -> CmdResult<EvalOutput> {
    let ckpt = Checkpoint::load(checkpoint).usage()?;
    let data = load_dataset(data_path)?;
    let found = data.features.cols();
    if ckpt.spec.input_dim != found {
        return Err(Failure::usage(format!(
            "DimMismatch: checkpoint expects {} input features, data has {found}",
            ckpt.spec.input_dim
        )));
    }
    let labels = require_labels(&data)?;
    let params = ckpt.model().usage()?;
    let cfg = &ckpt.config;
    let task = cfg.task;
    let (h, x) = (&data.hypergraph, &data.features);
    if unseen {
        let split = inductive_split(h, labels, ckpt.seed).usage()?;
        let seen = seen_metrics(&params, &split, x, labels, &cfg.aggregation, task)?;
        let scores = predict_unseen(h, x, &params, &cfg.aggregation, &split.masks.test).runtime()?;
        let rows: Vec<usize> = (0..split.masks.test.len()).collect();
        let unseen = score_metrics(&scores, &labels.select(&split.masks.test), &rows, task);
        return Ok(EvalOutput::Unseen {
            seed: ckpt.seed,
            metric_name: task.metric_name().into(),
            seen,
            unseen,
            exposure_count: split.exposure_count(),
        });
    }
    let masks = resolve_masks(labels, cfg, ckpt.seed).usage()?;
    let metrics = evaluate(&params, h, x, labels, &masks.test, task, &cfg.aggregation).runtime()?;
    Ok(EvalOutput::Test {
        seed: ckpt.seed,
        metric_name: task.metric_name().into(),
        value: metrics.primary(task),
        metrics,
    })
}

fn seen_metrics(
    params: &ModelParams,
    split: &hypermsg_core::train::InductiveSplit,
    x: &Matrix,
    labels: &Labels,
    agg: &AggregationConfig,
    task: Task,
) -> CmdResult<EvalMetrics> {
    let x_train = x.select_rows(&split.seen);
    let rows = split.to_train_ids(&split.masks.val);
    evaluate(params, &split.h_train, &x_train, &labels.select(&split.seen), &rows, task, agg).runtime()
}

pub fn cmd_stats(data: &Path, bins: usize) -> CmdResult<ConnectednessStats> {
    if bins == 0 {
        return Err(Failure::usage("--bins must be at least 1"));
    }
    Ok(load_dataset(data)?.hypergraph.connectedness_stats(bins))
}

/// Clique-expansion edges as `u v` lines, sorted.
pub fn cmd_expand(data: &Path) -> CmdResult<String> {
    let h = load_dataset(data)?.hypergraph;
    Ok(h.clique_expansion().into_iter().map(|(a, b)| format!("{a} {b}\n")).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Oracle {
    Equivariance,
    SplitInvariance,
    Fano,
    Sampler,
    GraphReduction,
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub oracle: Oracle,
    pub trials: usize,
    pub seed: u64,
    pub p: f64,
    pub adaptive: bool,
    pub data: Option<PathBuf>,
}

/// Runs the requested oracles on seeded random fixtures (or `data`).
pub fn cmd_verify(opts: &VerifyOptions) -> CmdResult<Vec<OracleReport>> {
    if opts.p == 0.0 {
        return Err(Failure::usage("p must be nonzero; use --geometric"));
    }
    let fixture = match &opts.data {
        Some(path) => {
            let d = load_dataset(path)?;
            Some((d.hypergraph, d.features))
        }
        None => None,
    };
    let mut rng = rng_from_seed(opts.seed);
    let random_fixture = |rng: &mut hypermsg_core::Rng| {
        let h = random_hypergraph(30, 12, 2, 6, rng);
        let x = random_features(30, 5, rng);
        (h, x)
    };
    let wanted = |o: Oracle| opts.oracle == o || opts.oracle == Oracle::All;
    let mut reports = Vec::new();
    if wanted(Oracle::Equivariance) {
        let (h, x) = fixture.clone().unwrap_or_else(|| random_fixture(&mut rng));
        let cfg = AggregationConfig {
            adaptive: opts.adaptive,
            ..AggregationConfig::power(opts.p)
        };
        let spec = hypermsg_core::model::ModelSpec {
            adaptive: opts.adaptive,
            ..hypermsg_core::model::ModelSpec::new(x.cols(), vec![8], 3)
        };
        let params = ModelParams::init(spec, opts.seed).runtime()?;
        reports.push(check_equivariance(&h, &x, &params, &cfg, opts.trials, opts.seed).runtime()?);
    }
    if wanted(Oracle::SplitInvariance) {
        let mut worst: Option<OracleReport> = None;
        let mut done = 0;
        while done < opts.trials {
            let (h, x) = random_fixture(&mut rng);
            let Some(e) = (0..h.num_edges()).find(|&e| h.hyperedges()[e].len() >= 3) else {
                continue;
            };
            let plan = random_split_plan(&h, e, 3, &mut rng).expect("edge has three members");
            let r = check_split_invariance(&h, &x, plan.pivot_node, &plan, opts.p).runtime()?;
            if worst.as_ref().is_none_or(|w| r.deviation > w.deviation) {
                worst = Some(r);
            }
            done += 1;
        }
        if let Some(mut w) = worst {
            w.trials = opts.trials;
            w.seed = opts.seed;
            reports.push(w);
        }
    }
    if wanted(Oracle::Fano) {
        reports.push(check_fano_degeneracy());
    }
    if wanted(Oracle::Sampler) {
        reports.push(check_sampler(&[9.0, 1.0], 1, 100_000, opts.seed).runtime()?);
    }
    if wanted(Oracle::GraphReduction) {
        let (h, x) = match &fixture {
            Some(f) => f.clone(),
            None => {
                let g = hypermsg_core::synth::random_graph(30, 60, &mut rng);
                (g, random_features(30, 5, &mut rng))
            }
        };
        reports.push(check_graph_reduction(&h, &x).usage()?);
    }
    Ok(reports)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SynthKind {
    /// Two-block planted partition with labels and bag-of-token features.
    Planted2,
    /// k-uniform hypergraph with constant node degree and random features.
    Uniform,
    /// The Fano plane.
    Fano1,
    /// The Fano plane with two points swapped.
    Fano2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub kind: SynthKind,
    pub nodes: usize,
    pub seed: u64,
    pub edge_size: usize,
    pub degree: usize,
    pub features: usize,
}

pub fn cmd_synth(opts: &SynthOptions) -> CmdResult<Dataset> {
    let mut rng = rng_from_seed(opts.seed);
    let bare = |h: Hypergraph| {
        let n = h.num_nodes();
        Dataset {
            hypergraph: h,
            features: Matrix::from_fn(n, n, |i, j| f64::from(u8::from(i == j))),
            labels: None,
            masks: None,
        }
    };
    Ok(match opts.kind {
        SynthKind::Planted2 => {
            let cfg = PlantedConfig {
                nodes: opts.nodes,
                ..PlantedConfig::default()
            };
            if cfg.nodes < 2 * cfg.max_edge_size {
                return Err(Failure::usage(format!("planted2 needs at least {} nodes", 2 * cfg.max_edge_size)));
            }
            let p = planted_partition(&cfg, opts.seed);
            Dataset {
                hypergraph: p.hypergraph,
                features: p.features,
                labels: Some(Labels::classes(cfg.blocks, p.labels)),
                masks: None,
            }
        }
        SynthKind::Uniform => {
            let (n, k, d) = (opts.nodes, opts.edge_size, opts.degree);
            if k < 2 || n < k || (n * d) % k != 0 {
                return Err(Failure::usage(
                    "uniform needs edge size >= 2, nodes >= edge size and nodes * degree divisible by edge size",
                ));
            }
            let h = regular_uniform_hypergraph(n, k, d, &mut rng);
            let features = random_features(n, opts.features, &mut rng);
            Dataset {
                hypergraph: h,
                features,
                labels: None,
                masks: None,
            }
        }
        SynthKind::Fano1 => bare(fano_plane()),
        SynthKind::Fano2 => bare(fano_plane_swapped()),
    })
}

/// Compact JSON for data files.
pub fn dataset_json(d: &Dataset) -> String {
    let mut s = serde_json::to_string(&d.to_file()).expect("datasets serialize");
    s.push('\n');
    s
}
