//! Command-line definitions and dispatch.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hypermsg_core::{Nonlinearity, NormalizationMode, Task};

use crate::config::{parse_alpha, parse_seeds, ExperimentConfig, Overrides};
use crate::fsio::write_atomic;
use crate::run::{self, CmdResult, Failure, Oracle, SynthKind, SynthOptions, VerifyOptions};

#[derive(Debug, Parser)]
#[command(name = "hypermsg", version, about = "Generalized-mean message passing on hypergraphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a node classifier; writes checkpoints, metrics and the resolved config.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Connectedness statistics |N(v)| / |E(v)|.
    Stats {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 10)]
        bins: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Clique-expansion edge list, one `u v` pair per line.
    Expand {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run executable oracles and print one JSON report per line.
    Verify(VerifyArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Normalization {
    Intra,
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    MultiClass,
    Binary,
    MultiLabel,
}

/// Parsed `--alpha` value; `None` means the full neighborhood.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Alpha(pub Option<usize>);

/// Parsed `--seed` value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedList(pub Vec<u64>);

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML or JSON experiment config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Power-mean exponent (nonzero).
    #[arg(long, allow_hyphen_values = true, conflicts_with = "geometric")]
    pub p: Option<f64>,
    /// Use the geometric mean.
    #[arg(long)]
    pub geometric: bool,
    /// Per-hyperedge sample budget, or `full`.
    #[arg(long, value_parser = |s: &str| parse_alpha(s).map(Alpha))]
    pub alpha: Option<Alpha>,
    /// Number of weight layers.
    #[arg(long)]
    pub layers: Option<usize>,
    /// Width of every hidden layer.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Learned importance weights and importance sampling.
    #[arg(long, conflicts_with = "non_adaptive")]
    pub adaptive: bool,
    #[arg(long)]
    pub non_adaptive: bool,
    #[arg(long, value_enum)]
    pub normalization: Option<Normalization>,
    #[arg(long, value_enum)]
    pub nonlinearity: Option<Activation>,
    /// Drop aggregation and train the per-node MLP ablation.
    #[arg(long)]
    pub no_message_passing: bool,
    /// `3`, `0..4` (inclusive) or `1,5,9`.
    #[arg(long, alias = "seeds", value_parser = |s: &str| parse_seeds(s).map(SeedList))]
    pub seed: Option<SeedList>,
    /// Threads for running seeds concurrently.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Fraction of labeled nodes used for training (stratified).
    #[arg(long)]
    pub train_ratio: Option<f64>,
    #[arg(long, requires = "train_ratio")]
    pub val_ratio: Option<f64>,
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    /// 1:3:1 train/seen/unseen protocol; unseen nodes are hidden during training.
    #[arg(long)]
    pub inductive: bool,
}

impl TrainArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            data: self.data.clone(),
            out: self.out.clone(),
            jobs: self.jobs,
            inductive: self.inductive,
            p: self.p,
            geometric: self.geometric,
            alpha: self.alpha.map(|a| a.0),
            layers: self.layers,
            hidden: self.hidden,
            dropout: self.dropout,
            lr: self.lr,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            adaptive: if self.adaptive {
                Some(true)
            } else if self.non_adaptive {
                Some(false)
            } else {
                None
            },
            normalization: self.normalization.map(|n| match n {
                Normalization::Intra => NormalizationMode::IntraEdge,
                Normalization::Global => NormalizationMode::GlobalMainText,
            }),
            nonlinearity: self.nonlinearity.map(|a| match a {
                Activation::Relu => Nonlinearity::Relu,
                Activation::Tanh => Nonlinearity::Tanh,
            }),
            message_passing: self.no_message_passing.then_some(false),
            seeds: self.seed.clone().map(|s| s.0),
            split: self.train_ratio.map(|t| (t, self.val_ratio.unwrap_or(0.0))),
            task: self.task.map(|t| match t {
                TaskArg::MultiClass => Task::MultiClassNode,
                TaskArg::Binary => Task::BinaryNode,
                TaskArg::MultiLabel => Task::MultiLabelNode,
            }),
        }
    }

    pub fn resolve(&self) -> CmdResult<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path).map_err(Failure::Usage)?,
            None => ExperimentConfig::default(),
        };
        self.overrides().apply(&mut cfg).map_err(Failure::Usage)?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Rebuild the inductive split and report seen and unseen nodes separately.
    #[arg(long)]
    pub unseen: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(value_enum)]
    pub oracle: Oracle,
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub p: f64,
    #[arg(long)]
    pub adaptive: bool,
    /// Use this dataset instead of a random fixture where applicable.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 200)]
    pub nodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub edge_size: usize,
    #[arg(long, default_value_t = 3)]
    pub degree: usize,
    /// Feature width of `uniform` datasets.
    #[arg(long, default_value_t = 16)]
    pub features: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn emit(text: &str, out: Option<&PathBuf>) -> CmdResult<()> {
    match out {
        Some(path) => write_atomic(path, text.as_bytes()).map_err(Failure::Runtime),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s
}

/// Runs one command; the caller maps the error to an exit code.
pub fn dispatch(cli: Cli) -> CmdResult<()> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let out = run::cmd_train(&cfg)?;
            println!("{}", out.to_json());
            Ok(())
        }
        Command::Eval(args) => emit(&json(&run::cmd_eval(&args.checkpoint, &args.data, args.unseen)?), args.out.as_ref()),
        Command::Stats { data, bins, out } => emit(&json(&run::cmd_stats(&data, bins)?), out.as_ref()),
        Command::Expand { data, out } => emit(&run::cmd_expand(&data)?, out.as_ref()),
        Command::Verify(a) => {
            let reports = run::cmd_verify(&VerifyOptions {
                oracle: a.oracle,
                trials: a.trials,
                seed: a.seed,
                p: a.p,
                adaptive: a.adaptive,
                data: a.data,
            })?;
            for r in &reports {
                println!("{}", serde_json::to_string(r).expect("reports serialize"));
            }
            match reports.iter().find(|r| !r.passed) {
                Some(r) => Err(Failure::Runtime(anyhow::anyhow!(
                    "oracle {} failed: deviation {:e} > {:e}",
                    r.name,
                    r.deviation,
                    r.tolerance
                ))),
                None => Ok(()),
            }
        }
        Command::Synth(a) => {
            let d = run::cmd_synth(&SynthOptions {
                kind: a.kind,
                nodes: a.nodes,
                seed: a.seed,
                edge_size: a.edge_size,
                degree: a.degree,
                features: a.features,
            })?;
            emit(&run::dataset_json(&d), a.out.as_ref())
        }
    }
}
