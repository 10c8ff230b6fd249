//! Experiment configuration: a config file merged with command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use hypermsg_core::train::SplitSpec;
use hypermsg_core::{MeanKind, Nonlinearity, NormalizationMode, Task, TrainConfig};
use serde::{Deserialize, Serialize};

/// Everything a run needs. Loadable from TOML or JSON; flags override file
/// values; the resolved value is written next to the run outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    /// Threads used to run seeds concurrently.
    pub jobs: usize,
    /// Train on the seen sub-hypergraph and report seen/unseen metrics.
    pub inductive: bool,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: None,
            out: PathBuf::from("out"),
            jobs: 1,
            inductive: false,
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reads `.toml` files as TOML and anything else as JSON.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("config not found: {}", path.display()))?;
        if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
        } else {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
        }
    }
}

/// Flag values that override the configuration; `None` keeps the file value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub inductive: bool,
    pub p: Option<f64>,
    pub geometric: bool,
    pub alpha: Option<Option<usize>>,
    pub layers: Option<usize>,
    pub hidden: Option<usize>,
    pub dropout: Option<f64>,
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub epochs: Option<usize>,
    pub adaptive: Option<bool>,
    pub normalization: Option<NormalizationMode>,
    pub nonlinearity: Option<Nonlinearity>,
    pub message_passing: Option<bool>,
    pub seeds: Option<Vec<u64>>,
    pub split: Option<(f64, f64)>,
    pub task: Option<Task>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> anyhow::Result<()> {
        if self.p == Some(0.0) {
            bail!("p must be nonzero; use --geometric");
        }
        if let Some(d) = &self.data {
            cfg.data = Some(d.clone());
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(j) = self.jobs {
            cfg.jobs = j;
        }
        cfg.inductive |= self.inductive;
        let t = &mut cfg.train;
        if self.geometric {
            t.aggregation.mean = MeanKind::Geometric;
        } else if let Some(p) = self.p {
            t.aggregation.mean = MeanKind::Power(p);
        }
        if let Some(a) = self.alpha {
            t.aggregation.alpha = a;
        }
        if let Some(a) = self.adaptive {
            t.aggregation.adaptive = a;
        }
        if let Some(n) = self.normalization {
            t.aggregation.normalization = n;
        }
        let width = self.hidden.or(t.hidden.first().copied()).unwrap_or(16);
        match self.layers {
            Some(0) => bail!("--layers must be at least 1"),
            Some(l) => t.hidden = vec![width; l - 1],
            None if self.hidden.is_some() => t.hidden = vec![width; t.hidden.len().max(1)],
            None => {}
        }
        if let Some(v) = self.dropout {
            t.dropout = v;
        }
        if let Some(v) = self.lr {
            t.lr = v;
        }
        if let Some(v) = self.weight_decay {
            t.weight_decay = v;
        }
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.nonlinearity {
            t.nonlinearity = v;
        }
        if let Some(v) = self.message_passing {
            t.message_passing = v;
        }
        if let Some(s) = &self.seeds {
            t.seeds = s.clone();
        }
        if let Some((train, val)) = self.split {
            t.split = SplitSpec::Ratio { train, val };
        }
        if let Some(v) = self.task {
            t.task = v;
        }
        if cfg.jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        if let MeanKind::Power(p) = t.aggregation.mean {
            if p == 0.0 {
                bail!("p must be nonzero; use --geometric");
            }
        }
        Ok(())
    }
}

/// Parses `3`, `0..4` (inclusive) or `1,5,9`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| format!("bad seed range {s:?}"))?;
        let b: u64 = b
            .trim()
            .trim_start_matches('=')
            .parse()
            .map_err(|_| format!("bad seed range {s:?}"))?;
        if b < a {
            return Err(format!("empty seed range {s:?}"));
        }
        return Ok((a..=b).collect());
    }
    s.split(',')
        .map(|t| t.trim().parse().map_err(|_| format!("bad seed {t:?}")))
        .collect()
}

/// Parses `full` or a positive sample budget.
pub fn parse_alpha(s: &str) -> Result<Option<usize>, String> {
    if s.eq_ignore_ascii_case("full") {
        return Ok(None);
    }
    match s.parse::<usize>() {
        Ok(0) | Err(_) => Err(format!("alpha must be a positive integer or \"full\", got {s:?}")),
        Ok(a) => Ok(Some(a)),
    }
}
