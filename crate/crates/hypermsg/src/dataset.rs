//! The canonical JSON dataset format.
//!
//! ```json
//! {
//!   "num_nodes": 4,
//!   "hyperedges": [[0, 1, 2], [2, 3]],
//!   "features": [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.5, 0.5]],
//!   "labels": [0, 1, -1, 1],
//!   "masks": {"train": [0, 1], "val": [], "test": [3]}
//! }
//! ```
//!
//! `features`, `labels` and `masks` are optional. A label is an integer
//! class (`-1` or `null` for unlabeled nodes) or, for multi-label data, an
//! array of label ids. Without `features` every node gets a one-hot row.

use std::path::{Path, PathBuf};

use hypermsg_core::train::{Labels, Masks};
use hypermsg_core::{Hypergraph, Matrix};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("dataset not found: {0}")]
    NotFound(PathBuf),
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid dataset JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid hypergraph: {0}")]
    Hypergraph(#[from] hypermsg_core::hgraph::HgraphError),
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelEntry {
    Class(i64),
    Set(Vec<usize>),
}

/// The on-disk record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    pub num_nodes: usize,
    pub hyperedges: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<Option<LabelEntry>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masks: Option<Masks>,
}

/// A validated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub hypergraph: Hypergraph,
    pub features: Matrix,
    pub labels: Option<Labels>,
    pub masks: Option<Masks>,
}

impl Dataset {
    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => DatasetError::NotFound(path.to_path_buf()),
            _ => DatasetError::Io {
                path: path.to_path_buf(),
                source: e,
            },
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, DatasetError> {
        Self::from_file(serde_json::from_str(text)?)
    }

    pub fn from_file(file: DatasetFile) -> Result<Self, DatasetError> {
        let n = file.num_nodes;
        let hypergraph = Hypergraph::new(n, &file.hyperedges)?;
        let features = match file.features {
            Some(rows) => {
                if rows.len() != n {
                    return Err(DatasetError::Invalid(format!("{} feature rows for {n} nodes", rows.len())));
                }
                let m = Matrix::from_rows(&rows).ok_or_else(|| DatasetError::Invalid("feature rows differ in length".into()))?;
                if !m.is_finite() {
                    return Err(DatasetError::Invalid("features contain non-finite values".into()));
                }
                m
            }
            None => Matrix::from_fn(n, n, |i, j| f64::from(u8::from(i == j))),
        };
        let labels = file.labels.map(|l| parse_labels(l, n)).transpose()?;
        if let Some(m) = &file.masks {
            let Some(l) = &labels else {
                return Err(DatasetError::Invalid("masks given without labels".into()));
            };
            m.validate(l).map_err(|e| DatasetError::Invalid(e.to_string()))?;
        }
        Ok(Self {
            hypergraph,
            features,
            labels,
            masks: file.masks,
        })
    }

    pub fn to_file(&self) -> DatasetFile {
        let h = &self.hypergraph;
        DatasetFile {
            num_nodes: h.num_nodes(),
            hyperedges: h.hyperedges().to_vec(),
            features: Some((0..self.features.rows()).map(|i| self.features.row(i).to_vec()).collect()),
            labels: self.labels.as_ref().map(labels_to_entries),
            masks: self.masks.clone(),
        }
    }
}

fn parse_labels(entries: Vec<Option<LabelEntry>>, n: usize) -> Result<Labels, DatasetError> {
    if entries.len() != n {
        return Err(DatasetError::Invalid(format!("{} labels for {n} nodes", entries.len())));
    }
    let multi = entries.iter().any(|e| matches!(e, Some(LabelEntry::Set(_))));
    if multi {
        let mut sets = Vec::with_capacity(n);
        for e in entries {
            sets.push(match e {
                None | Some(LabelEntry::Class(-1)) => None,
                Some(LabelEntry::Set(s)) => Some(s),
                Some(LabelEntry::Class(c)) => {
                    return Err(DatasetError::Invalid(format!("integer label {c} mixed with label arrays")));
                }
            });
        }
        let num_labels = sets.iter().flatten().flatten().map(|&k| k + 1).max().unwrap_or(0);
        let y = sets
            .into_iter()
            .map(|s| {
                s.map(|s| {
                    let mut row = vec![false; num_labels];
                    for k in s {
                        row[k] = true;
                    }
                    row
                })
            })
            .collect();
        return Ok(Labels::MultiLabel { num_labels, y });
    }
    let mut y = Vec::with_capacity(n);
    for e in entries {
        y.push(match e {
            None | Some(LabelEntry::Class(-1)) => None,
            Some(LabelEntry::Class(c)) if c >= 0 => Some(c as usize),
            Some(LabelEntry::Class(c)) => return Err(DatasetError::Invalid(format!("negative label {c}"))),
            Some(LabelEntry::Set(_)) => unreachable!("handled above"),
        });
    }
    let num_classes = y.iter().flatten().map(|&c| c + 1).max().unwrap_or(0);
    Ok(Labels::Class { num_classes, y })
}

fn labels_to_entries(labels: &Labels) -> Vec<Option<LabelEntry>> {
    match labels {
        Labels::Class { y, .. } => y.iter().map(|c| Some(LabelEntry::Class(c.map_or(-1, |c| c as i64)))).collect(),
        Labels::MultiLabel { y, .. } => y
            .iter()
            .map(|r| {
                r.as_ref()
                    .map(|r| LabelEntry::Set(r.iter().enumerate().filter(|(_, &b)| b).map(|(k, _)| k).collect()))
            })
            .collect(),
    }
}
