//! Model checkpoints: a JSON map from parameter name to shape and row-major
//! values, tagged with a format string and stored with the hyperparameters
//! needed to rebuild the model.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context};
use hypermsg_core::model::ModelSpec;
use hypermsg_core::tensor::ParamStore;
use hypermsg_core::{Matrix, ModelParams, TrainConfig};
use serde::{Deserialize, Serialize};

pub const MAGIC: &str = "HYPERMSG-CKPT-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub spec: ModelSpec,
    /// Training settings, including aggregation and split.
    pub config: TrainConfig,
    /// Seed of the run that produced the parameters.
    pub seed: u64,
    /// Set for models trained under the inductive protocol.
    #[serde(default)]
    pub inductive: bool,
    pub params: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new(params: &ModelParams, config: &TrainConfig, seed: u64, inductive: bool) -> Self {
        let store = &params.store;
        let params_map = store
            .ids()
            .map(|id| {
                let m = store.value(id);
                let (r, c) = m.shape();
                (
                    store.name(id).to_string(),
                    Tensor {
                        shape: [r, c],
                        values: m.as_slice().to_vec(),
                    },
                )
            })
            .collect();
        Self {
            format: MAGIC.into(),
            spec: params.spec.clone(),
            config: config.clone(),
            seed,
            inductive,
            params: params_map,
        }
    }

    pub fn model(&self) -> anyhow::Result<ModelParams> {
        let mut store = ParamStore::new();
        for (name, t) in &self.params {
            let m = Matrix::from_vec(t.shape[0], t.shape[1], t.values.clone())
                .with_context(|| format!("parameter {name}: {} values for shape {:?}", t.values.len(), t.shape))?;
            store.insert(name.clone(), m);
        }
        Ok(ModelParams::from_store(self.spec.clone(), store)?)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text)?;
        if v.get("format").and_then(|f| f.as_str()) != Some(MAGIC) {
            bail!("not a {MAGIC} checkpoint");
        }
        Ok(serde_json::from_value(v)?)
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        crate::fsio::write_json(path, self)
    }
}
