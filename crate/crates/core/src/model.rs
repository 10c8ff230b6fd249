//! The layered message-passing network.
//!
//! Each layer `l` computes, for every node `i`,
//!
//! ```text
//! h_i ← h_i + F2({ F1(e) : e ∈ E(v_i) })
//! h_i ← σ(W^l (h_i / ‖h_i‖₂))
//! ```
//!
//! with `F1`/`F2` from [`crate::aggregate`]. The last layer has no
//! nonlinearity and produces class scores. Isolated nodes aggregate to zero
//! and carry their own features through the residual path.

use alloc::rc::Rc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{glorot, importance_features, AggregateError, AggregationConfig, AggregationPlan, ImportanceNet};
use crate::hgraph::{FeatureMatrix, Hypergraph};
use crate::matrix::Matrix;
use crate::tensor::{Activation, ParamId, ParamStore, Tape, TensorError, Var};

/// Re-export under the name used by the model configuration.
pub type Nonlinearity = Activation;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("shape mismatch: {what} expected {expected}, found {found}")]
    ShapeMismatch { what: &'static str, expected: usize, found: usize },
    #[error("node {0} is not part of the hypergraph")]
    UnknownNodeId(usize),
    #[error("cannot read out an empty embedding matrix")]
    EmptyEmbedding,
    #[error("invalid model specification: {0}")]
    InvalidSpec(&'static str),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
}

/// Architecture of a [`ModelParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub dropout: f64,
    pub nonlinearity: Nonlinearity,
    /// Build the importance network (adaptive variant).
    pub adaptive: bool,
    pub importance_hidden: (usize, usize),
    /// `false` drops the aggregation term, leaving a per-node MLP.
    pub message_passing: bool,
}

impl ModelSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden,
            output_dim,
            dropout: 0.5,
            nonlinearity: Nonlinearity::Relu,
            adaptive: false,
            importance_hidden: (8, 8),
            message_passing: true,
        }
    }

    /// `[input, hidden.., output]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut d = Vec::with_capacity(self.hidden.len() + 2);
        d.push(self.input_dim);
        d.extend_from_slice(&self.hidden);
        d.push(self.output_dim);
        d
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::InvalidSpec("dropout must lie in [0, 1)"));
        }
        if self.layer_dims().contains(&0) {
            return Err(ModelError::InvalidSpec("layer dimensions must be positive"));
        }
        Ok(())
    }
}

/// Trainable state: layer weights `W^l` and, for the adaptive variant, the
/// importance network, all held in one [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub spec: ModelSpec,
    pub store: ParamStore,
    layers: Vec<ParamId>,
    importance: Option<ImportanceNet>,
}

impl ModelParams {
    /// Glorot-uniform weights drawn from `seed`.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self, ModelError> {
        spec.validate()?;
        let mut rng = crate::rng_from_seed(seed);
        let mut store = ParamStore::new();
        let dims = spec.layer_dims();
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(l, w)| store.insert(alloc::format!("layer{}.weight", l + 1), glorot(w[0], w[1], &mut rng)))
            .collect();
        let importance = spec
            .adaptive
            .then(|| ImportanceNet::init(&mut store, spec.importance_hidden, spec.nonlinearity, &mut rng));
        Ok(Self {
            spec,
            store,
            layers,
            importance,
        })
    }

    /// Rebuilds the parameter handles from a store loaded from disk.
    pub fn from_store(spec: ModelSpec, store: ParamStore) -> Result<Self, ModelError> {
        spec.validate()?;
        let dims = spec.layer_dims();
        let mut layers = Vec::new();
        for (l, w) in dims.windows(2).enumerate() {
            let id = store
                .id_of(&alloc::format!("layer{}.weight", l + 1))
                .ok_or(ModelError::InvalidSpec("checkpoint is missing a layer weight"))?;
            let shape = store.value(id).shape();
            if shape != (w[0], w[1]) {
                return Err(ModelError::ShapeMismatch {
                    what: "layer weight rows",
                    expected: w[0],
                    found: shape.0,
                });
            }
            layers.push(id);
        }
        let importance = if spec.adaptive {
            Some(
                ImportanceNet::from_store(&store, spec.importance_hidden, spec.nonlinearity)
                    .ok_or(ModelError::InvalidSpec("checkpoint is missing the importance network"))?,
            )
        } else {
            None
        };
        Ok(Self {
            spec,
            store,
            layers,
            importance,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer_weight(&self, l: usize) -> &Matrix {
        self.store.value(self.layers[l])
    }

    pub fn importance_net(&self) -> Option<&ImportanceNet> {
        self.importance.as_ref()
    }

    /// Importance weights `C_v`, when the model is adaptive.
    pub fn importance(&self, h: &Hypergraph) -> Result<Option<Vec<f64>>, TensorError> {
        self.importance
            .as_ref()
            .map(|net| crate::aggregate::importance_forward(net, &self.store, h))
            .transpose()
    }
}

/// Training mode enables dropout and neighbor sampling; evaluation is
/// deterministic and aggregates full neighborhoods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForwardMode {
    pub training: bool,
    pub seed: u64,
}

impl ForwardMode {
    pub fn eval() -> Self {
        Self { training: false, seed: 0 }
    }

    pub fn train(seed: u64) -> Self {
        Self { training: true, seed }
    }
}

fn check_inputs(h: &Hypergraph, x: &FeatureMatrix, params: &ModelParams) -> Result<(), ModelError> {
    if x.rows() != h.num_nodes() {
        return Err(ModelError::ShapeMismatch {
            what: "feature rows",
            expected: h.num_nodes(),
            found: x.rows(),
        });
    }
    if x.cols() != params.spec.input_dim {
        return Err(ModelError::ShapeMismatch {
            what: "feature dimension",
            expected: params.spec.input_dim,
            found: x.cols(),
        });
    }
    Ok(())
}

/// Records the full forward pass on `tape` and returns the `N x c` scores.
pub fn forward_on_tape(
    tape: &mut Tape,
    h: &Hypergraph,
    x: &FeatureMatrix,
    params: &ModelParams,
    cfg: &AggregationConfig,
    mode: ForwardMode,
) -> Result<Var, ModelError> {
    check_inputs(h, x, params)?;
    cfg.validate()?;
    let spec = &params.spec;
    let importance = match (&params.importance, cfg.adaptive) {
        (Some(net), true) => Some(net.forward(tape, &params.store, &importance_features(h))?),
        (None, true) => return Err(ModelError::InvalidSpec("adaptive aggregation needs an importance network")),
        _ => None,
    };
    let c_values: Option<Vec<f64>> = importance.map(|c| tape.value(c).as_slice().to_vec());
    let full_plan = (spec.message_passing && !(mode.training && cfg.alpha.is_some())).then(|| Rc::new(AggregationPlan::full(h, cfg)));
    let mut dropout_rng = crate::rng_from_seed(crate::derive_seed(mode.seed, u64::MAX));
    let mut hidden = tape.leaf(x.clone(), false);
    let last = params.layers.len() - 1;
    for (l, &w) in params.layers.iter().enumerate() {
        if spec.message_passing {
            let plan = match &full_plan {
                Some(p) => Rc::clone(p),
                None => {
                    let uniform;
                    let c = match &c_values {
                        Some(c) => c.as_slice(),
                        None => {
                            uniform = alloc::vec![1.0; h.num_nodes()];
                            &uniform
                        }
                    };
                    let seed = crate::derive_seed(mode.seed, l as u64);
                    Rc::new(AggregationPlan::sampled(h, cfg, c, seed)?)
                }
            };
            let agg = plan.record(tape, hidden, importance, cfg.mean)?;
            hidden = tape.add(hidden, agg)?;
        }
        let normalized = tape.row_l2_normalize(hidden)?;
        let wv = tape.param(&params.store, w);
        hidden = tape.matmul(normalized, wv)?;
        if l < last {
            hidden = tape.activate(hidden, spec.nonlinearity)?;
            let rng = mode.training.then_some(&mut dropout_rng);
            hidden = tape.dropout(hidden, spec.dropout, rng)?;
        }
    }
    Ok(hidden)
}

/// Node scores `Z` (`N x c`).
pub fn forward(
    h: &Hypergraph,
    x: &FeatureMatrix,
    params: &ModelParams,
    cfg: &AggregationConfig,
    mode: ForwardMode,
) -> Result<Matrix, ModelError> {
    let mut tape = Tape::new();
    let z = forward_on_tape(&mut tape, h, x, params, cfg, mode)?;
    Ok(tape.value(z).clone())
}

/// Scores for `unseen` nodes, computed in evaluation mode over `h_full`, the
/// hypergraph that contains them and their incident hyperedges. Rows follow
/// the order of `unseen`.
pub fn predict_unseen(
    h_full: &Hypergraph,
    x_full: &FeatureMatrix,
    params: &ModelParams,
    cfg: &AggregationConfig,
    unseen: &[usize],
) -> Result<Matrix, ModelError> {
    if let Some(&bad) = unseen.iter().find(|&&v| v >= h_full.num_nodes()) {
        return Err(ModelError::UnknownNodeId(bad));
    }
    let z = forward(h_full, x_full, params, cfg, ForwardMode::eval())?;
    Ok(z.select_rows(unseen))
}

/// Hypergraph-level readout.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    #[default]
    MeanPool,
}

/// Pools node embeddings into one vector.
pub fn readout_hypergraph(z: &Matrix, method: Readout) -> Result<Vec<f64>, ModelError> {
    if z.rows() == 0 {
        return Err(ModelError::EmptyEmbedding);
    }
    match method {
        Readout::MeanPool => {
            let mut out = alloc::vec![0.0; z.cols()];
            for i in 0..z.rows() {
                for (o, v) in out.iter_mut().zip(z.row(i)) {
                    *o += v;
                }
            }
            let n = z.rows() as f64;
            Ok(out.into_iter().map(|v| v / n).collect())
        }
    }
}

/// Node model followed by mean-pool readout and a dense classification head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphClassifier {
    pub nodes: ModelParams,
    pub num_classes: usize,
}

impl GraphClassifier {
    /// `spec.output_dim` is the node-embedding width fed to the head.
    pub fn init(spec: ModelSpec, num_classes: usize, seed: u64) -> Result<Self, ModelError> {
        let mut nodes = ModelParams::init(spec, seed)?;
        let mut rng = crate::rng_from_seed(crate::derive_seed(seed, 1));
        let emb = nodes.spec.output_dim;
        nodes.store.insert("head.weight", glorot(emb, num_classes, &mut rng));
        nodes.store.insert("head.bias", Matrix::zeros(1, num_classes));
        Ok(Self { nodes, num_classes })
    }

    /// `1 x num_classes` scores for one hypergraph.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        h: &Hypergraph,
        x: &FeatureMatrix,
        cfg: &AggregationConfig,
        mode: ForwardMode,
    ) -> Result<Var, ModelError> {
        let z = forward_on_tape(tape, h, x, &self.nodes, cfg, mode)?;
        let z = tape.relu(z)?;
        let pooled = tape.mean_rows(z)?;
        let store = &self.nodes.store;
        let w = tape.param(store, store.id_of("head.weight").expect("head registered at init"));
        let b = tape.param(store, store.id_of("head.bias").expect("head registered at init"));
        let s = tape.matmul(pooled, w)?;
        Ok(tape.add_row(s, b)?)
    }
}
