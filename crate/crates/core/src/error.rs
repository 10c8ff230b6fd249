use thiserror::Error;

use crate::aggregate::AggregateError;
use crate::hgraph::HgraphError;
use crate::model::ModelError;
use crate::optim::OptimError;
use crate::tensor::TensorError;
use crate::train::TrainError;
use crate::verify::VerifyError;

/// Union of every module error, for callers that drive the whole pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Hypergraph(#[from] HgraphError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
}
