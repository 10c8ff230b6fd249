//! Two-level generalized-mean message passing on hypergraphs.
//!
//! The crate is `no_std` (with `alloc`) and contains everything that is pure
//! computation:
//!
//! - [`hgraph`]: the hypergraph data model, neighborhood queries and
//!   structural transforms (relabeling, hyperedge splitting, clique expansion).
//! - [`matrix`], [`tensor`], [`optim`], [`gradcheck`]: dense `f64` numerics,
//!   a reverse-mode tape, Adam, and a finite-difference gradient oracle.
//! - [`aggregate`]: generalized means, intra/inter-edge aggregation, the
//!   learned node-importance network and importance-driven neighbor sampling.
//! - [`model`]: the layered forward pass, inductive inference and readout.
//! - [`train`]: losses, metrics, splits and the training loop.
//! - [`verify`]: executable oracles for equivariance, split invariance,
//!   clique-expansion degeneracy, sampler fidelity and graph reduction.
//! - [`synth`]: reproducible synthetic fixtures.
//!
//! File formats, the command line and wall-clock timing live in the
//! companion `hypermsg` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod aggregate;
pub mod gradcheck;
pub mod hgraph;
pub mod matrix;
pub mod model;
pub mod optim;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod verify;

mod error;
mod float;

pub use error::Error;

pub use aggregate::{AggregationConfig, ImportanceNet, MeanKind, NormalizationMode};
pub use hgraph::{FeatureMatrix, Hypergraph, PermutationMap, SplitPlan};
pub use matrix::Matrix;
pub use model::{ForwardMode, ModelParams, Nonlinearity};
pub use train::{MetricsReport, Task, TrainConfig};
pub use verify::OracleReport;

/// Seeded generator used for every stochastic choice in the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate RNG from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}

/// Derives an independent stream seed from a base seed and a stream index.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
