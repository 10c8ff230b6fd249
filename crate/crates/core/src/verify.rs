//! Executable oracles for the structural properties of the aggregation.
//!
//! Every oracle is deterministic given its seed, leaves its inputs untouched
//! and returns an [`OracleReport`] whose `passed` flag is exactly
//! `deviation <= tolerance`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{
    generalized_mean, node_aggregate, sample_condensed_neighborhood, sampling_distribution, split_weight, AggregateError,
    AggregationConfig, MeanKind, MessageSet,
};
use crate::hgraph::{fano_plane, fano_plane_swapped, FeatureMatrix, HgraphError, Hypergraph, PermutationMap, SplitPlan};
use crate::matrix::Matrix;
use crate::model::{forward, ForwardMode, ModelError, ModelParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error("hyperedge {edge} has {size} members; graph reduction needs pairwise hyperedges")]
    HyperedgeNotPairwise { edge: usize, size: usize },
    #[error("invalid split plan: {0}")]
    InvalidSplitPlan(HgraphError),
    #[error("invalid oracle argument: {0}")]
    InvalidArgument(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
}

/// Outcome of one oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub name: String,
    pub passed: bool,
    pub deviation: f64,
    pub tolerance: f64,
    pub trials: usize,
    pub seed: u64,
}

impl OracleReport {
    fn new(name: &str, deviation: f64, tolerance: f64, trials: usize, seed: u64) -> Self {
        Self {
            name: name.into(),
            passed: deviation <= tolerance,
            deviation,
            tolerance,
            trials,
            seed,
        }
    }
}

/// Permutation equivariance of an arbitrary node map `f`: for each trial a
/// random relabeling `σ` is drawn and `max |f(σ•(h,x)) − σ•f(h,x)|` recorded.
/// The tolerance is 0.
pub fn check_equivariance_by<F>(h: &Hypergraph, x: &FeatureMatrix, trials: usize, seed: u64, f: F) -> Result<OracleReport, VerifyError>
where
    F: Fn(&Hypergraph, &FeatureMatrix) -> Result<Matrix, ModelError>,
{
    let z = f(h, x)?;
    let mut rng = crate::rng_from_seed(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let sigma = PermutationMap::random(h.num_nodes(), &mut rng);
        let (hp, xp) = h
            .apply_permutation(x, &sigma)
            .map_err(|_| VerifyError::InvalidArgument("feature rows do not match the hypergraph"))?;
        let zp = f(&hp, &xp)?;
        let expected = sigma.permute_rows(&z);
        let dev = zp.max_abs_diff(&expected);
        // NaN must count as a failure
        worst = if dev.is_nan() { f64::INFINITY } else { worst.max(dev) };
    }
    Ok(OracleReport::new("equivariance", worst, 0.0, trials, seed))
}

/// [`check_equivariance_by`] applied to the model's evaluation-mode forward pass.
pub fn check_equivariance(
    h: &Hypergraph,
    x: &FeatureMatrix,
    params: &ModelParams,
    cfg: &AggregationConfig,
    trials: usize,
    seed: u64,
) -> Result<OracleReport, VerifyError> {
    check_equivariance_by(h, x, trials, seed, |h, x| forward(h, x, params, cfg, ForwardMode::eval()))
}

/// Compares the two-level aggregate at `v` before and after `plan` splits a
/// hyperedge around `v`.
///
/// After the split, each new hyperedge `e_m` contributes its intra-edge mean
/// with every member additionally weighted by `split_weight(h', v, e_m, ·)`,
/// and the inter-edge mean keeps the pre-split normalizer `1/|E(v)|`.
/// Non-adaptive, intra-edge normalization, power `p` at both levels. The
/// tolerance is `1e-9` for `p = 1`; for other `p` the deviation is only
/// recorded (tolerance `f64::MAX`).
pub fn check_split_invariance(h: &Hypergraph, x: &FeatureMatrix, v: usize, plan: &SplitPlan, p: f64) -> Result<OracleReport, VerifyError> {
    let post_split = split_aggregates(h, x, v, plan, p)?;
    let dev = post_split
        .0
        .iter()
        .zip(&post_split.1)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let tolerance = if p == 1.0 { 1e-9 } else { f64::MAX };
    Ok(OracleReport::new("split_invariance", dev, tolerance, 1, 0))
}

/// `(before, after)` aggregates used by [`check_split_invariance`].
pub fn split_aggregates(
    h: &Hypergraph,
    x: &FeatureMatrix,
    v: usize,
    plan: &SplitPlan,
    p: f64,
) -> Result<(Vec<f64>, Vec<f64>), VerifyError> {
    if v != plan.pivot_node {
        return Err(VerifyError::InvalidSplitPlan(HgraphError::InvalidSplitPlan(
            "the checked node must be the split pivot",
        )));
    }
    plan.validate(h).map_err(VerifyError::InvalidSplitPlan)?;
    if x.rows() != h.num_nodes() {
        return Err(VerifyError::InvalidArgument("feature rows do not match the hypergraph"));
    }
    let cfg = AggregationConfig::power(p);
    let before = node_aggregate(h, x, v, &cfg, None, None)?;

    let h2 = h.split_hyperedge(plan).map_err(VerifyError::InvalidSplitPlan)?;
    let first_new = h.num_edges() - 1;
    let split_ids: Vec<usize> = (first_new..first_new + plan.num_parts()).collect();
    let mean = MeanKind::Power(p);
    let b = 1.0 / h.degree(v) as f64;
    let mut msgs = MessageSet::new(x.cols());
    for &e in h2.incident_edges(v).map_err(VerifyError::InvalidSplitPlan)? {
        let members = h2.intra_edge_neighborhood(v, e).map_err(VerifyError::InvalidSplitPlan)?;
        let w = if split_ids.contains(&e) {
            split_weight(&h2, v, e, &split_ids)?
        } else {
            1.0
        };
        let rows = MessageSet::from_vecs(x.cols(), members.iter().map(|&j| x.row(j).to_vec()).collect())?;
        let a = vec![w / members.len() as f64; members.len()];
        msgs.push(generalized_mean(&rows, &a, mean)?)?;
    }
    let weights = vec![b; msgs.len()];
    let after = generalized_mean(&msgs, &weights, mean)?;
    Ok((before, after))
}

/// The two built-in Fano planes have equal clique expansions (`K7`, 21 edges)
/// while being different hypergraphs. Deviation is 0 when both hold, else 1.
pub fn check_fano_degeneracy() -> OracleReport {
    let f1 = fano_plane();
    let f2 = fano_plane_swapped();
    let c1 = f1.clique_expansion();
    let c2 = f2.clique_expansion();
    let holds = c1 == c2 && c1.len() == 21 && f1 != f2;
    OracleReport::new("fano_degeneracy", if holds { 0.0 } else { 1.0 }, 0.0, 1, 0)
}

/// Inclusion probability of every item when `alpha` items are drawn one at a
/// time without replacement, each with probability proportional to its
/// weight among the remaining items. Exact enumeration over subsets.
pub fn inclusion_probabilities(weights: &[f64], alpha: usize) -> Result<Vec<f64>, VerifyError> {
    let k = weights.len();
    if k == 0 || k > 20 {
        return Err(VerifyError::InvalidArgument("inclusion probabilities need 1..=20 items"));
    }
    let alpha = alpha.min(k);
    let total: f64 = weights.iter().sum();
    let mut state = vec![0.0; 1 << k];
    state[0] = 1.0;
    let mut incl = vec![0.0; k];
    for mask in 0..(1usize << k) {
        let p = state[mask];
        if p == 0.0 || mask.count_ones() as usize >= alpha {
            continue;
        }
        let taken: f64 = (0..k).filter(|i| mask & (1 << i) != 0).map(|i| weights[i]).sum();
        let rest = total - taken;
        for i in 0..k {
            if mask & (1 << i) == 0 {
                let q = p * weights[i] / rest;
                state[mask | (1 << i)] += q;
                incl[i] += q;
            }
        }
    }
    Ok(incl)
}

/// Empirical selection frequencies of the importance sampler on a single
/// hyperedge `{0, .., k-1, hub}` seen from the hub, compared in L1 with the
/// exact inclusion probabilities (`P_j = C_j / Σ C` when `alpha = 1`).
/// Tolerance `3·sqrt(k / draws)`.
pub fn check_sampler(importance: &[f64], alpha: usize, draws: usize, seed: u64) -> Result<OracleReport, VerifyError> {
    let (freq, _) = sampler_frequencies(importance, alpha, draws, seed)?;
    let k = importance.len();
    let expected = if alpha == 1 {
        let all: Vec<usize> = (0..k).collect();
        sampling_distribution(importance, &all)?
    } else {
        inclusion_probabilities(importance, alpha)?
    };
    let dev: f64 = freq.iter().zip(&expected).map(|(f, e)| (f - e).abs()).sum();
    let tol = 3.0 * crate::float::sqrt(k as f64 / draws as f64);
    Ok(OracleReport::new("sampler", dev, tol, draws, seed))
}

/// Per-item selection frequencies and the number of draws performed.
pub fn sampler_frequencies(importance: &[f64], alpha: usize, draws: usize, seed: u64) -> Result<(Vec<f64>, usize), VerifyError> {
    let k = importance.len();
    if k == 0 || draws == 0 {
        return Err(VerifyError::InvalidArgument("sampler check needs neighbors and draws"));
    }
    let hub = k;
    let edge: Vec<usize> = (0..=k).collect();
    let h = Hypergraph::new(k + 1, &[edge]).map_err(|_| VerifyError::InvalidArgument("bad sampler fixture"))?;
    let mut c = importance.to_vec();
    c.push(1.0);
    let mut counts = vec![0usize; k];
    let mut rng = crate::rng_from_seed(seed);
    for _ in 0..draws {
        for j in sample_condensed_neighborhood(&h, hub, 0, alpha, &c, &mut rng)? {
            counts[j] += 1;
        }
    }
    Ok((counts.into_iter().map(|n| n as f64 / draws as f64).collect(), draws))
}

/// On a graph encoded as size-2 hyperedges, the `p = 1` two-level aggregate
/// must equal the plain mean over graph neighbors (zero for isolated nodes).
/// Tolerance `1e-12`.
pub fn check_graph_reduction(h: &Hypergraph, x: &FeatureMatrix) -> Result<OracleReport, VerifyError> {
    if let Some((edge, e)) = h.hyperedges().iter().enumerate().find(|(_, e)| e.len() != 2) {
        return Err(VerifyError::HyperedgeNotPairwise { edge, size: e.len() });
    }
    if x.rows() != h.num_nodes() {
        return Err(VerifyError::InvalidArgument("feature rows do not match the hypergraph"));
    }
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); h.num_nodes()];
    for e in h.hyperedges() {
        adjacency[e[0]].push(e[1]);
        adjacency[e[1]].push(e[0]);
    }
    let cfg = AggregationConfig::power(1.0);
    let mut worst: f64 = 0.0;
    for (v, nbrs) in adjacency.iter().enumerate() {
        let got = node_aggregate(h, x, v, &cfg, None, None)?;
        for (k, g) in got.iter().enumerate() {
            let direct = if nbrs.is_empty() {
                0.0
            } else {
                nbrs.iter().map(|&u| x.get(u, k)).sum::<f64>() / nbrs.len() as f64
            };
            worst = worst.max((g - direct).abs());
        }
    }
    Ok(OracleReport::new("graph_reduction", worst, 1e-12, h.num_nodes(), 0))
}
