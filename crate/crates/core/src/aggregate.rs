//! Generalized-mean aggregation within and across hyperedges.
//!
//! For a node `v` and an incident hyperedge `e`, the intra-edge aggregate is
//! a weighted power mean over the (optionally importance-scaled) features of
//! `N(v, e)`; the inter-edge aggregate is a power mean, with the same power,
//! over the intra-edge aggregates of every `e ∈ E(v)`:
//!
//! ```text
//! F1(v, e) = ( Σ_{j ∈ N(v,e)} a_j · (C_j x_j)^p )^(1/p)      a_j = 1/|N(v,e)|
//! F2(v)    = ( Σ_{e ∈ E(v)}   b_e · F1(v, e)^p )^(1/p)       b_e = 1/|E(v)|
//! ```
//!
//! Powers are sign-preserving (`sgn(x)|x|^p`). Every reduction sums its terms
//! in ascending value order, so the result depends only on the multiset of
//! terms and relabeling nodes never changes a single bit of the output.

use alloc::boxed::Box;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::float;
use crate::hgraph::{FeatureMatrix, HgraphError, Hypergraph};
use crate::matrix::Matrix;
use crate::tensor::{Activation, CustomOp, ParamId, ParamStore, Tape, TensorError, Var};

/// Offset inside the logarithm of the geometric mean.
pub const GEOMETRIC_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AggregateError {
    #[error("cannot aggregate an empty set")]
    EmptySet,
    #[error("generalized-mean power must be finite and nonzero; use the geometric mode for p -> 0")]
    ZeroPower,
    #[error("expected {expected} weights, got {found}")]
    WeightCountMismatch { expected: usize, found: usize },
    #[error("message of dimension {found} does not match set dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("sample budget alpha must be at least 1")]
    InvalidAlpha,
    #[error("sampling requires a nonempty neighborhood")]
    EmptyNeighborhood,
    #[error("importance weights must be finite and positive")]
    NonPositiveImportance,
    #[error("sample contains node {0}, which is not in the intra-edge neighborhood")]
    SampleOutsideNeighborhood(usize),
    #[error(transparent)]
    Hypergraph(#[from] HgraphError),
}

/// Normalizer used by the intra-edge aggregate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    /// `1/|N(v, e)|` (or `1/|sample|` when sampling): weights sum to one.
    #[default]
    IntraEdge,
    /// `1/|N(v)|`, the global-neighborhood normalizer.
    GlobalMainText,
}

/// Which mean is applied at both aggregation levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanKind {
    /// Sign-preserving power mean with exponent `p != 0`.
    Power(f64),
    /// `exp(Σ w ln(max(x, 0) + ε))` with `ε = 1e-12`.
    Geometric,
}

impl Default for MeanKind {
    fn default() -> Self {
        MeanKind::Power(1.0)
    }
}

impl MeanKind {
    pub fn validate(self) -> Result<(), AggregateError> {
        match self {
            MeanKind::Power(p) if p == 0.0 || !p.is_finite() => Err(AggregateError::ZeroPower),
            _ => Ok(()),
        }
    }

    #[inline]
    fn lift(self, x: f64) -> f64 {
        match self {
            MeanKind::Power(p) => float::signed_pow(x, p),
            MeanKind::Geometric => float::ln(x.max(0.0) + GEOMETRIC_EPS),
        }
    }

    #[inline]
    fn lower(self, s: f64) -> f64 {
        match self {
            MeanKind::Power(p) => float::signed_pow(s, 1.0 / p),
            MeanKind::Geometric => float::exp(s),
        }
    }

    /// `∂ mean / ∂ input` for one term of unit weight, given the mean's value.
    #[inline]
    fn partial(self, input: f64, mean: f64) -> f64 {
        match self {
            MeanKind::Power(p) => float::pow_ratio(input, mean, p),
            MeanKind::Geometric => {
                if input > 0.0 {
                    mean / (input + GEOMETRIC_EPS)
                } else {
                    0.0
                }
            }
        }
    }
}

/// Settings shared by both aggregation levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AggregationConfig {
    pub mean: MeanKind,
    /// Per-hyperedge sample budget; `None` aggregates the full neighborhood.
    pub alpha: Option<usize>,
    pub normalization: NormalizationMode,
    /// Scale neighbor features by learned importance weights.
    pub adaptive: bool,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self {
            mean: MeanKind::Power(1.0),
            alpha: None,
            normalization: NormalizationMode::IntraEdge,
            adaptive: false,
        }
    }
}

impl AggregationConfig {
    pub fn power(p: f64) -> Self {
        Self {
            mean: MeanKind::Power(p),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), AggregateError> {
        self.mean.validate()?;
        if self.alpha == Some(0) {
            return Err(AggregateError::InvalidAlpha);
        }
        Ok(())
    }
}

/// Weighted mean of `(weight, value)` terms, summed in ascending term order.
/// Returns 0 for an empty iterator.
fn pool(kind: MeanKind, terms: impl Iterator<Item = (f64, f64)>, scratch: &mut Vec<f64>) -> f64 {
    scratch.clear();
    scratch.extend(terms.map(|(w, x)| w * kind.lift(x)));
    if scratch.is_empty() {
        return 0.0;
    }
    sorted_lower(kind, scratch)
}

/// Lowers the sum of already lifted terms, summed in ascending order.
fn sorted_lower(kind: MeanKind, scratch: &mut Vec<f64>) -> f64 {
    if let MeanKind::Power(_) = kind {
        // exact zeros do not change an ascending sum
        scratch.retain(|&v| v != 0.0);
    }
    scratch.sort_unstable_by(f64::total_cmp);
    kind.lower(scratch.iter().sum())
}

/// Row-compressed view of a matrix. For power means only nonzero entries
/// are kept, since exact zeros do not change an ascending sum.
struct RowView {
    ptr: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
}

impl RowView {
    fn new(m: &Matrix, kind: MeanKind) -> Self {
        let sparse = matches!(kind, MeanKind::Power(_));
        let mut view = Self {
            ptr: Vec::with_capacity(m.rows() + 1),
            col: Vec::new(),
            val: Vec::new(),
        };
        view.ptr.push(0);
        for i in 0..m.rows() {
            for (k, &x) in m.row(i).iter().enumerate() {
                if !(sparse && x == 0.0) {
                    view.col.push(k);
                    view.val.push(x);
                }
            }
            view.ptr.push(view.col.len());
        }
        view
    }

    fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.ptr[i]..self.ptr[i + 1];
        (&self.col[r.clone()], &self.val[r])
    }
}

/// Column-wise [`pool`] over rows: `out[k]` pools `(w, c · x_k)` over the
/// entries `(k, x_k)` of every `(w, c, row)` term, summing each column in
/// ascending value order. Columns without terms get `lower(0)`.
fn pool_rows<'r>(
    kind: MeanKind,
    terms: impl Iterator<Item = (f64, f64, (&'r [usize], &'r [f64]))>,
    out: &mut [f64],
    pairs: &mut Vec<(usize, f64)>,
) {
    let sparse = matches!(kind, MeanKind::Power(_));
    pairs.clear();
    for (w, c, (cols, vals)) in terms {
        for (&k, &x) in cols.iter().zip(vals) {
            let v = w * kind.lift(c * x);
            if !(sparse && v == 0.0) {
                pairs.push((k, v));
            }
        }
    }
    pairs.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    out.fill(kind.lower(0.0));
    let mut i = 0;
    while i < pairs.len() {
        let k = pairs[i].0;
        let mut sum = 0.0;
        while i < pairs.len() && pairs[i].0 == k {
            sum += pairs[i].1;
            i += 1;
        }
        out[k] = kind.lower(sum);
    }
}

/// An unordered collection of equal-length vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageSet {
    dim: usize,
    members: Vec<Vec<f64>>,
}

impl MessageSet {
    pub fn new(dim: usize) -> Self {
        Self { dim, members: Vec::new() }
    }

    pub fn from_vecs(dim: usize, members: Vec<Vec<f64>>) -> Result<Self, AggregateError> {
        let mut s = Self::new(dim);
        for m in members {
            s.push(m)?;
        }
        Ok(s)
    }

    pub fn push(&mut self, v: Vec<f64>) -> Result<(), AggregateError> {
        if v.len() != self.dim {
            return Err(AggregateError::DimensionMismatch {
                expected: self.dim,
                found: v.len(),
            });
        }
        self.members.push(v);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[Vec<f64>] {
        &self.members
    }
}

/// Elementwise weighted generalized mean. Weights are used as given.
pub fn generalized_mean(values: &MessageSet, weights: &[f64], mean: MeanKind) -> Result<Vec<f64>, AggregateError> {
    mean.validate()?;
    if values.is_empty() {
        return Err(AggregateError::EmptySet);
    }
    if weights.len() != values.len() {
        return Err(AggregateError::WeightCountMismatch {
            expected: values.len(),
            found: weights.len(),
        });
    }
    let mut scratch = Vec::with_capacity(values.len());
    Ok((0..values.dim)
        .map(|k| pool(mean, weights.iter().zip(&values.members).map(|(&w, m)| (w, m[k])), &mut scratch))
        .collect())
}

/// Split-compensation weight
/// `(1/|N(v,e)|) · (Σ_{m ∈ split_set} 1/|N(v,e_m)|)^(-1)`.
pub fn split_weight(h: &Hypergraph, v: usize, e: usize, split_set: &[usize]) -> Result<f64, AggregateError> {
    let own = h.intra_edge_neighborhood(v, e)?.len() as f64;
    let mut harmonic = 0.0;
    for &m in split_set {
        harmonic += 1.0 / h.intra_edge_neighborhood(v, m)?.len() as f64;
    }
    if split_set.is_empty() {
        return Err(AggregateError::EmptySet);
    }
    Ok((1.0 / own) / harmonic)
}

fn intra_weight(h: &Hypergraph, v: usize, members: usize, mode: NormalizationMode) -> f64 {
    match mode {
        NormalizationMode::IntraEdge => 1.0 / members as f64,
        NormalizationMode::GlobalMainText => 1.0 / h.neighbor_count(v) as f64,
    }
}

/// `F1` at node `v` over hyperedge `e`.
///
/// `importance` holds one positive weight per node (ignored unless
/// `cfg.adaptive`); `sample` restricts the neighborhood. An empty neighborhood
/// yields the zero vector.
pub fn intra_edge_aggregate(
    h: &Hypergraph,
    x: &FeatureMatrix,
    v: usize,
    e: usize,
    cfg: &AggregationConfig,
    importance: Option<&[f64]>,
    sample: Option<&[usize]>,
) -> Result<Vec<f64>, AggregateError> {
    cfg.validate()?;
    let full = h.intra_edge_neighborhood(v, e)?;
    let members: Vec<usize> = match sample {
        Some(s) => {
            if let Some(&bad) = s.iter().find(|u| full.binary_search(u).is_err()) {
                return Err(AggregateError::SampleOutsideNeighborhood(bad));
            }
            s.to_vec()
        }
        None => full,
    };
    if members.is_empty() {
        return Ok(vec![0.0; x.cols()]);
    }
    let a = intra_weight(h, v, members.len(), cfg.normalization);
    let scale = |j: usize| match (cfg.adaptive, importance) {
        (true, Some(c)) => c[j],
        _ => 1.0,
    };
    let mut scratch = Vec::with_capacity(members.len());
    Ok((0..x.cols())
        .map(|k| pool(cfg.mean, members.iter().map(|&j| (a, scale(j) * x.get(j, k))), &mut scratch))
        .collect())
}

/// `F2`: uniform generalized mean of one message per incident hyperedge.
/// An empty set (isolated node) yields the zero vector.
pub fn inter_edge_aggregate(messages: &MessageSet, cfg: &AggregationConfig) -> Result<Vec<f64>, AggregateError> {
    if messages.is_empty() {
        cfg.validate()?;
        return Ok(vec![0.0; messages.dim()]);
    }
    let w = vec![1.0 / messages.len() as f64; messages.len()];
    generalized_mean(messages, &w, cfg.mean)
}

/// `F2(F1(...))` at one node over its full (or sampled) neighborhoods.
/// `samples`, when given, holds one subset per entry of `E(v)`.
pub fn node_aggregate(
    h: &Hypergraph,
    x: &FeatureMatrix,
    v: usize,
    cfg: &AggregationConfig,
    importance: Option<&[f64]>,
    samples: Option<&[Vec<usize>]>,
) -> Result<Vec<f64>, AggregateError> {
    let mut msgs = MessageSet::new(x.cols());
    for (k, &e) in h.incident_edges(v)?.iter().enumerate() {
        let s = samples.map(|s| s[k].as_slice());
        msgs.push(intra_edge_aggregate(h, x, v, e, cfg, importance, s)?)?;
    }
    inter_edge_aggregate(&msgs, cfg)
}

/// `P_j = C_j / Σ C` over `neighborhood`; `importance` is indexed by node id.
pub fn sampling_distribution(importance: &[f64], neighborhood: &[usize]) -> Result<Vec<f64>, AggregateError> {
    if neighborhood.is_empty() {
        return Err(AggregateError::EmptyNeighborhood);
    }
    let c: Vec<f64> = neighborhood.iter().map(|&j| importance[j]).collect();
    if c.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(AggregateError::NonPositiveImportance);
    }
    let total: f64 = c.iter().sum();
    Ok(c.into_iter().map(|v| v / total).collect())
}

/// Draws `min(alpha, |N(v,e)|)` distinct members of `N(v, e)`, one at a time,
/// each with probability proportional to its importance among the nodes not
/// yet drawn. The result is sorted by node id.
pub fn sample_condensed_neighborhood(
    h: &Hypergraph,
    v: usize,
    e: usize,
    alpha: usize,
    importance: &[f64],
    rng: &mut crate::Rng,
) -> Result<Vec<usize>, AggregateError> {
    if alpha == 0 {
        return Err(AggregateError::InvalidAlpha);
    }
    let full = h.intra_edge_neighborhood(v, e)?;
    if alpha >= full.len() {
        return Ok(full);
    }
    let probs = sampling_distribution(importance, &full)?;
    Ok(draw_without_replacement(&full, probs, alpha, rng))
}

fn draw_without_replacement(items: &[usize], mut weights: Vec<f64>, k: usize, rng: &mut crate::Rng) -> Vec<usize> {
    let mut pool: Vec<usize> = items.to_vec();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = weights.iter().sum();
        let mut u = rng.gen::<f64>() * total;
        let mut pick = pool.len() - 1;
        for (i, &w) in weights.iter().enumerate() {
            if u < w {
                pick = i;
                break;
            }
            u -= w;
        }
        out.push(pool.swap_remove(pick));
        weights.swap_remove(pick);
    }
    out.sort_unstable();
    out
}

/// Per-node structural input of the importance network:
/// `ln(1+|N(v)|), ln(1+|E(v)|), ln(1+|N(v)|/|E(v)|)` (ratio 0 for isolated nodes).
pub fn importance_features(h: &Hypergraph) -> Matrix {
    Matrix::from_fn(h.num_nodes(), 3, |v, k| {
        let n = h.neighbor_count(v) as f64;
        let d = h.degree(v) as f64;
        match k {
            0 => float::ln_1p(n),
            1 => float::ln_1p(d),
            _ => float::ln_1p(if d > 0.0 { n / d } else { 0.0 }),
        }
    })
}

/// Learned node importance `C(|N(v)|, |E(v)|)`: a two-hidden-layer network
/// over [`importance_features`] with a softplus output, so `C > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceNet {
    pub hidden: (usize, usize),
    pub activation: Activation,
    layers: [(ParamId, ParamId); 3],
}

impl ImportanceNet {
    /// Registers the network's parameters in `store` under `importance.*`.
    /// The output bias starts at `ln(e - 1)` so every weight starts near 1.
    pub fn init(store: &mut ParamStore, hidden: (usize, usize), activation: Activation, rng: &mut crate::Rng) -> Self {
        let dims = [(3, hidden.0), (hidden.0, hidden.1), (hidden.1, 1)];
        let mut layers = [(ParamId(0), ParamId(0)); 3];
        for (k, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let w = store.insert(alloc::format!("importance.w{}", k + 1), glorot(fan_in, fan_out, rng));
            let bias = if k == 2 { float::ln(core::f64::consts::E - 1.0) } else { 0.0 };
            let b = store.insert(alloc::format!("importance.b{}", k + 1), Matrix::filled(1, fan_out, bias));
            layers[k] = (w, b);
        }
        Self {
            hidden,
            activation,
            layers,
        }
    }

    /// Rebinds a network to parameters already present in `store`.
    pub fn from_store(store: &ParamStore, hidden: (usize, usize), activation: Activation) -> Option<Self> {
        let mut layers = [(ParamId(0), ParamId(0)); 3];
        for (k, layer) in layers.iter_mut().enumerate() {
            *layer = (
                store.id_of(&alloc::format!("importance.w{}", k + 1))?,
                store.id_of(&alloc::format!("importance.b{}", k + 1))?,
            );
        }
        Some(Self {
            hidden,
            activation,
            layers,
        })
    }

    /// Records the network on `tape`; the result is `N x 1`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, features: &Matrix) -> Result<Var, TensorError> {
        let mut h = tape.leaf(features.clone(), false);
        for (k, &(w, b)) in self.layers.iter().enumerate() {
            let wv = tape.param(store, w);
            let bv = tape.param(store, b);
            h = tape.matmul(h, wv)?;
            h = tape.add_row(h, bv)?;
            h = if k < 2 {
                tape.activate(h, self.activation)?
            } else {
                tape.softplus(h)?
            };
        }
        Ok(h)
    }
}

/// `C_v` for every node, evaluated without recording gradients.
pub fn importance_forward(net: &ImportanceNet, store: &ParamStore, h: &Hypergraph) -> Result<Vec<f64>, TensorError> {
    let mut tape = Tape::new();
    let c = net.forward(&mut tape, store, &importance_features(h))?;
    Ok(tape.value(c).as_slice().to_vec())
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut crate::Rng) -> Matrix {
    let bound = float::sqrt(6.0 / (fan_in + fan_out) as f64);
    Matrix::from_fn(fan_in, fan_out, |_, _| rng.gen_range(-bound..bound))
}

/// Which members each node aggregates from, with their weights, laid out
/// node → incident hyperedge ("slot") → member.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationPlan {
    num_nodes: usize,
    slot_ptr: Vec<usize>,
    slot_weight: Vec<f64>,
    member_ptr: Vec<usize>,
    members: Vec<usize>,
    member_weight: Vec<f64>,
}

impl AggregationPlan {
    /// Full neighborhoods.
    pub fn full(h: &Hypergraph, cfg: &AggregationConfig) -> Self {
        Self::build(h, cfg, |_, _, full| full)
    }

    /// Per-hyperedge samples of at most `alpha` members drawn with
    /// probabilities proportional to `importance`. Node `v` draws from its own
    /// stream `derive_seed(seed, v)`. Without `cfg.alpha` this equals [`Self::full`].
    pub fn sampled(h: &Hypergraph, cfg: &AggregationConfig, importance: &[f64], seed: u64) -> Result<Self, AggregateError> {
        let Some(alpha) = cfg.alpha else {
            return Ok(Self::full(h, cfg));
        };
        if alpha == 0 {
            return Err(AggregateError::InvalidAlpha);
        }
        let mut failure = None;
        let mut current = usize::MAX;
        let mut rng = crate::rng_from_seed(0);
        let plan = Self::build(h, cfg, |v, _e, full| {
            if alpha >= full.len() || failure.is_some() {
                return full;
            }
            if v != current {
                current = v;
                rng = crate::rng_from_seed(crate::derive_seed(seed, v as u64));
            }
            match sampling_distribution(importance, &full) {
                Ok(p) => draw_without_replacement(&full, p, alpha, &mut rng),
                Err(err) => {
                    failure = Some(err);
                    full
                }
            }
        });
        match failure {
            Some(err) => Err(err),
            None => Ok(plan),
        }
    }

    fn build(h: &Hypergraph, cfg: &AggregationConfig, mut choose: impl FnMut(usize, usize, Vec<usize>) -> Vec<usize>) -> Self {
        let n = h.num_nodes();
        let mut plan = Self {
            num_nodes: n,
            slot_ptr: Vec::with_capacity(n + 1),
            slot_weight: Vec::new(),
            member_ptr: vec![0],
            members: Vec::new(),
            member_weight: Vec::new(),
        };
        plan.slot_ptr.push(0);
        for v in 0..n {
            let edges = h.incident_edges(v).expect("node in range");
            let b = 1.0 / edges.len().max(1) as f64;
            for &e in edges {
                let full = h.intra_edge_neighborhood(v, e).expect("v is incident to e");
                let chosen = choose(v, e, full);
                let a = if chosen.is_empty() {
                    0.0
                } else {
                    intra_weight(h, v, chosen.len(), cfg.normalization)
                };
                plan.member_weight.extend(core::iter::repeat_n(a, chosen.len()));
                plan.members.extend(chosen);
                plan.member_ptr.push(plan.members.len());
                plan.slot_weight.push(b);
            }
            plan.slot_ptr.push(plan.slot_weight.len());
        }
        plan
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Members aggregated by node `v` within its `k`-th incident hyperedge.
    pub fn slot_members(&self, v: usize, k: usize) -> &[usize] {
        let s = self.slot_ptr[v] + k;
        &self.members[self.member_ptr[s]..self.member_ptr[s + 1]]
    }

    /// Total number of (node, hyperedge, member) terms.
    pub fn num_terms(&self) -> usize {
        self.members.len()
    }

    /// Two-level aggregate of every node. Returns the node aggregates and the
    /// per-slot intra-edge messages.
    pub fn apply(&self, x: &Matrix, importance: Option<&[f64]>, mean: MeanKind) -> (Matrix, Matrix) {
        let d = x.cols();
        let num_slots = self.slot_weight.len();
        let mut messages = Matrix::zeros(num_slots, d);
        let mut out = Matrix::zeros(self.num_nodes, d);
        let mut pairs = Vec::new();
        let scale = |j: usize| importance.map_or(1.0, |c| c[j]);
        let xv = RowView::new(x, mean);
        for s in 0..num_slots {
            let range = self.member_ptr[s]..self.member_ptr[s + 1];
            if range.is_empty() {
                continue;
            }
            let terms = self.members[range.clone()]
                .iter()
                .zip(&self.member_weight[range])
                .map(|(&j, &a)| (a, scale(j), xv.row(j)));
            pool_rows(mean, terms, messages.row_mut(s), &mut pairs);
        }
        let mv = RowView::new(&messages, mean);
        for v in 0..self.num_nodes {
            let slots = self.slot_ptr[v]..self.slot_ptr[v + 1];
            if slots.is_empty() {
                continue;
            }
            let terms = slots.map(|s| (self.slot_weight[s], 1.0, mv.row(s)));
            pool_rows(mean, terms, out.row_mut(v), &mut pairs);
        }
        (out, messages)
    }

    /// Records the aggregation on `tape`. `importance` is an `N x 1` variable
    /// of positive weights (adaptive mode) or `None`.
    pub fn record(self: &Rc<Self>, tape: &mut Tape, x: Var, importance: Option<Var>, mean: MeanKind) -> Result<Var, TensorError> {
        let c: Option<Vec<f64>> = importance.map(|c| tape.value(c).as_slice().to_vec());
        let (out, messages) = self.apply(tape.value(x), c.as_deref(), mean);
        let op = Box::new(HyperAggregate {
            plan: Rc::clone(self),
            mean,
            messages,
        });
        match importance {
            Some(c) => tape.custom(&[x, c], out, op),
            None => tape.custom(&[x], out, op),
        }
    }
}

struct HyperAggregate {
    plan: Rc<AggregationPlan>,
    mean: MeanKind,
    messages: Matrix,
}

impl CustomOp for HyperAggregate {
    fn name(&self) -> &'static str {
        "hyper_aggregate"
    }

    fn backward(&self, inputs: &[&Matrix], output: &Matrix, g: &Matrix) -> Vec<Option<Matrix>> {
        let plan = &*self.plan;
        let x = inputs[0];
        let c = inputs.get(1).map(|m| m.as_slice());
        let d = x.cols();
        let mut gx = Matrix::zeros(x.rows(), d);
        let mut gc = c.map(|c| Matrix::zeros(c.len(), 1));
        let mut gm = vec![0.0; d];
        for v in 0..plan.num_nodes {
            for s in plan.slot_ptr[v]..plan.slot_ptr[v + 1] {
                let b = plan.slot_weight[s];
                for (k, gmk) in gm.iter_mut().enumerate() {
                    let m = self.messages.get(s, k);
                    *gmk = g.get(v, k) * b * self.mean.partial(m, output.get(v, k));
                }
                for t in plan.member_ptr[s]..plan.member_ptr[s + 1] {
                    let j = plan.members[t];
                    let a = plan.member_weight[t];
                    let cj = c.map_or(1.0, |c| c[j]);
                    let mut gcj = 0.0;
                    for (k, &gmk) in gm.iter().enumerate() {
                        if gmk == 0.0 {
                            continue;
                        }
                        let xjk = x.get(j, k);
                        let gy = gmk * a * self.mean.partial(cj * xjk, self.messages.get(s, k));
                        gx.as_mut_slice()[j * d + k] += gy * cj;
                        gcj += gy * xjk;
                    }
                    if let Some(gc) = gc.as_mut() {
                        gc.as_mut_slice()[j] += gcj;
                    }
                }
            }
        }
        let mut grads = vec![Some(gx)];
        if let Some(gc) = gc {
            grads.push(Some(gc));
        }
        grads
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_check, GradCheckConfig};
    use crate::rng_from_seed;

    fn set(rows: &[&[f64]]) -> MessageSet {
        MessageSet::from_vecs(rows[0].len(), rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn generalized_mean_examples() {
        let s = set(&[&[1.0], &[2.0], &[3.0]]);
        let third = [1.0 / 3.0; 3];
        assert!((generalized_mean(&s, &third, MeanKind::Power(1.0)).unwrap()[0] - 2.0).abs() < 1e-15);
        let s2 = set(&[&[3.0], &[4.0]]);
        let m = generalized_mean(&s2, &[0.5, 0.5], MeanKind::Power(2.0)).unwrap()[0];
        assert!((m - libm::sqrt(12.5)).abs() < 1e-12);
        let big = generalized_mean(&s, &third, MeanKind::Power(64.0)).unwrap()[0];
        assert!((big - 3.0).abs() / 3.0 < 0.02, "{big}");
        assert_eq!(generalized_mean(&s, &third, MeanKind::Power(0.0)), Err(AggregateError::ZeroPower));
        assert_eq!(
            generalized_mean(&MessageSet::new(1), &[], MeanKind::Power(1.0)),
            Err(AggregateError::EmptySet)
        );
    }

    #[test]
    fn geometric_mode() {
        let s = set(&[&[1.0], &[4.0]]);
        let g = generalized_mean(&s, &[0.5, 0.5], MeanKind::Geometric).unwrap()[0];
        assert!((g - 2.0).abs() < 1e-9);
    }

    fn split_fixture() -> Hypergraph {
        // e0 = original (v=0 with 4 neighbors), e1/e2 = its halves, e3/e4 = two n-sized copies
        Hypergraph::new(
            9,
            &[vec![0, 1, 2, 3, 4], vec![0, 1, 2], vec![0, 3, 4], vec![0, 5, 6], vec![0, 7, 8]],
        )
        .unwrap()
    }

    #[test]
    fn split_weight_examples() {
        let h = split_fixture();
        assert_eq!(split_weight(&h, 0, 0, &[0]).unwrap(), 1.0);
        assert_eq!(split_weight(&h, 0, 3, &[3, 4]).unwrap(), 0.5);
        assert_eq!(split_weight(&h, 0, 0, &[1, 2]).unwrap(), 0.25);
        assert!(matches!(split_weight(&h, 1, 3, &[3]), Err(AggregateError::Hypergraph(_))));
    }

    fn two_edges() -> (Hypergraph, Matrix) {
        let h = Hypergraph::new(5, &[vec![0, 1, 2], vec![0, 3], vec![3, 4]]).unwrap();
        let x = Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.0], [3.0, 2.0], [5.0, 1.0], [2.0, 2.0]]).unwrap();
        (h, x)
    }

    #[test]
    fn intra_edge_examples() {
        let (h, x) = two_edges();
        let cfg = AggregationConfig::power(1.0);
        assert_eq!(intra_edge_aggregate(&h, &x, 0, 0, &cfg, None, None).unwrap(), vec![2.0, 1.0]);
        for p in [0.5, 1.0, 3.0] {
            let cfg = AggregationConfig::power(p);
            let m = intra_edge_aggregate(&h, &x, 0, 1, &cfg, None, None).unwrap();
            assert!((m[0] - 5.0).abs() < 1e-12 && (m[1] - 1.0).abs() < 1e-12, "p={p}: {m:?}");
        }
        let c = [2.5; 5];
        let adaptive = AggregationConfig { adaptive: true, ..cfg };
        let scaled = intra_edge_aggregate(&h, &x, 0, 0, &adaptive, Some(&c), None).unwrap();
        assert_eq!(scaled, vec![5.0, 2.5]);
        assert!(matches!(
            intra_edge_aggregate(&h, &x, 0, 0, &cfg, None, Some(&[4])),
            Err(AggregateError::SampleOutsideNeighborhood(4))
        ));
    }

    #[test]
    fn inter_edge_examples() {
        let cfg = AggregationConfig::power(1.0);
        let one = set(&[&[3.0, 7.0]]);
        assert_eq!(inter_edge_aggregate(&one, &cfg).unwrap(), vec![3.0, 7.0]);
        let two = set(&[&[2.0, 0.0], &[0.0, 2.0]]);
        assert_eq!(inter_edge_aggregate(&two, &cfg).unwrap(), vec![1.0, 1.0]);
        assert_eq!(inter_edge_aggregate(&MessageSet::new(3), &cfg).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn sampling_distribution_examples() {
        let c = [1.0, 1.0, 2.0];
        assert_eq!(sampling_distribution(&c, &[0, 1, 2]).unwrap(), vec![0.25, 0.25, 0.5]);
        assert_eq!(sampling_distribution(&[3.0; 4], &[0, 1, 2, 3]).unwrap(), vec![0.25; 4]);
        assert_eq!(sampling_distribution(&c, &[]), Err(AggregateError::EmptyNeighborhood));
        assert_eq!(
            sampling_distribution(&[1.0, 0.0], &[0, 1]),
            Err(AggregateError::NonPositiveImportance)
        );
    }

    #[test]
    fn condensed_neighborhood_sampling() {
        let h = Hypergraph::new(6, &[vec![0, 1, 2, 3, 4, 5]]).unwrap();
        let c = [1.0; 6];
        let mut rng = rng_from_seed(3);
        assert_eq!(
            sample_condensed_neighborhood(&h, 0, 0, 9, &c, &mut rng).unwrap(),
            vec![1, 2, 3, 4, 5]
        );
        let a = sample_condensed_neighborhood(&h, 0, 0, 2, &c, &mut rng_from_seed(11)).unwrap();
        let b = sample_condensed_neighborhood(&h, 0, 0, 2, &c, &mut rng_from_seed(11)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        assert!(a.iter().all(|&u| u != 0));

        let mut c = [1e-4; 6];
        c[4] = 1e4;
        let mut hits = 0;
        for seed in 0..2000 {
            let s = sample_condensed_neighborhood(&h, 0, 0, 1, &c, &mut rng_from_seed(seed)).unwrap();
            hits += usize::from(s == [4]);
        }
        assert!(hits >= 1990, "{hits}");
    }

    #[test]
    fn importance_net_is_positive_and_structural() {
        let h = Hypergraph::new(6, &[vec![0, 1, 2], vec![3, 4, 5]]).unwrap();
        let mut store = ParamStore::new();
        let net = ImportanceNet::init(&mut store, (8, 8), Activation::Relu, &mut rng_from_seed(5));
        let c = importance_forward(&net, &store, &h).unwrap();
        assert!(c.iter().all(|&v| v > 0.0 && v.is_finite()));
        assert!(c.iter().all(|&v| v == c[0]));
    }

    #[test]
    fn plan_matches_per_node_composition() {
        let (h, x) = two_edges();
        for mean in [MeanKind::Power(1.0), MeanKind::Power(2.0), MeanKind::Geometric] {
            let cfg = AggregationConfig {
                mean,
                ..AggregationConfig::default()
            };
            let (out, _) = AggregationPlan::full(&h, &cfg).apply(&x, None, mean);
            for v in 0..5 {
                assert_eq!(out.row(v), node_aggregate(&h, &x, v, &cfg, None, None).unwrap().as_slice());
            }
        }
    }

    #[test]
    fn plan_gradient_matches_finite_differences() {
        let h = Hypergraph::new(6, &[vec![0, 1, 2, 3], vec![1, 4], vec![2, 4, 5], vec![0, 5]]).unwrap();
        let mut rng = rng_from_seed(8);
        for mean in [
            MeanKind::Power(1.0),
            MeanKind::Power(2.0),
            MeanKind::Power(3.5),
            MeanKind::Geometric,
        ] {
            let mut store = ParamStore::new();
            let xid = store.insert("x", Matrix::from_fn(6, 3, |_, _| rng.gen_range(0.2..1.5)));
            let cid = store.insert("c", Matrix::from_fn(6, 1, |_, _| rng.gen_range(0.5..2.0)));
            let proj = Matrix::from_fn(3, 1, |_, _| rng.gen_range(-1.0..1.0));
            let cfg = AggregationConfig {
                mean,
                adaptive: true,
                ..AggregationConfig::default()
            };
            let plan = Rc::new(AggregationPlan::full(&h, &cfg));
            let f = |s: &ParamStore, t: &mut Tape| {
                let x = t.param(s, xid);
                let c = t.param(s, cid);
                let y = plan.record(t, x, Some(c), mean)?;
                let w = t.leaf(proj.clone(), false);
                let z = t.matmul(y, w)?;
                t.sum(z)
            };
            let r = finite_diff_check(&f, &mut store, &GradCheckConfig::tight()).unwrap();
            assert!(r.passed, "{mean:?}: {r:?}");
        }
    }
}
