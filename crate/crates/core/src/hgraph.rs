//! Hypergraph data model, neighborhood queries, structural transforms and
//! connectedness statistics.
//!
//! A [`Hypergraph`] stores every hyperedge as a sorted list of distinct node
//! ids. Two indexes are derived at build time and never mutated afterwards:
//! `E(v)`, the incident hyperedges of each node, and `N(v)`, the global
//! neighborhood of each node (every node sharing at least one hyperedge with
//! `v`, excluding `v`). The intra-edge neighborhood `N(v, e)` is `e` minus `v`.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use thiserror::Error;

use crate::matrix::Matrix;

/// Per-node dense features; row `i` belongs to node `i`.
pub type FeatureMatrix = Matrix;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HgraphError {
    #[error("node id {node} in hyperedge {edge} is out of range (num_nodes = {num_nodes})")]
    OutOfRangeNodeId { edge: usize, node: usize, num_nodes: usize },
    #[error("hyperedge {edge} lists node {node} more than once")]
    DuplicateNodeInEdge { edge: usize, node: usize },
    #[error("hyperedge {edge} has {size} member(s); at least 2 are required")]
    SingletonEdge { edge: usize, size: usize },
    #[error("node {node} is not a member of hyperedge {edge}")]
    NodeNotInEdge { node: usize, edge: usize },
    #[error("node {node} does not exist (num_nodes = {num_nodes})")]
    UnknownNode { node: usize, num_nodes: usize },
    #[error("hyperedge {edge} does not exist ({num_edges} hyperedges)")]
    UnknownEdge { edge: usize, num_edges: usize },
    #[error("size mismatch: expected {expected}, found {found}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("not a permutation: {0}")]
    InvalidPermutation(&'static str),
    #[error("invalid split plan: {0}")]
    InvalidSplitPlan(&'static str),
}

/// An immutable hypergraph with derived incidence and neighborhood indexes.
#[derive(Debug, Clone)]
pub struct Hypergraph {
    num_nodes: usize,
    hyperedges: Vec<Vec<usize>>,
    node_to_edges: Vec<Vec<usize>>,
    neighbor_index: Vec<Vec<usize>>,
}

/// Equality ignores the order of hyperedges and of members within a hyperedge.
impl PartialEq for Hypergraph {
    fn eq(&self, other: &Self) -> bool {
        if self.num_nodes != other.num_nodes || self.hyperedges.len() != other.hyperedges.len() {
            return false;
        }
        let mut a: Vec<&Vec<usize>> = self.hyperedges.iter().collect();
        let mut b: Vec<&Vec<usize>> = other.hyperedges.iter().collect();
        a.sort();
        b.sort();
        a == b
    }
}

impl Eq for Hypergraph {}

impl Hypergraph {
    /// Validates the hyperedge lists and derives `E(v)` and `N(v)`.
    pub fn new<E: AsRef<[usize]>>(num_nodes: usize, hyperedges: &[E]) -> Result<Self, HgraphError> {
        let mut edges = Vec::with_capacity(hyperedges.len());
        for (ei, e) in hyperedges.iter().enumerate() {
            let e = e.as_ref();
            let mut members = e.to_vec();
            for &v in &members {
                if v >= num_nodes {
                    return Err(HgraphError::OutOfRangeNodeId {
                        edge: ei,
                        node: v,
                        num_nodes,
                    });
                }
            }
            members.sort_unstable();
            if let Some(w) = members.windows(2).find(|w| w[0] == w[1]) {
                return Err(HgraphError::DuplicateNodeInEdge { edge: ei, node: w[0] });
            }
            if members.len() < 2 {
                return Err(HgraphError::SingletonEdge {
                    edge: ei,
                    size: members.len(),
                });
            }
            edges.push(members);
        }
        Ok(Self::from_sorted_edges(num_nodes, edges))
    }

    fn from_sorted_edges(num_nodes: usize, hyperedges: Vec<Vec<usize>>) -> Self {
        let (node_to_edges, neighbor_index) = derive_indexes(num_nodes, &hyperedges);
        Self {
            num_nodes,
            hyperedges,
            node_to_edges,
            neighbor_index,
        }
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    #[inline]
    pub fn num_edges(&self) -> usize {
        self.hyperedges.len()
    }

    pub fn hyperedges(&self) -> &[Vec<usize>] {
        &self.hyperedges
    }

    pub fn edge(&self, e: usize) -> Result<&[usize], HgraphError> {
        self.hyperedges.get(e).map(Vec::as_slice).ok_or(HgraphError::UnknownEdge {
            edge: e,
            num_edges: self.hyperedges.len(),
        })
    }

    /// `E(v)`: ids of the hyperedges incident to `v`, ascending.
    pub fn incident_edges(&self, v: usize) -> Result<&[usize], HgraphError> {
        self.check_node(v)?;
        Ok(&self.node_to_edges[v])
    }

    /// `|E(v)|` without the range check.
    #[inline]
    pub fn degree(&self, v: usize) -> usize {
        self.node_to_edges[v].len()
    }

    /// `|N(v)|` without the range check.
    #[inline]
    pub fn neighbor_count(&self, v: usize) -> usize {
        self.neighbor_index[v].len()
    }

    /// `Σ_e |e|`, the total number of incidences.
    pub fn total_incidence(&self) -> usize {
        self.hyperedges.iter().map(Vec::len).sum()
    }

    pub fn contains(&self, e: usize, v: usize) -> bool {
        self.hyperedges.get(e).is_some_and(|members| members.binary_search(&v).is_ok())
    }

    /// `N(v, e)`: the members of `e` other than `v`, ascending.
    pub fn intra_edge_neighborhood(&self, v: usize, e: usize) -> Result<Vec<usize>, HgraphError> {
        self.check_node(v)?;
        let members = self.edge(e)?;
        if members.binary_search(&v).is_err() {
            return Err(HgraphError::NodeNotInEdge { node: v, edge: e });
        }
        Ok(members.iter().copied().filter(|&u| u != v).collect())
    }

    /// `N(v)`: union of `N(v, e)` over `E(v)`, ascending. Empty for isolated nodes.
    pub fn global_neighborhood(&self, v: usize) -> Result<&[usize], HgraphError> {
        self.check_node(v)?;
        Ok(&self.neighbor_index[v])
    }

    pub fn isolated_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes).filter(|&v| self.node_to_edges[v].is_empty()).collect()
    }

    /// Rebuilds `E(v)` and `N(v)` from the hyperedges and compares with the stored indexes.
    pub fn indexes_consistent(&self) -> bool {
        let (n2e, nbr) = derive_indexes(self.num_nodes, &self.hyperedges);
        n2e == self.node_to_edges && nbr == self.neighbor_index
    }

    fn check_node(&self, v: usize) -> Result<(), HgraphError> {
        if v < self.num_nodes {
            Ok(())
        } else {
            Err(HgraphError::UnknownNode {
                node: v,
                num_nodes: self.num_nodes,
            })
        }
    }

    /// Relabels nodes through `perm` and permutes feature rows the same way:
    /// node `i` becomes `perm[i]` and row `i` of `x` becomes row `perm[i]`.
    /// Hyperedge order is preserved.
    pub fn apply_permutation(&self, x: &FeatureMatrix, perm: &PermutationMap) -> Result<(Hypergraph, FeatureMatrix), HgraphError> {
        if perm.len() != self.num_nodes {
            return Err(HgraphError::SizeMismatch {
                expected: self.num_nodes,
                found: perm.len(),
            });
        }
        if x.rows() != self.num_nodes {
            return Err(HgraphError::SizeMismatch {
                expected: self.num_nodes,
                found: x.rows(),
            });
        }
        let h = self.relabel(perm);
        let mut px = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            px.row_mut(perm.apply(i)).copy_from_slice(x.row(i));
        }
        Ok((h, px))
    }

    /// Structure-only relabeling; see [`Hypergraph::apply_permutation`].
    pub fn relabel(&self, perm: &PermutationMap) -> Hypergraph {
        let edges = self
            .hyperedges
            .iter()
            .map(|e| {
                let mut m: Vec<usize> = e.iter().map(|&v| perm.apply(v)).collect();
                m.sort_unstable();
                m
            })
            .collect();
        Hypergraph::from_sorted_edges(self.num_nodes, edges)
    }

    /// Replaces `plan.target_edge` by the plan's parts, appended after the
    /// remaining hyperedges in plan order. The ids of the new hyperedges are
    /// therefore `num_edges() - 1 .. num_edges() - 1 + parts.len()`.
    pub fn split_hyperedge(&self, plan: &SplitPlan) -> Result<Hypergraph, HgraphError> {
        plan.validate(self)?;
        let mut edges: Vec<Vec<usize>> = self
            .hyperedges
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != plan.target_edge)
            .map(|(_, e)| e.clone())
            .collect();
        for part in &plan.parts {
            let mut p = part.clone();
            p.sort_unstable();
            edges.push(p);
        }
        Ok(Hypergraph::from_sorted_edges(self.num_nodes, edges))
    }

    /// Every pair of nodes co-occurring in some hyperedge, as `(a, b)` with `a < b`.
    pub fn clique_expansion(&self) -> BTreeSet<(usize, usize)> {
        let mut out = BTreeSet::new();
        for e in &self.hyperedges {
            for (i, &a) in e.iter().enumerate() {
                for &b in &e[i + 1..] {
                    out.insert((a, b));
                }
            }
        }
        out
    }

    /// Keeps the listed nodes, relabeled `keep[k] -> k`. Hyperedges are
    /// restricted to kept members and dropped when fewer than two remain.
    pub fn subhypergraph(&self, keep: &[usize]) -> Result<Hypergraph, HgraphError> {
        let mut new_id = vec![usize::MAX; self.num_nodes];
        for (k, &v) in keep.iter().enumerate() {
            self.check_node(v)?;
            if new_id[v] != usize::MAX {
                return Err(HgraphError::InvalidPermutation("node listed twice in keep set"));
            }
            new_id[v] = k;
        }
        let edges = self
            .hyperedges
            .iter()
            .filter_map(|e| {
                let mut m: Vec<usize> = e.iter().filter_map(|&v| (new_id[v] != usize::MAX).then_some(new_id[v])).collect();
                m.sort_unstable();
                (m.len() >= 2).then_some(m)
            })
            .collect();
        Ok(Hypergraph::from_sorted_edges(keep.len(), edges))
    }

    /// `|N(v)| / |E(v)|` per node plus summary statistics over nodes with at
    /// least one incident hyperedge.
    pub fn connectedness_stats(&self, bins: usize) -> ConnectednessStats {
        let ratios: Vec<Option<f64>> = (0..self.num_nodes)
            .map(|v| {
                let deg = self.node_to_edges[v].len();
                (deg > 0).then(|| self.neighbor_index[v].len() as f64 / deg as f64)
            })
            .collect();
        let isolated = self.isolated_nodes();
        let mut defined: Vec<f64> = ratios.iter().flatten().copied().collect();
        defined.sort_unstable_by(f64::total_cmp);
        let (mean, median, min, max) = if defined.is_empty() {
            (0.0, 0.0, 0.0, 0.0)
        } else {
            let n = defined.len();
            let mean = defined.iter().sum::<f64>() / n as f64;
            let median = if n % 2 == 1 {
                defined[n / 2]
            } else {
                0.5 * (defined[n / 2 - 1] + defined[n / 2])
            };
            (mean, median, defined[0], defined[n - 1])
        };
        let histogram = Histogram::build(&defined, bins.max(1), min, max);
        ConnectednessStats {
            ratios,
            isolated,
            mean,
            median,
            max,
            histogram,
        }
    }
}

fn derive_indexes(num_nodes: usize, edges: &[Vec<usize>]) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let mut node_to_edges = vec![Vec::new(); num_nodes];
    for (ei, e) in edges.iter().enumerate() {
        for &v in e {
            node_to_edges[v].push(ei);
        }
    }
    let mut neighbor_index = vec![Vec::new(); num_nodes];
    for v in 0..num_nodes {
        let mut nb: Vec<usize> = node_to_edges[v]
            .iter()
            .flat_map(|&ei| edges[ei].iter().copied())
            .filter(|&u| u != v)
            .collect();
        nb.sort_unstable();
        nb.dedup();
        neighbor_index[v] = nb;
    }
    (node_to_edges, neighbor_index)
}

/// A bijection on node ids; `perm[i]` is the image of node `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationMap {
    perm: Vec<usize>,
}

impl PermutationMap {
    pub fn new(perm: Vec<usize>) -> Result<Self, HgraphError> {
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            if p >= perm.len() {
                return Err(HgraphError::InvalidPermutation("image out of range"));
            }
            if seen[p] {
                return Err(HgraphError::InvalidPermutation("image repeated"));
            }
            seen[p] = true;
        }
        Ok(Self { perm })
    }

    pub fn identity(n: usize) -> Self {
        Self { perm: (0..n).collect() }
    }

    /// Exchanges `a` and `b`, fixing everything else.
    pub fn transposition(n: usize, a: usize, b: usize) -> Self {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.swap(a, b);
        Self { perm }
    }

    /// Uniformly random permutation (Fisher–Yates).
    pub fn random(n: usize, rng: &mut crate::Rng) -> Self {
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            perm.swap(i, j);
        }
        Self { perm }
    }

    #[inline]
    pub fn apply(&self, i: usize) -> usize {
        self.perm[i]
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.perm
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.perm.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            inv[p] = i;
        }
        Self { perm: inv }
    }

    /// Row `perm[i]` of the result is row `i` of `m`.
    pub fn permute_rows(&self, m: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(m.rows(), m.cols());
        for i in 0..m.rows() {
            out.row_mut(self.apply(i)).copy_from_slice(m.row(i));
        }
        out
    }
}

/// Replacement of one hyperedge by `r >= 2` hyperedges that all contain `pivot`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub target_edge: usize,
    pub pivot_node: usize,
    /// Each part includes the pivot.
    pub parts: Vec<Vec<usize>>,
}

impl SplitPlan {
    /// Builds a plan from groups of non-pivot members; the pivot is added to each group.
    pub fn from_groups(target_edge: usize, pivot_node: usize, groups: Vec<Vec<usize>>) -> Self {
        let parts = groups
            .into_iter()
            .map(|mut g| {
                g.push(pivot_node);
                g.sort_unstable();
                g
            })
            .collect();
        Self {
            target_edge,
            pivot_node,
            parts,
        }
    }

    pub fn num_parts(&self) -> usize {
        self.parts.len()
    }

    /// Checks the plan against `h`: the parts, minus the pivot, must partition
    /// the target edge minus the pivot, every part must contain the pivot and at
    /// least one other node, and there must be at least two parts.
    pub fn validate(&self, h: &Hypergraph) -> Result<(), HgraphError> {
        let target = h.edge(self.target_edge)?;
        if target.binary_search(&self.pivot_node).is_err() {
            return Err(HgraphError::InvalidSplitPlan("pivot is not in the target hyperedge"));
        }
        if self.parts.len() < 2 {
            return Err(HgraphError::InvalidSplitPlan("a split needs at least two parts"));
        }
        let mut covered = BTreeSet::new();
        for part in &self.parts {
            if !part.contains(&self.pivot_node) {
                return Err(HgraphError::InvalidSplitPlan("part does not contain the pivot"));
            }
            let mut others = 0;
            let mut local = BTreeSet::new();
            for &v in part {
                if !local.insert(v) {
                    return Err(HgraphError::InvalidSplitPlan("node repeated within a part"));
                }
                if v == self.pivot_node {
                    continue;
                }
                if target.binary_search(&v).is_err() {
                    return Err(HgraphError::InvalidSplitPlan("part has a node outside the target hyperedge"));
                }
                if !covered.insert(v) {
                    return Err(HgraphError::InvalidSplitPlan("parts share a non-pivot node"));
                }
                others += 1;
            }
            if others == 0 {
                return Err(HgraphError::InvalidSplitPlan("part has no node besides the pivot"));
            }
        }
        if covered.len() != target.len() - 1 {
            return Err(HgraphError::InvalidSplitPlan("parts do not cover the target hyperedge"));
        }
        Ok(())
    }
}

/// Result of [`Hypergraph::connectedness_stats`].
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConnectednessStats {
    /// `None` for isolated nodes, where the ratio is undefined.
    pub ratios: Vec<Option<f64>>,
    pub isolated: Vec<usize>,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    pub histogram: Histogram,
}

/// Equal-width histogram. `edges` has `counts.len() + 1` entries; the last bin is closed.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    fn build(values: &[f64], bins: usize, min: f64, max: f64) -> Self {
        let width = (max - min) / bins as f64;
        let edges = (0..=bins).map(|k| min + width * k as f64).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let k = if width > 0.0 {
                (((v - min) / width) as usize).min(bins - 1)
            } else {
                0
            };
            counts[k] += 1;
        }
        Self { edges, counts }
    }
}

/// The Fano plane with nodes `v1..v7` mapped to ids `0..6`.
pub fn fano_plane() -> Hypergraph {
    const LINES: [[usize; 3]; 7] = [[1, 2, 6], [1, 3, 4], [1, 5, 7], [2, 3, 5], [2, 4, 7], [3, 6, 7], [4, 5, 6]];
    let edges: Vec<Vec<usize>> = LINES.iter().map(|l| l.iter().map(|v| v - 1).collect()).collect();
    Hypergraph::new(7, &edges).expect("fano plane is well formed")
}

/// The Fano plane with `v2` and `v3` exchanged.
pub fn fano_plane_swapped() -> Hypergraph {
    fano_plane().relabel(&PermutationMap::transposition(7, 1, 2))
}
