//! Reproducible synthetic hypergraphs and feature matrices.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::hgraph::{Hypergraph, SplitPlan};
use crate::matrix::Matrix;
use crate::Rng;

/// `m` hyperedges with sizes uniform in `min_size..=max_size`, members
/// uniform without replacement.
pub fn random_hypergraph(n: usize, m: usize, min_size: usize, max_size: usize, rng: &mut Rng) -> Hypergraph {
    assert!(2 <= min_size && min_size <= max_size && max_size <= n);
    let nodes: Vec<usize> = (0..n).collect();
    let edges: Vec<Vec<usize>> = (0..m)
        .map(|_| {
            let k = rng.gen_range(min_size..=max_size);
            nodes.choose_multiple(rng, k).copied().collect()
        })
        .collect();
    Hypergraph::new(n, &edges).expect("generated hyperedges are valid")
}

/// `k`-uniform hypergraph where every node appears in exactly `degree`
/// hyperedges (`n · degree` must be divisible by `k`). Members of one
/// hyperedge are distinct.
pub fn regular_uniform_hypergraph(n: usize, k: usize, degree: usize, rng: &mut Rng) -> Hypergraph {
    assert!(k >= 2 && n >= k && (n * degree).is_multiple_of(k));
    let mut slots: Vec<usize> = (0..n).flat_map(|v| core::iter::repeat_n(v, degree)).collect();
    loop {
        slots.shuffle(rng);
        let edges: Vec<Vec<usize>> = slots.chunks(k).map(|c| c.to_vec()).collect();
        if let Ok(h) = Hypergraph::new(n, &edges) {
            return h;
        }
        // a chunk repeated a node; repair by swapping with random slots
        for c in 0..edges.len() {
            for i in c * k..(c + 1) * k {
                while slots[c * k..i].contains(&slots[i]) {
                    let j = rng.gen_range(0..slots.len());
                    slots.swap(i, j);
                }
            }
        }
        let edges: Vec<Vec<usize>> = slots.chunks(k).map(|c| c.to_vec()).collect();
        if let Ok(h) = Hypergraph::new(n, &edges) {
            return h;
        }
    }
}

/// Simple undirected graph with `m` distinct edges, as size-2 hyperedges.
pub fn random_graph(n: usize, m: usize, rng: &mut Rng) -> Hypergraph {
    assert!(m <= n * (n - 1) / 2);
    let mut seen = alloc::collections::BTreeSet::new();
    while seen.len() < m {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a != b {
            seen.insert((a.min(b), a.max(b)));
        }
    }
    let edges: Vec<[usize; 2]> = seen.into_iter().map(|(a, b)| [a, b]).collect();
    Hypergraph::new(n, &edges).expect("distinct pairs")
}

/// Entries uniform in `[0, 1)`.
pub fn random_features(n: usize, d: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_fn(n, d, |_, _| rng.gen::<f64>())
}

/// A random split of hyperedge `e` around a random member: the other members
/// are shuffled and cut into `2..=max_parts` non-empty groups of random sizes.
/// Returns `None` when `e` has fewer than three members.
pub fn random_split_plan(h: &Hypergraph, e: usize, max_parts: usize, rng: &mut Rng) -> Option<SplitPlan> {
    let members = h.edge(e).ok()?;
    if members.len() < 3 {
        return None;
    }
    let pivot = *members.choose(rng)?;
    let mut others: Vec<usize> = members.iter().copied().filter(|&u| u != pivot).collect();
    others.shuffle(rng);
    let r = rng.gen_range(2..=max_parts.max(2).min(others.len()));
    let mut cuts: Vec<usize> = (1..others.len()).collect();
    cuts.shuffle(rng);
    let mut cuts: Vec<usize> = cuts.into_iter().take(r - 1).collect();
    cuts.sort_unstable();
    let mut groups = Vec::with_capacity(r);
    let mut start = 0;
    for c in cuts.into_iter().chain(core::iter::once(others.len())) {
        groups.push(others[start..c].to_vec());
        start = c;
    }
    Some(SplitPlan::from_groups(e, pivot, groups))
}

/// Settings of [`planted_partition`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub nodes: usize,
    pub blocks: usize,
    pub edges_per_block: usize,
    pub min_edge_size: usize,
    pub max_edge_size: usize,
    /// Probability that a hyperedge member is drawn from another block.
    pub noise: f64,
    /// Size of each block's private token vocabulary.
    pub tokens_per_block: usize,
    /// Tokens carried by each node.
    pub tokens_per_node: usize,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            nodes: 200,
            blocks: 2,
            edges_per_block: 20,
            min_edge_size: 8,
            max_edge_size: 16,
            noise: 0.1,
            tokens_per_block: 600,
            tokens_per_node: 3,
        }
    }
}

/// A labeled synthetic node-classification problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Planted {
    pub hypergraph: Hypergraph,
    pub features: Matrix,
    pub labels: Vec<usize>,
}

/// Planted-partition hypergraph: node `v` belongs to block `v % blocks`;
/// each hyperedge picks a home block and draws every member from it, except
/// that with probability `noise` a member comes from another block. Nodes
/// left uncovered are added to a random hyperedge of their block.
///
/// Features are bag-of-token indicators: each node holds `tokens_per_node`
/// tokens from its block's private vocabulary. Vocabularies are large, so two
/// nodes rarely share a token and a node's own row says little about its
/// block unless combined with its neighbors.
pub fn planted_partition(cfg: &PlantedConfig, seed: u64) -> Planted {
    let mut rng = crate::rng_from_seed(seed);
    let b = cfg.blocks.max(1);
    let members_of: Vec<Vec<usize>> = (0..b).map(|k| (0..cfg.nodes).filter(|v| v % b == k).collect()).collect();
    let mut edges: Vec<Vec<usize>> = Vec::new();
    let mut edge_block = Vec::new();
    for home in 0..b {
        for _ in 0..cfg.edges_per_block {
            let size = rng.gen_range(cfg.min_edge_size..=cfg.max_edge_size);
            let mut e: Vec<usize> = Vec::with_capacity(size);
            let mut guard = 0;
            while e.len() < size && guard < 100 * size {
                guard += 1;
                let block = if b > 1 && rng.gen::<f64>() < cfg.noise {
                    (home + rng.gen_range(1..b)) % b
                } else {
                    home
                };
                let u = *members_of[block].choose(&mut rng).expect("non-empty block");
                if !e.contains(&u) {
                    e.push(u);
                }
            }
            edges.push(e);
            edge_block.push(home);
        }
    }
    let mut covered = vec![false; cfg.nodes];
    for e in &edges {
        for &u in e {
            covered[u] = true;
        }
    }
    for (v, _) in covered.iter().enumerate().filter(|(_, &c)| !c) {
        let own: Vec<usize> = (0..edges.len()).filter(|&i| edge_block[i] == v % b).collect();
        let i = *own.choose(&mut rng).expect("edges_per_block > 0");
        edges[i].push(v);
    }
    let d = b * cfg.tokens_per_block;
    let mut features = Matrix::zeros(cfg.nodes, d);
    for v in 0..cfg.nodes {
        let base = (v % b) * cfg.tokens_per_block;
        let toks: Vec<usize> = (0..cfg.tokens_per_block)
            .collect::<Vec<_>>()
            .choose_multiple(&mut rng, cfg.tokens_per_node)
            .copied()
            .collect();
        for t in toks {
            features.set(v, base + t, 1.0);
        }
    }
    Planted {
        hypergraph: Hypergraph::new(cfg.nodes, &edges).expect("generated hyperedges are valid"),
        features,
        labels: (0..cfg.nodes).map(|v| v % b).collect(),
    }
}

/// Labeled collection for hypergraph-level classification: class 0 graphs
/// use small hyperedges, class 1 graphs use large ones. Node features are
/// constant, so only structure separates the classes.
pub fn hypergraph_collection(count: usize, nodes: usize, seed: u64) -> Vec<(Hypergraph, Matrix, usize)> {
    let mut rng = crate::rng_from_seed(seed);
    (0..count)
        .map(|i| {
            let class = i % 2;
            let (lo, hi) = if class == 0 { (2, 3) } else { (nodes / 2, nodes - 1) };
            let h = random_hypergraph(nodes, nodes / 2, lo, hi, &mut rng);
            let x = Matrix::filled(nodes, 2, 1.0);
            (h, x, class)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regular_uniform_has_constant_degree() {
        let mut rng = crate::rng_from_seed(1);
        let h = regular_uniform_hypergraph(60, 4, 3, &mut rng);
        assert_eq!(h.num_edges(), 45);
        assert!((0..60).all(|v| h.degree(v) == 3));
        assert!(h.hyperedges().iter().all(|e| e.len() == 4));
        assert_eq!(h.total_incidence(), 180);
    }

    #[test]
    fn random_split_plans_are_valid() {
        let mut rng = crate::rng_from_seed(2);
        for _ in 0..200 {
            let h = random_hypergraph(12, 4, 3, 8, &mut rng);
            let plan = random_split_plan(&h, 0, 4, &mut rng).unwrap();
            plan.validate(&h).unwrap();
            let h2 = h.split_hyperedge(&plan).unwrap();
            assert_eq!(
                h2.global_neighborhood(plan.pivot_node).unwrap(),
                h.global_neighborhood(plan.pivot_node).unwrap()
            );
        }
    }

    #[test]
    fn planted_is_reproducible_and_covers_every_node() {
        let cfg = PlantedConfig::default();
        let a = planted_partition(&cfg, 7);
        assert_eq!(a, planted_partition(&cfg, 7));
        assert!(a.hypergraph.isolated_nodes().is_empty());
        assert_eq!(a.hypergraph.num_edges(), 40);
        assert_eq!(a.features.shape(), (200, 1200));
        for v in 0..200 {
            assert_eq!(a.features.row(v).iter().sum::<f64>(), 3.0);
        }
    }

    #[test]
    fn simple_graph_has_requested_edges() {
        let g = random_graph(20, 30, &mut crate::rng_from_seed(3));
        assert_eq!(g.num_edges(), 30);
        assert_eq!(g.clique_expansion().len(), 30);
    }
}
