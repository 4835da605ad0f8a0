//! Positive examples (Forest Fire subsamples) and noise graphs.

use std::collections::{HashSet, VecDeque};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Forest Fire subsample of `g` with at least `target_size` nodes.
///
/// A fire starts at a uniformly random unburned node and spreads breadth-first:
/// each unburned neighbor of a burning node ignites independently with
/// probability `forward_prob`. When the fire dies out before `target_size`
/// nodes are burned, a new one starts elsewhere. The last burst may overshoot
/// the target. Returns the subgraph induced by the burned nodes, in ascending
/// node order.
pub fn forest_fire_sample<R: Rng>(g: &Graph, target_size: usize, forward_prob: f64, rng: &mut R) -> Result<Graph> {
    if target_size == 0 || target_size > g.n() {
        return Err(Error::Sampling(format!(
            "target size {target_size} outside 1..={} nodes",
            g.n()
        )));
    }
    if !(0.0..=1.0).contains(&forward_prob) {
        return Err(Error::config("forward_prob", "must lie in [0, 1]"));
    }
    let mut burned = vec![false; g.n()];
    let mut order = Vec::with_capacity(target_size);
    let mut queue = VecDeque::new();
    while order.len() < target_size {
        let v = match queue.pop_front() {
            Some(v) => v,
            None => {
                let unburned: Vec<usize> = (0..g.n()).filter(|&v| !burned[v]).collect();
                let v = unburned[rng.gen_range(0..unburned.len())];
                burned[v] = true;
                order.push(v);
                v
            }
        };
        for &u in g.neighbors(v) {
            if !burned[u] && rng.gen::<f64>() < forward_prob {
                burned[u] = true;
                order.push(u);
                queue.push_back(u);
            }
        }
    }
    order.sort_unstable();
    Ok(g.induced(&order))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    /// Permute feature rows uniformly; keep the adjacency.
    ShuffleFeatures,
    /// Add `n` uniformly chosen non-edges.
    AddEdges,
}

impl std::str::FromStr for NoiseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shuffle-features" => Ok(NoiseMode::ShuffleFeatures),
            "add-edges" => Ok(NoiseMode::AddEdges),
            _ => Err(Error::config("noise", format!("unknown mode `{s}`"))),
        }
    }
}

pub fn make_noise<R: Rng>(positive: &Graph, mode: NoiseMode, rng: &mut R) -> Result<Graph> {
    match mode {
        NoiseMode::ShuffleFeatures => {
            if positive.p() == 0 {
                return Err(Error::config("noise", "shuffle-features needs node features (p >= 1)"));
            }
            let mut perm: Vec<usize> = (0..positive.n()).collect();
            perm.shuffle(rng);
            Ok(positive.with_permuted_features(&perm))
        }
        NoiseMode::AddEdges => {
            let n = positive.n();
            let pairs = n * n.saturating_sub(1) / 2;
            let free = pairs - positive.edge_count();
            if free < n {
                return Err(Error::config(
                    "noise",
                    format!("add-edges needs {n} absent edges, graph has {free}"),
                ));
            }
            let extra = if 2 * positive.edge_count() <= pairs {
                sparse_non_edges(positive, n, rng)
            } else {
                let non_edges: Vec<(usize, usize)> = (0..n)
                    .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
                    .filter(|&(u, v)| !positive.has_edge(u, v))
                    .collect();
                index::sample(rng, non_edges.len(), n)
                    .into_iter()
                    .map(|i| non_edges[i])
                    .collect()
            };
            Ok(positive.with_added_edges(&extra))
        }
    }
}

// Rejection sampling; at least half of all pairs are free, so this terminates quickly.
fn sparse_non_edges<R: Rng>(g: &Graph, count: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let n = g.n();
    let mut chosen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let u = rng.gen_range(0..n);
        let v = rng.gen_range(0..n);
        if u == v {
            continue;
        }
        let e = (u.min(v), u.max(v));
        if !g.has_edge(e.0, e.1) && chosen.insert(e) {
            out.push(e);
        }
    }
    out
}
