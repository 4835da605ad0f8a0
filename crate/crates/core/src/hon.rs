//! Connected k-node induced subgraphs (CISes) and their higher-order network.
//!
//! The k-HON has one node per CIS and an edge between two CISes that share
//! `k - 1` nodes. It is never materialized here: [`hon_neighbor_sets`] computes
//! the neighborhood of one CIS on demand from the base graph's adjacency.
//! [`enumerate_cises`] is the exact (exponential) enumeration used as a ground
//! truth on small graphs.

use rayon::prelude::*;
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::motif::{motif_of, set_is_connected, KSet, Motif};

pub const DEFAULT_ENUMERATION_CAP: u64 = 10_000_000;

/// A CIS together with its k-HON neighbors (lexicographically sorted).
#[derive(Clone, Debug, PartialEq)]
pub struct KHonNeighborhood {
    pub center: KSet,
    pub neighbors: Vec<KSet>,
}

impl KHonNeighborhood {
    pub fn degree(&self) -> usize {
        self.neighbors.len()
    }
}

/// Upper bound on the number of connected k-node sets.
///
/// Each connected set admits a growth sequence from every one of its members in
/// which node `i + 1` is adjacent to one of the first `i`; there are at most
/// `d(v) * prod_{i=2}^{k-1} (i * Δ)` such sequences from `v`.
pub fn cis_count_upper_bound(g: &Graph, k: usize) -> u64 {
    let n = g.n();
    if k == 0 || k > n {
        return 0;
    }
    if k == 1 {
        return n as u64;
    }
    let delta = g.max_degree() as f64;
    let tail: f64 = (2..k).map(|i| i as f64 * delta).product();
    let growth: f64 = (0..n).map(|v| g.degree(v) as f64).sum::<f64>() * tail / k as f64;
    let binom = (0..k).fold(1.0f64, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
    growth.min(binom).ceil().min(u64::MAX as f64) as u64
}

fn check_k(g: &Graph, k: usize) -> Result<()> {
    if k == 0 || k > g.n() {
        return Err(Error::config("k", format!("must satisfy 1 <= k <= n = {}, got {k}", g.n())));
    }
    Ok(())
}

/// Every connected k-node set of `g`, each exactly once, in lexicographic order.
pub fn enumerate_cises(g: &Graph, k: usize, cap: u64) -> Result<Vec<KSet>> {
    check_k(g, k)?;
    let bound = cis_count_upper_bound(g, k);
    if bound > cap {
        return Err(Error::CapExceeded { cap, bound });
    }
    let per_root: Vec<Vec<KSet>> = (0..g.n())
        .into_par_iter()
        .map(|root| {
            let mut out = Vec::new();
            let mut sub: SmallVec<[usize; 8]> = SmallVec::new();
            sub.push(root);
            let ext: Vec<usize> = g.neighbors(root).iter().copied().filter(|&u| u > root).collect();
            esu_extend(g, k, root, &mut sub, ext, &mut out);
            out
        })
        .collect();
    let mut all: Vec<KSet> = per_root.into_iter().flatten().collect();
    all.sort_unstable();
    Ok(all)
}

// ESU growth: every connected set is produced once, from its smallest node.
fn esu_extend(
    g: &Graph,
    k: usize,
    root: usize,
    sub: &mut SmallVec<[usize; 8]>,
    mut ext: Vec<usize>,
    out: &mut Vec<KSet>,
) {
    if sub.len() == k {
        let mut s = sub.clone();
        s.sort_unstable();
        out.push(KSet::from_sorted(s));
        return;
    }
    while let Some(w) = ext.pop() {
        let mut next = ext.clone();
        for &u in g.neighbors(w) {
            if u <= root || sub.contains(&u) || next.contains(&u) || u == w {
                continue;
            }
            // exclusive neighborhood: u must not touch the current subgraph
            if sub.iter().any(|&s| g.has_edge(s, u)) {
                continue;
            }
            next.push(u);
        }
        sub.push(w);
        esu_extend(g, k, root, sub, next, out);
        sub.pop();
    }
}

/// k-HON neighbors of `set`, unchecked: `set` must be a sorted CIS of `g`.
///
/// Candidates for replacing `v ∈ C` are the neighbors of `C \ {v}` outside `C`;
/// each `(v, w)` yields a distinct set, so only per-`v` dedup is needed.
pub fn hon_neighbor_sets(g: &Graph, set: &[usize]) -> Vec<KSet> {
    let k = set.len();
    let mut out = Vec::new();
    if k < 2 {
        return out;
    }
    let center = KSet::from_sorted(set.iter().copied().collect());
    let mut cand: Vec<usize> = Vec::new();
    let mut rest: SmallVec<[usize; 8]> = SmallVec::with_capacity(k);
    for &v in set {
        cand.clear();
        for &u in set.iter().filter(|&&u| u != v) {
            cand.extend(g.neighbors(u).iter().copied().filter(|w| set.binary_search(w).is_err()));
        }
        cand.sort_unstable();
        cand.dedup();
        for &w in &cand {
            rest.clear();
            rest.extend(set.iter().copied().filter(|&x| x != v));
            rest.push(w);
            if set_is_connected(g, &rest) {
                out.push(center.swap(v, w));
            }
        }
    }
    out.sort_unstable();
    out
}

/// Checked neighborhood of a CIS.
pub fn hon_neighbors(g: &Graph, set: &KSet) -> Result<KHonNeighborhood> {
    if let Some(&v) = set.iter().find(|&&v| v >= g.n()) {
        return Err(Error::InvalidSet(format!("node {v} out of range ({} nodes)", g.n())));
    }
    if !set_is_connected(g, set) {
        return Err(Error::InvalidCis(set.to_vec()));
    }
    Ok(KHonNeighborhood {
        center: set.clone(),
        neighbors: hon_neighbor_sets(g, set),
    })
}

/// `Σ_{C ∈ CIS_k} phi(G[C])`, summed in lexicographic order of `C`.
pub fn exact_energy_sum<F>(g: &Graph, k: usize, cap: u64, phi: F) -> Result<f64>
where
    F: Fn(&Motif) -> f64 + Sync,
{
    let sets = enumerate_cises(g, k, cap)?;
    let values: Vec<f64> = sets.par_iter().map(|c| phi(&motif_of(g, c))).collect();
    let mut total = 0.0;
    for (c, v) in sets.iter().zip(values) {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("energy of {c}")));
        }
        total += v;
    }
    Ok(total)
}
