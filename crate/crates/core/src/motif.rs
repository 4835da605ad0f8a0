//! k-node sets and their induced subgraphs.

use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Largest set size handled by the bitmask connectivity check.
const MASK_LIMIT: usize = 8;

/// A strictly increasing tuple of node indices. This is the canonical identity
/// of a k-node set everywhere (hashing, ordering, dedup).
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KSet(SmallVec<[usize; 8]>);

impl KSet {
    /// Sorts `nodes`; rejects duplicates and empty input.
    pub fn new(nodes: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut v: SmallVec<[usize; 8]> = nodes.into_iter().collect();
        if v.is_empty() {
            return Err(Error::InvalidSet("empty node set".into()));
        }
        v.sort_unstable();
        if v.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidSet(format!("duplicate node in {v:?}")));
        }
        Ok(KSet(v))
    }

    pub(crate) fn from_sorted(nodes: SmallVec<[usize; 8]>) -> Self {
        debug_assert!(nodes.windows(2).all(|w| w[0] < w[1]));
        KSet(nodes)
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    /// `self` with `out` removed and `inp` inserted, kept sorted.
    pub(crate) fn swap(&self, out: usize, inp: usize) -> KSet {
        let mut v: SmallVec<[usize; 8]> = SmallVec::with_capacity(self.0.len());
        let mut placed = false;
        for &x in self.0.iter().filter(|&&x| x != out) {
            if !placed && inp < x {
                v.push(inp);
                placed = true;
            }
            v.push(x);
        }
        if !placed {
            v.push(inp);
        }
        KSet(v)
    }

    pub fn shared_count(&self, other: &KSet) -> usize {
        let (mut i, mut j, mut c) = (0, 0, 0);
        while i < self.0.len() && j < other.0.len() {
            match self.0[i].cmp(&other.0[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    c += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        c
    }
}

impl Deref for KSet {
    type Target = [usize];
    fn deref(&self) -> &[usize] {
        &self.0
    }
}

impl fmt::Debug for KSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, "}}")
    }
}

impl fmt::Display for KSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// The subgraph induced by a k-node set: its `k × k` adjacency and `k × p`
/// feature rows, in the order of `nodes`.
#[derive(Clone, Debug, PartialEq)]
pub struct Motif {
    nodes: Vec<usize>,
    adj: Vec<bool>,
    feat: Vec<f64>,
    p: usize,
}

impl Motif {
    /// A motif not tied to any graph. `adj` is row-major `k × k`, symmetric with a
    /// false diagonal; `feat` is row-major `k × p`. Nodes are labeled `0..k`.
    pub fn from_parts(k: usize, p: usize, adj: Vec<bool>, feat: Vec<f64>) -> Result<Self> {
        if k == 0 || adj.len() != k * k || feat.len() != k * p {
            return Err(Error::Shape(format!(
                "motif parts: k={k}, p={p}, adj={}, feat={}",
                adj.len(),
                feat.len()
            )));
        }
        for i in 0..k {
            if adj[i * k + i] {
                return Err(Error::Shape(format!("self-loop at motif node {i}")));
            }
            for j in 0..i {
                if adj[i * k + j] != adj[j * k + i] {
                    return Err(Error::Shape("motif adjacency is not symmetric".into()));
                }
            }
        }
        Ok(Motif {
            nodes: (0..k).collect(),
            adj,
            feat,
            p,
        })
    }

    /// Relabels motif node `i` as `perm[i]`. The result is a detached motif
    /// carrying the permuted node list.
    pub fn permuted(&self, perm: &[usize]) -> Motif {
        let k = self.k();
        assert_eq!(perm.len(), k);
        let mut adj = vec![false; k * k];
        let mut feat = vec![0.0; k * self.p];
        let mut nodes = vec![0; k];
        for i in 0..k {
            nodes[perm[i]] = self.nodes[i];
            feat[perm[i] * self.p..(perm[i] + 1) * self.p].copy_from_slice(self.features(i));
            for j in 0..k {
                adj[perm[i] * k + perm[j]] = self.adj[i * k + j];
            }
        }
        Motif {
            nodes,
            adj,
            feat,
            p: self.p,
        }
    }

    pub fn k(&self) -> usize {
        self.nodes.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.adj[i * self.k() + j]
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.feat[i * self.p..(i + 1) * self.p]
    }

    /// Positions adjacent to position `i` inside the motif.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let k = self.k();
        (0..k).filter(move |&j| self.adj[i * k + j])
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().filter(|&&b| b).count() / 2
    }

    pub fn is_connected(&self) -> bool {
        let k = self.k();
        connected_by(k, |i, j| self.adj[i * k + j])
    }
}

/// Extracts the motif induced by `nodes` in `g`, sorted by node index.
pub fn induced_subgraph(g: &Graph, nodes: &[usize]) -> Result<Motif> {
    let set = KSet::new(nodes.iter().copied())?;
    if let Some(&v) = set.iter().find(|&&v| v >= g.n()) {
        return Err(Error::InvalidSet(format!("node {v} out of range ({} nodes)", g.n())));
    }
    Ok(motif_of(g, &set))
}

/// Motif of an already-validated set.
pub(crate) fn motif_of(g: &Graph, set: &[usize]) -> Motif {
    let k = set.len();
    let mut adj = vec![false; k * k];
    for i in 0..k {
        for j in (i + 1)..k {
            let e = g.has_edge(set[i], set[j]);
            adj[i * k + j] = e;
            adj[j * k + i] = e;
        }
    }
    let mut feat = Vec::with_capacity(k * g.p());
    for &v in set {
        feat.extend_from_slice(g.features(v));
    }
    Motif {
        nodes: set.to_vec(),
        adj,
        feat,
        p: g.p(),
    }
}

/// Whether `nodes` induces a connected subgraph of `g`, without building a motif.
pub fn set_is_connected(g: &Graph, nodes: &[usize]) -> bool {
    connected_by(nodes.len(), |i, j| g.has_edge(nodes[i], nodes[j]))
}

fn connected_by(k: usize, edge: impl Fn(usize, usize) -> bool) -> bool {
    if k <= 1 {
        return k == 1;
    }
    if k <= MASK_LIMIT {
        let mut masks = [0u16; MASK_LIMIT];
        for i in 0..k {
            for j in (i + 1)..k {
                if edge(i, j) {
                    masks[i] |= 1 << j;
                    masks[j] |= 1 << i;
                }
            }
        }
        let full = (1u16 << k) - 1;
        let mut reach = 1u16;
        loop {
            let mut next = reach;
            let mut bits = reach;
            while bits != 0 {
                let i = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                next |= masks[i];
            }
            if next == reach {
                return reach == full;
            }
            reach = next;
        }
    }
    let mut seen = vec![false; k];
    let mut stack = vec![0];
    seen[0] = true;
    let mut count = 1;
    while let Some(i) = stack.pop() {
        for j in 0..k {
            if !seen[j] && edge(i, j) {
                seen[j] = true;
                count += 1;
                stack.push(j);
            }
        }
    }
    count == k
}
