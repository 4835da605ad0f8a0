#![allow(dead_code)]

use std::path::PathBuf;

use motif_energy::model::{EnergyModel, ModelDims};
use motif_energy::{Graph, Motif};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// G(n, p) with `p_feat` standard-normal feature columns.
pub fn er_graph(n: usize, prob: f64, p_feat: usize, seed: u64) -> Graph {
    let mut r = rng(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if r.gen_bool(prob) {
                edges.push((u, v));
            }
        }
    }
    let feats = (0..n * p_feat).map(|_| r.gen_range(-1.0..1.0)).collect();
    Graph::from_edges(n, edges).unwrap().with_features(p_feat, feats).unwrap()
}

/// G(n, p) resampled until connected.
pub fn connected_er_graph(n: usize, prob: f64, p_feat: usize, seed: u64) -> Graph {
    (0..)
        .map(|i| er_graph(n, prob, p_feat, seed.wrapping_mul(1000) + i))
        .find(|g| g.components().iter().all(|&c| c == 0))
        .unwrap()
}

pub fn small_dims(p: usize) -> ModelDims {
    ModelDims {
        p,
        d_gnn: 4,
        d_hidden: 5,
        d_rep: 6,
        h: 3,
        gnn_layers: 1,
    }
}

pub fn model(p: usize, seed: u64) -> EnergyModel {
    EnergyModel::init(small_dims(p), 0.1, seed).unwrap()
}

/// Random connected motif on `k` nodes with features in [-1, 1).
pub fn random_motif<R: Rng>(k: usize, p: usize, r: &mut R) -> Motif {
    loop {
        let mut adj = vec![false; k * k];
        for i in 0..k {
            for j in i + 1..k {
                let e = r.gen_bool(0.5);
                adj[i * k + j] = e;
                adj[j * k + i] = e;
            }
        }
        let feat = (0..k * p).map(|_| r.gen_range(-1.0..1.0)).collect();
        let m = Motif::from_parts(k, p, adj, feat).unwrap();
        if m.is_connected() {
            return m;
        }
    }
}

/// Connected k-sets by brute force over all k-subsets, in lexicographic order.
pub fn brute_force_cises(g: &Graph, k: usize) -> Vec<Vec<usize>> {
    let n = g.n();
    let mut out = Vec::new();
    let mut set: Vec<usize> = (0..k).collect();
    loop {
        if connected(g, &set) {
            out.push(set.clone());
        }
        let Some(i) = (0..k).rev().find(|&i| set[i] < n - k + i) else {
            return out;
        };
        set[i] += 1;
        for j in i + 1..k {
            set[j] = set[j - 1] + 1;
        }
    }
}

fn connected(g: &Graph, set: &[usize]) -> bool {
    let mut seen = vec![set[0]];
    let mut stack = vec![set[0]];
    while let Some(v) = stack.pop() {
        for &u in set {
            if !seen.contains(&u) && g.has_edge(u, v) {
                seen.push(u);
                stack.push(u);
            }
        }
    }
    seen.len() == set.len()
}

pub fn shared(a: &[usize], b: &[usize]) -> usize {
    a.iter().filter(|v| b.contains(v)).count()
}
