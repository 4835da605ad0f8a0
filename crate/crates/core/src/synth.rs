//! Synthetic planted-hyperedge task.
//!
//! A sparse Erdős–Rényi graph receives two kinds of planted k-cliques on
//! disjoint node sets: hyperedges, whose members share a latent feature vector,
//! and decoys, whose members have independent features. The task labels
//! hyperedges 1 and both decoys and random connected k-sets 0, so structure
//! alone cannot separate the classes.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{KSetTask, Split, TaskExample};
use crate::graph::Graph;
use crate::motif::set_is_connected;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n: usize,
    pub k: usize,
    pub p: usize,
    /// Mean degree of the Erdős–Rényi background.
    pub avg_degree: f64,
    pub hyperedges: usize,
    pub decoys: usize,
    pub random_negatives: usize,
    /// Std of each member's deviation from its hyperedge's latent vector.
    pub feature_noise: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 2000,
            k: 3,
            p: 8,
            avg_degree: 3.0,
            hyperedges: 250,
            decoys: 250,
            random_negatives: 250,
            feature_noise: 0.5,
            test_fraction: 0.3,
            seed: 0,
        }
    }
}

fn normal_vec<R: Rng>(rng: &mut R, p: usize, scale: f64) -> Vec<f64> {
    (0..p).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn planted_hyperedge_task(cfg: &SynthConfig) -> Result<(Graph, KSetTask)> {
    let planted = cfg.hyperedges + cfg.decoys;
    if cfg.k < 2 || planted * cfg.k > cfg.n {
        return Err(Error::config("synth", format!("cannot plant {planted} disjoint {}-cliques in {} nodes", cfg.k, cfg.n)));
    }
    if cfg.p == 0 {
        return Err(Error::config("synth.p", "must be >= 1"));
    }
    if !(0.0..1.0).contains(&cfg.test_fraction) {
        return Err(Error::config("synth.test_fraction", "must lie in [0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n;

    let mut edges = Vec::new();
    let m = (cfg.avg_degree * n as f64 / 2.0).round() as usize;
    let mut seen = HashSet::new();
    while seen.len() < m {
        let (u, v) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if u != v && seen.insert((u.min(v), u.max(v))) {
            edges.push((u.min(v), u.max(v)));
        }
    }

    let mut nodes: Vec<usize> = (0..n).collect();
    nodes.shuffle(&mut rng);
    let groups: Vec<Vec<usize>> = nodes[..planted * cfg.k].chunks(cfg.k).map(|c| c.to_vec()).collect();
    for grp in &groups {
        for (i, &u) in grp.iter().enumerate() {
            for &v in &grp[i + 1..] {
                edges.push((u, v));
            }
        }
    }

    // Every node's marginal feature distribution is N(0, (1 + σ²) I).
    let sigma = cfg.feature_noise;
    let spread = (1.0 + sigma * sigma).sqrt();
    let mut features = vec![0.0; n * cfg.p];
    for v in 0..n {
        features[v * cfg.p..(v + 1) * cfg.p].copy_from_slice(&normal_vec(&mut rng, cfg.p, spread));
    }
    for grp in &groups[..cfg.hyperedges] {
        let z = normal_vec(&mut rng, cfg.p, 1.0);
        for &v in grp {
            let eps = normal_vec(&mut rng, cfg.p, sigma);
            for j in 0..cfg.p {
                features[v * cfg.p + j] = z[j] + eps[j];
            }
        }
    }
    let g = Graph::from_edges(n, edges)?.with_features(cfg.p, features)?;

    let sorted = |mut s: Vec<usize>| {
        s.sort_unstable();
        s
    };
    let positives: Vec<Vec<usize>> = groups[..cfg.hyperedges].iter().cloned().map(sorted).collect();
    let mut negatives: Vec<Vec<usize>> = groups[cfg.hyperedges..].iter().cloned().map(sorted).collect();
    let taken: HashSet<Vec<usize>> = positives.iter().chain(&negatives).cloned().collect();
    let mut used = taken.clone();
    let mut tries = 0;
    while negatives.len() < cfg.decoys + cfg.random_negatives {
        tries += 1;
        if tries > 1000 * (cfg.random_negatives + 1) {
            return Err(Error::Sampling("could not draw enough random connected k-sets".into()));
        }
        let Some(set) = random_connected_set(&g, cfg.k, &mut rng) else {
            continue;
        };
        if used.insert(set.clone()) {
            debug_assert!(set_is_connected(&g, &set));
            negatives.push(set);
        }
    }

    let mut examples = Vec::new();
    for (label, sets) in [(1i64, positives), (0, negatives)] {
        let mut sets = sets;
        sets.shuffle(&mut rng);
        let n_test = (sets.len() as f64 * cfg.test_fraction).round() as usize;
        for (i, s) in sets.into_iter().enumerate() {
            examples.push(TaskExample {
                nodes: s.iter().map(|v| v.to_string()).collect(),
                label,
                split: if i < n_test { Split::Test } else { Split::Train },
            });
        }
    }
    examples.shuffle(&mut rng);
    let task = KSetTask {
        k: cfg.k,
        graph_ref: None,
        features_ref: None,
        examples,
    };
    Ok((g, task))
}

// Grows a set from a uniform node by repeatedly adding a uniform neighbor of the set.
fn random_connected_set<R: Rng>(g: &Graph, k: usize, rng: &mut R) -> Option<Vec<usize>> {
    let mut set = vec![rng.gen_range(0..g.n())];
    while set.len() < k {
        let frontier: Vec<usize> = set
            .iter()
            .flat_map(|&v| g.neighbors(v).iter().copied())
            .filter(|u| !set.contains(u))
            .collect();
        if frontier.is_empty() {
            return None;
        }
        set.push(frontier[rng.gen_range(0..frontier.len())]);
    }
    set.sort_unstable();
    Some(set)
}
