//! Supernodes and random walk tours on the collapsed k-HON (k-CNHON).
//!
//! A [`Supernode`] is a set `I` of CISes collapsed into one state. Edges among
//! members disappear; each k-HON edge from a member to an outside CIS becomes
//! a separate (parallel) edge of the supernode. A tour starts at the supernode,
//! walks uniformly over k-HON neighbors, and ends at the first step that lands
//! on any member of `I`.

use std::collections::{HashMap, HashSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::hon::hon_neighbor_sets;
use crate::motif::{set_is_connected, KSet};

pub const DEFAULT_MAX_TOUR_STEPS: u64 = 10_000_000;

/// RNG for tour `tour` under master seed `seed`. Every tour has its own
/// ChaCha stream, so tours can run in any order or on any thread.
pub fn tour_rng(seed: u64, tour: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tour);
    rng
}

/// SplitMix64 finalizer; derives independent child seeds from a parent seed.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct Supernode {
    k: usize,
    members: Vec<KSet>,
    index: HashMap<KSet, usize>,
    boundary: Vec<(usize, KSet)>,
    covers_space: bool,
}

impl Supernode {
    /// Supernode from an explicit member list. Members must be distinct
    /// connected k-sets; they are stored in lexicographic order.
    pub fn from_members(g: &Graph, k: usize, members: impl IntoIterator<Item = KSet>) -> Result<Self> {
        if k < 2 || k > g.n() {
            return Err(Error::config("k", format!("supernodes need 2 <= k <= n = {}, got {k}", g.n())));
        }
        let mut members: Vec<KSet> = members.into_iter().collect();
        members.sort_unstable();
        members.dedup();
        if members.is_empty() {
            return Err(Error::Supernode("no members".into()));
        }
        for m in &members {
            if m.k() != k {
                return Err(Error::InvalidSet(format!("member {m} has {} nodes, expected {k}", m.k())));
            }
            if m.iter().any(|&v| v >= g.n()) {
                return Err(Error::InvalidSet(format!("member {m} out of range")));
            }
            if !set_is_connected(g, m) {
                return Err(Error::InvalidCis(m.to_vec()));
            }
        }
        let index: HashMap<KSet, usize> = members.iter().cloned().zip(0..).collect();
        let mut boundary = Vec::new();
        for (i, m) in members.iter().enumerate() {
            for nb in hon_neighbor_sets(g, m) {
                if !index.contains_key(&nb) {
                    boundary.push((i, nb));
                }
            }
        }
        let covers_space = boundary.is_empty() && every_component_touched(g, k, &members);
        Ok(Supernode {
            k,
            members,
            index,
            boundary,
            covers_space,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn members(&self) -> &[KSet] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, set: &KSet) -> bool {
        self.index.contains_key(set)
    }

    /// `Σ_{u ∈ I} |N(u) \ I|`: the supernode's degree in the collapsed multigraph.
    pub fn boundary_degree(&self) -> usize {
        self.boundary.len()
    }

    /// Flattened boundary multiset: `(member index, outside neighbor)` pairs.
    pub fn boundary_edges(&self) -> &[(usize, KSet)] {
        &self.boundary
    }

    /// True when `I` is the whole CIS space, so the estimate is an exact sum.
    pub fn covers_space(&self) -> bool {
        self.covers_space
    }

    fn placeholder() -> Self {
        Supernode {
            k: 0,
            members: Vec::new(),
            index: HashMap::new(),
            boundary: Vec::new(),
            covers_space: false,
        }
    }
}

// A component with at least k nodes always contains a connected k-set.
fn every_component_touched(g: &Graph, k: usize, members: &[KSet]) -> bool {
    let comp = g.components();
    let ncomp = comp.iter().copied().max().map_or(0, |c| c + 1);
    let mut size = vec![0usize; ncomp];
    for &c in &comp {
        size[c] += 1;
    }
    let touched: HashSet<usize> = members.iter().map(|m| comp[m[0]]).collect();
    (0..ncomp).all(|c| size[c] < k || touched.contains(&c))
}

/// Grows `seed_nodes` to k nodes, always adding the smallest adjacent node.
fn greedy_complete(g: &Graph, seed_nodes: &[usize], k: usize) -> Option<KSet> {
    let mut set: Vec<usize> = seed_nodes.to_vec();
    while set.len() < k {
        let next = set
            .iter()
            .flat_map(|&v| g.neighbors(v).iter().copied())
            .filter(|u| !set.contains(u))
            .min()?;
        set.push(next);
    }
    KSet::new(set).ok()
}

/// Supernode grown by BFS over the k-HON from a seed-chosen start CIS.
///
/// The start edge is drawn uniformly (by `seed`) among edges whose component
/// has at least `k` nodes; its endpoints are completed greedily to a CIS.
pub fn build_supernode(g: &Graph, k: usize, budget: usize, seed: u64) -> Result<Supernode> {
    if k < 2 || k > g.n() {
        return Err(Error::config("k", format!("supernodes need 2 <= k <= n = {}, got {k}", g.n())));
    }
    let comp = g.components();
    let mut size = vec![0usize; g.n()];
    for &c in &comp {
        size[c] += 1;
    }
    let eligible: Vec<(usize, usize)> = g.edges().filter(|&(u, _)| size[comp[u]] >= k).collect();
    if eligible.is_empty() {
        return Err(Error::Supernode(format!("graph has no connected {k}-node subgraph")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (u, v) = eligible[rng.gen_range(0..eligible.len())];
    let start = greedy_complete(g, &[u, v], k)
        .ok_or_else(|| Error::Supernode(format!("cannot complete edge ({u}, {v}) to {k} nodes")))?;
    build_supernode_from(g, k, budget, start)
}

/// Supernode grown by FIFO BFS from `start`, visiting neighbors in
/// lexicographic order, until `budget` CISes are collected.
///
/// Every other component with at least `k` nodes also contributes a greedy
/// seed CIS (from its smallest node) at the front of the queue, so that each
/// component's walk can return to the supernode. The budget is raised to the
/// number of such seeds when it is smaller.
pub fn build_supernode_from(g: &Graph, k: usize, budget: usize, start: KSet) -> Result<Supernode> {
    if budget == 0 {
        return Err(Error::config("supernode_budget", "must be >= 1"));
    }
    if start.k() != k {
        return Err(Error::InvalidSet(format!("start {start} is not a {k}-set")));
    }
    if start.iter().any(|&v| v >= g.n()) || !set_is_connected(g, &start) {
        return Err(Error::InvalidCis(start.to_vec()));
    }
    let comp = g.components();
    let ncomp = comp.iter().copied().max().map_or(0, |c| c + 1);
    let mut smallest = vec![usize::MAX; ncomp];
    let mut size = vec![0usize; ncomp];
    for (v, &c) in comp.iter().enumerate() {
        size[c] += 1;
        smallest[c] = smallest[c].min(v);
    }
    let mut roots = vec![start.clone()];
    for c in 0..ncomp {
        if c != comp[start[0]] && size[c] >= k {
            if let Some(s) = greedy_complete(g, &[smallest[c]], k) {
                roots.push(s);
            }
        }
    }
    let budget = budget.max(roots.len());

    let mut visited: HashSet<KSet> = roots.iter().cloned().collect();
    let mut queue: VecDeque<KSet> = roots.into_iter().collect();
    let mut members = Vec::with_capacity(budget.min(1 << 16));
    while let Some(c) = queue.pop_front() {
        if members.len() >= budget {
            break;
        }
        for nb in hon_neighbor_sets(g, &c) {
            if visited.insert(nb.clone()) {
                queue.push_back(nb);
            }
        }
        members.push(c);
    }
    Supernode::from_members(g, k, members)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentReport {
    /// Label of the component's smallest node.
    pub smallest_node: String,
    pub size: usize,
    /// Some member of `I` lies in this component.
    pub covered: bool,
    /// The component has a vertex outside every member with degree > 2.
    pub has_free_branch_vertex: bool,
}

/// Check of the sufficient conditions under which the collapsed walk has the
/// degree-proportional stationary distribution used by the estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupernodeReport {
    pub valid: bool,
    pub components: Vec<ComponentReport>,
    pub reasons: Vec<String>,
}

/// Reports, for every component that contains a CIS (at least `k` nodes),
/// whether `I` reaches it and whether it has a vertex outside all members
/// that is incident to more than two edges.
pub fn validate_supernode(g: &Graph, s: &Supernode) -> SupernodeReport {
    let k = s.k();
    let comp = g.components();
    let ncomp = comp.iter().copied().max().map_or(0, |c| c + 1);
    let mut in_member = vec![false; g.n()];
    let mut covered = vec![false; ncomp];
    for m in s.members() {
        covered[comp[m[0]]] = true;
        for &v in m.iter() {
            in_member[v] = true;
        }
    }
    let mut size = vec![0usize; ncomp];
    let mut smallest = vec![usize::MAX; ncomp];
    let mut branch = vec![false; ncomp];
    for v in 0..g.n() {
        let c = comp[v];
        size[c] += 1;
        smallest[c] = smallest[c].min(v);
        if !in_member[v] && g.degree(v) > 2 {
            branch[c] = true;
        }
    }
    let mut components = Vec::new();
    let mut reasons = Vec::new();
    for c in (0..ncomp).filter(|&c| size[c] >= k) {
        let label = g.label(smallest[c]).to_string();
        if !covered[c] {
            reasons.push(format!("component of node {label} has no supernode member"));
        }
        if !branch[c] {
            reasons.push(format!(
                "component of node {label} has no vertex outside the supernode with degree > 2"
            ));
        }
        components.push(ComponentReport {
            smallest_node: label,
            size: size[c],
            covered: covered[c],
            has_free_branch_vertex: branch[c],
        });
    }
    SupernodeReport {
        valid: reasons.is_empty(),
        components,
        reasons,
    }
}

/// States visited strictly between leaving and re-entering the supernode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TourTrace {
    pub states: Vec<KSet>,
    /// k-HON degree of each state.
    pub degrees: Vec<usize>,
}

impl TourTrace {
    /// Return time `t`: the number of steps from the supernode back to it.
    pub fn length(&self) -> usize {
        self.states.len() + 1
    }
}

/// Walks tours on the implicit collapsed k-HON.
///
/// Visited CISes are interned to dense ids and their neighbor lists are
/// memoized, so repeated tours over the same region cost one lookup per step.
/// The cache never changes results, only speed.
pub struct TourSampler<'a> {
    g: &'a Graph,
    s: Supernode,
    ids: HashMap<KSet, u32>,
    sets: Vec<KSet>,
    member: Vec<bool>,
    adj: Vec<Option<Box<[u32]>>>,
    boundary: Vec<u32>,
}

impl<'a> TourSampler<'a> {
    pub fn new(g: &'a Graph, s: Supernode) -> Result<Self> {
        if s.boundary_degree() == 0 {
            return Err(Error::Supernode("supernode has no boundary edges; no tour can leave it".into()));
        }
        Ok(Self::new_unchecked(g, s))
    }

    // Allows an empty boundary; `walk` must not be called in that case.
    pub(crate) fn new_unchecked(g: &'a Graph, s: Supernode) -> Self {
        let mut sampler = TourSampler {
            g,
            s: Supernode::placeholder(),
            ids: HashMap::new(),
            sets: Vec::new(),
            member: Vec::new(),
            adj: Vec::new(),
            boundary: Vec::new(),
        };
        sampler.replace_supernode(s);
        sampler
    }

    /// Swaps in a different supernode over the same graph, keeping the
    /// memoized neighbor lists.
    pub(crate) fn replace_supernode(&mut self, s: Supernode) {
        for (flag, set) in self.member.iter_mut().zip(&self.sets) {
            *flag = s.contains(set);
        }
        self.s = s;
        let targets: Vec<KSet> = self.s.boundary_edges().iter().map(|(_, c)| c.clone()).collect();
        self.boundary = targets.into_iter().map(|c| self.intern(c)).collect();
    }

    pub fn supernode(&self) -> &Supernode {
        &self.s
    }

    pub fn graph(&self) -> &'a Graph {
        self.g
    }

    fn intern(&mut self, set: KSet) -> u32 {
        if let Some(&id) = self.ids.get(&set) {
            return id;
        }
        let id = self.sets.len() as u32;
        self.member.push(self.s.contains(&set));
        self.ids.insert(set.clone(), id);
        self.sets.push(set);
        self.adj.push(None);
        id
    }

    pub(crate) fn state_count(&self) -> usize {
        self.sets.len()
    }

    fn neighbors(&mut self, id: u32) -> &[u32] {
        if self.adj[id as usize].is_none() {
            let nbs = hon_neighbor_sets(self.g, &self.sets[id as usize]);
            let list: Box<[u32]> = nbs.into_iter().map(|c| self.intern(c)).collect();
            self.adj[id as usize] = Some(list);
        }
        self.adj[id as usize].as_deref().unwrap()
    }

    pub(crate) fn set(&self, id: u32) -> &KSet {
        &self.sets[id as usize]
    }

    /// Degree of an already-visited state.
    pub(crate) fn degree(&self, id: u32) -> usize {
        self.adj[id as usize].as_ref().map_or(0, |a| a.len())
    }

    /// One tour; `path` receives the visited state ids. Returns `false` when the
    /// tour hit `max_steps` before returning.
    pub(crate) fn walk<R: Rng>(&mut self, rng: &mut R, max_steps: u64, path: &mut Vec<u32>) -> bool {
        path.clear();
        let mut cur = self.boundary[rng.gen_range(0..self.boundary.len())];
        loop {
            path.push(cur);
            if path.len() as u64 > max_steps {
                return false;
            }
            let nbs = self.neighbors(cur);
            let next = nbs[rng.gen_range(0..nbs.len())];
            if self.member[next as usize] {
                return true;
            }
            cur = next;
        }
    }

    pub(crate) fn trace_of(&self, path: &[u32]) -> TourTrace {
        TourTrace {
            states: path.iter().map(|&id| self.set(id).clone()).collect(),
            degrees: path.iter().map(|&id| self.degree(id)).collect(),
        }
    }

    /// Runs one tour. A tour longer than `max_steps` is an error carrying the
    /// partial trace; it is never silently cut short.
    pub fn run_tour<R: Rng>(&mut self, rng: &mut R, max_steps: u64) -> Result<TourTrace> {
        let mut path = Vec::new();
        let complete = self.walk(rng, max_steps, &mut path);
        path.truncate(max_steps as usize);
        let trace = self.trace_of(&path);
        if complete {
            Ok(trace)
        } else {
            Err(Error::TourTruncated {
                cap: max_steps,
                partial: Box::new(trace),
            })
        }
    }
}

/// One tour from `s` with a fresh neighbor cache.
pub fn run_tour<R: Rng>(g: &Graph, s: &Supernode, rng: &mut R, max_steps: u64) -> Result<TourTrace> {
    TourSampler::new(g, s.clone())?.run_tour(rng, max_steps)
}
