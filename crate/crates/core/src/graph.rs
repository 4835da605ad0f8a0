//! Undirected simple graphs with dense node features, plus the edge-list and
//! feature-CSV loaders.
//!
//! External node ids are remapped to dense indices `0..n`. When every id is an
//! integer the dense order follows numeric order, otherwise lexicographic order.
//! The original labels are kept so that outputs can be written back in the
//! caller's id space.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use log::{info, warn};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    neighbors: Vec<Vec<usize>>,
    features: Vec<f64>,
    p: usize,
    labels: Vec<String>,
    index: HashMap<String, usize>,
    edge_count: usize,
}

impl Graph {
    /// Builds a featureless graph on `n` nodes. Self-loops are dropped and
    /// duplicate edges (in either orientation) collapse to one.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut neighbors = vec![Vec::new(); n];
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::InvalidSet(format!(
                    "edge ({u}, {v}) out of range for {n} nodes"
                )));
            }
            if u == v {
                continue;
            }
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        let mut edge_count = 0;
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
            edge_count += list.len();
        }
        let labels: Vec<String> = (0..n).map(|i| i.to_string()).collect();
        let index = labels.iter().cloned().zip(0..).collect();
        Ok(Graph {
            neighbors,
            features: Vec::new(),
            p: 0,
            labels,
            index,
            edge_count: edge_count / 2,
        })
    }

    /// Attaches an `n × p` row-major feature matrix.
    pub fn with_features(mut self, p: usize, features: Vec<f64>) -> Result<Self> {
        if features.len() != self.n() * p {
            return Err(Error::Shape(format!(
                "feature matrix has {} entries, expected {} x {}",
                features.len(),
                self.n(),
                p
            )));
        }
        if let Some(i) = features.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "feature of node {} column {}",
                self.labels[i / p],
                i % p
            )));
        }
        self.p = p;
        self.features = features;
        Ok(self)
    }

    /// Replaces the external node labels. Labels must be unique.
    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.n() {
            return Err(Error::Shape(format!(
                "{} labels for {} nodes",
                labels.len(),
                self.n()
            )));
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if index.insert(l.clone(), i).is_some() {
                return Err(Error::InvalidSet(format!("duplicate node label {l}")));
            }
        }
        self.labels = labels;
        self.index = index;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.neighbors.len()
    }

    /// Feature dimension; zero for featureless graphs.
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    /// Sorted neighbor list of `v`.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbors[v].len()
    }

    pub fn max_degree(&self) -> usize {
        self.neighbors.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        let (a, b) = if self.neighbors[u].len() <= self.neighbors[v].len() {
            (u, v)
        } else {
            (v, u)
        };
        self.neighbors[a].binary_search(&b).is_ok()
    }

    pub fn features(&self, v: usize) -> &[f64] {
        &self.features[v * self.p..(v + 1) * self.p]
    }

    pub fn feature_matrix(&self) -> &[f64] {
        &self.features
    }

    pub fn label(&self, v: usize) -> &str {
        &self.labels[v]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    /// Edges `(u, v)` with `u < v`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(u, ns)| ns.iter().filter(move |&&v| v > u).map(move |&v| (u, v)))
    }

    /// Connected-component id per node; ids are assigned in order of each
    /// component's smallest node.
    pub fn components(&self) -> Vec<usize> {
        let n = self.n();
        let mut comp = vec![usize::MAX; n];
        let mut next = 0;
        let mut stack = Vec::new();
        for s in 0..n {
            if comp[s] != usize::MAX {
                continue;
            }
            comp[s] = next;
            stack.push(s);
            while let Some(v) = stack.pop() {
                for &u in &self.neighbors[v] {
                    if comp[u] == usize::MAX {
                        comp[u] = next;
                        stack.push(u);
                    }
                }
            }
            next += 1;
        }
        comp
    }

    /// Subgraph induced by `nodes` (any order, no duplicates), relabeled to
    /// `0..nodes.len()` in the given order. Features and labels carry over.
    pub fn induced(&self, nodes: &[usize]) -> Graph {
        let mut pos = HashMap::with_capacity(nodes.len());
        for (i, &v) in nodes.iter().enumerate() {
            pos.insert(v, i);
        }
        let mut neighbors = vec![Vec::new(); nodes.len()];
        let mut edge_count = 0;
        for (i, &v) in nodes.iter().enumerate() {
            for u in &self.neighbors[v] {
                if let Some(&j) = pos.get(u) {
                    neighbors[i].push(j);
                }
            }
            neighbors[i].sort_unstable();
            edge_count += neighbors[i].len();
        }
        let mut features = Vec::with_capacity(nodes.len() * self.p);
        for &v in nodes {
            features.extend_from_slice(self.features(v));
        }
        let labels: Vec<String> = nodes.iter().map(|&v| self.labels[v].clone()).collect();
        let index = labels.iter().cloned().zip(0..).collect();
        Graph {
            neighbors,
            features,
            p: self.p,
            labels,
            index,
            edge_count: edge_count / 2,
        }
    }

    /// Same graph with extra edges; used by edge-addition noise.
    pub(crate) fn with_added_edges(&self, extra: &[(usize, usize)]) -> Graph {
        let mut g = self.clone();
        for &(u, v) in extra {
            g.neighbors[u].push(v);
            g.neighbors[v].push(u);
        }
        let mut edge_count = 0;
        for list in &mut g.neighbors {
            list.sort_unstable();
            list.dedup();
            edge_count += list.len();
        }
        g.edge_count = edge_count / 2;
        g
    }

    /// Same graph with feature rows replaced; row `v` of the result is row
    /// `perm[v]` of `self`.
    pub(crate) fn with_permuted_features(&self, perm: &[usize]) -> Graph {
        let mut g = self.clone();
        for (v, &src) in perm.iter().enumerate() {
            g.features[v * self.p..(v + 1) * self.p].copy_from_slice(self.features(src));
        }
        g
    }
}

fn sort_ids(ids: &mut [String]) {
    if ids.iter().all(|s| s.parse::<i64>().is_ok()) {
        ids.sort_by_key(|s| s.parse::<i64>().unwrap());
    } else {
        ids.sort();
    }
}

/// Loads an edge list (`u v` per line, `#` comments) and an optional feature
/// CSV (`id,f1,...,fp`, optional header row).
pub fn load_graph(edge_path: &Path, feature_path: Option<&Path>) -> Result<Graph> {
    let text = fs::read_to_string(edge_path).map_err(|e| Error::io(edge_path, e))?;
    let (edges, mut ids) = parse_edge_list(&text, &edge_path.display().to_string())?;

    let features = match feature_path {
        Some(path) => Some(read_feature_csv(path)?),
        None => None,
    };
    if let Some((_, rows)) = &features {
        for id in rows.keys() {
            ids.insert(id.clone());
        }
    }

    let mut ids: Vec<String> = ids.into_iter().collect();
    sort_ids(&mut ids);
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    let dense: Vec<(usize, usize)> = edges
        .iter()
        .map(|(u, v)| (index[u.as_str()], index[v.as_str()]))
        .collect();
    let mut g = Graph::from_edges(ids.len(), dense)?;

    if let Some((p, rows)) = features {
        let mut matrix = Vec::with_capacity(ids.len() * p);
        for id in &ids {
            let row = rows.get(id).ok_or_else(|| Error::Parse {
                path: feature_path.unwrap().display().to_string(),
                line: 0,
                msg: format!("node {id} appears in the edge list but has no feature row"),
            })?;
            matrix.extend_from_slice(row);
        }
        g = g.with_features(p, matrix)?;
    }
    g.with_labels(ids)
}

type EdgeParse = (Vec<(String, String)>, BTreeSet<String>);

fn parse_edge_list(text: &str, path: &str) -> Result<EdgeParse> {
    let mut edges = Vec::new();
    let mut ids = BTreeSet::new();
    let mut self_loops = 0usize;
    let mut seen = std::collections::HashSet::new();
    let mut reversed = 0usize;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let mut toks = line.split_whitespace();
        let (u, v) = match (toks.next(), toks.next(), toks.next()) {
            (Some(u), Some(v), None) => (u.to_string(), v.to_string()),
            _ => {
                return Err(Error::Parse {
                    path: path.to_string(),
                    line: lineno + 1,
                    msg: format!("expected `u v`, got `{line}`"),
                })
            }
        };
        if u == v {
            self_loops += 1;
            ids.insert(u);
            continue;
        }
        if seen.contains(&(v.clone(), u.clone())) {
            reversed += 1;
        }
        seen.insert((u.clone(), v.clone()));
        ids.insert(u.clone());
        ids.insert(v.clone());
        edges.push((u, v));
    }
    if self_loops > 0 {
        info!("{path}: dropped {self_loops} self-loop line(s)");
    }
    if reversed > 0 {
        warn!("{path}: {reversed} edge(s) listed in both orientations; input symmetrized as undirected");
    }
    Ok((edges, ids))
}

pub(crate) fn read_feature_csv(path: &Path) -> Result<(usize, HashMap<String, Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Parse {
                path: path.display().to_string(),
                line: 0,
                msg: format!("{other:?}"),
            },
        })?;
    let shown = path.display().to_string();
    let mut rows = HashMap::new();
    let mut p: Option<usize> = None;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map(|pos| pos.line() as usize).unwrap_or(i + 1);
        if rec.len() < 2 {
            return Err(Error::Parse {
                path: shown,
                line,
                msg: "feature row needs an id and at least one value".into(),
            });
        }
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().skip(1).map(str::parse::<f64>).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if i == 0 => continue,
            Err(e) => {
                return Err(Error::Parse {
                    path: shown,
                    line,
                    msg: format!("bad feature value: {e}"),
                })
            }
        };
        match p {
            None => p = Some(values.len()),
            Some(p) if p != values.len() => {
                return Err(Error::Parse {
                    path: shown,
                    line,
                    msg: format!("expected {p} feature columns, got {}", values.len()),
                })
            }
            _ => {}
        }
        let id = rec[0].to_string();
        if rows.insert(id.clone(), values).is_some() {
            return Err(Error::Parse {
                path: shown,
                line,
                msg: format!("duplicate feature row for node {id}"),
            });
        }
    }
    let p = p.ok_or_else(|| Error::Parse {
        path: shown,
        line: 0,
        msg: "feature file has no rows".into(),
    })?;
    Ok((p, rows))
}

/// Writes `g` as an edge list using its external labels.
pub fn write_edge_list(g: &Graph, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (u, v) in g.edges() {
        out.push_str(g.label(u));
        out.push(' ');
        out.push_str(g.label(v));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes the feature matrix as `id,f1,...,fp` rows (no header).
pub fn write_features(g: &Graph, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for v in 0..g.n() {
        let mut row = vec![g.label(v).to_string()];
        row.extend(g.features(v).iter().map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
