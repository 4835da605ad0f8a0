//! Downstream evaluation of k-set representations: task files, embedding
//! tables, multinomial logistic regression and balanced accuracy.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{read_feature_csv, Graph};
use crate::model::EnergyModel;
use crate::motif::induced_subgraph;

pub const DEFAULT_REG_LAMBDA: f64 = 1e-3;
const GRAD_TOL: f64 = 1e-6;
const MAX_ITERS: usize = 5000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskExample {
    /// External node ids, as written in the task file.
    pub nodes: Vec<String>,
    pub label: i64,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KSetTask {
    pub k: usize,
    /// Evaluation graph named by the task file, resolved against its directory.
    pub graph_ref: Option<PathBuf>,
    /// Feature CSV for `graph_ref`.
    pub features_ref: Option<PathBuf>,
    pub examples: Vec<TaskExample>,
}

impl KSetTask {
    /// Reads a task file: a `k=<int>` header, optional `graph=<path>` and
    /// `features=<path>` lines, then `v1 ... vk label split` per example. `#` starts a comment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let shown = path.display().to_string();
        let err = |line: usize, msg: String| Error::Parse {
            path: shown.clone(),
            line,
            msg,
        };
        let mut k = None;
        let mut graph_ref = None;
        let mut features_ref = None;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut examples = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let lineno = i + 1;
            let Some(k) = k else {
                let v = line
                    .strip_prefix("k=")
                    .and_then(|v| v.trim().parse::<usize>().ok())
                    .filter(|&v| v >= 1)
                    .ok_or_else(|| err(lineno, format!("expected header `k=<int>`, got `{line}`")))?;
                k = Some(v);
                continue;
            };
            if let Some(g) = line.strip_prefix("graph=") {
                graph_ref = Some(base.join(g.trim()));
                continue;
            }
            if let Some(f) = line.strip_prefix("features=") {
                features_ref = Some(base.join(f.trim()));
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != k + 2 {
                return Err(err(lineno, format!("expected {k} node ids, a label and a split")));
            }
            let label = toks[k]
                .parse::<i64>()
                .map_err(|_| err(lineno, format!("label `{}` is not an integer", toks[k])))?;
            let split = match toks[k + 1] {
                "train" => Split::Train,
                "test" => Split::Test,
                other => return Err(err(lineno, format!("split must be train or test, got `{other}`"))),
            };
            let nodes: Vec<String> = toks[..k].iter().map(|s| s.to_string()).collect();
            if nodes.iter().collect::<BTreeSet<_>>().len() != k {
                return Err(err(lineno, "repeated node in k-set".into()));
            }
            examples.push(TaskExample { nodes, label, split });
        }
        let k = k.ok_or_else(|| err(0, "missing `k=<int>` header".into()))?;
        Ok(KSetTask {
            k,
            graph_ref,
            features_ref,
            examples,
        })
    }

    /// Task file text; `graph` and `features` are written verbatim as references.
    pub fn to_text(&self, graph: Option<&str>, features: Option<&str>) -> String {
        let mut out = format!("k={}\n", self.k);
        if let Some(g) = graph {
            let _ = writeln!(out, "graph={g}");
        }
        if let Some(f) = features {
            let _ = writeln!(out, "features={f}");
        }
        for ex in &self.examples {
            let split = match ex.split {
                Split::Train => "train",
                Split::Test => "test",
            };
            let _ = writeln!(out, "{} {} {split}", ex.nodes.join(" "), ex.label);
        }
        out
    }

    /// Dense node indices of every example.
    pub fn resolve(&self, g: &Graph) -> Result<Vec<Vec<usize>>> {
        self.examples
            .iter()
            .map(|ex| {
                ex.nodes
                    .iter()
                    .map(|id| {
                        g.index_of(id)
                            .ok_or_else(|| Error::InvalidSet(format!("node {id} is not in the graph")))
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingSource {
    MotifModel,
    PooledExternal,
    RawFeatures,
}

/// One representation row per task example.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub d: usize,
    pub rows: Vec<Vec<f64>>,
    pub source: EmbeddingSource,
}

impl EmbeddingTable {
    fn new(d: usize, rows: Vec<Vec<f64>>, source: EmbeddingSource) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(Error::Shape(format!("row {i} has {} entries, expected {d}", r.len())));
            }
            if r.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("embedding row {i}")));
            }
        }
        Ok(EmbeddingTable { d, rows, source })
    }

    /// CSV with a header `x0,...,x{d-1}`, one row per example.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record((0..self.d).map(|j| format!("x{j}")))?;
        for r in &self.rows {
            w.write_record(r.iter().map(|x| x.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, source: EmbeddingSource) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let d = r.headers()?.len();
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let row: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
            rows.push(row.map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: i + 2,
                msg: format!("bad value: {e}"),
            })?);
        }
        Self::new(d, rows, source)
    }
}

/// Frozen motif representations `h^(C)` of every task k-set.
pub fn embed_ksets(model: &EnergyModel, g: &Graph, task: &KSetTask) -> Result<EmbeddingTable> {
    if model.dims().p != g.p() {
        return Err(Error::Shape(format!(
            "model expects {} feature columns, graph has {}",
            model.dims().p,
            g.p()
        )));
    }
    let sets = task.resolve(g)?;
    if let Some(s) = sets.iter().find(|s| s.len() != task.k) {
        return Err(Error::InvalidSet(format!("k-set of size {} in a k={} task", s.len(), task.k)));
    }
    let rows: Vec<Vec<f64>> = sets
        .par_iter()
        .map(|s| Ok(model.representation(&induced_subgraph(g, s)?)?.vector))
        .collect::<Result<_>>()?;
    EmbeddingTable::new(model.dims().d_rep, rows, EmbeddingSource::MotifModel)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolMode {
    Sum,
    Mean,
    RawFeatures,
}

impl std::str::FromStr for PoolMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(PoolMode::Sum),
            "mean" => Ok(PoolMode::Mean),
            "raw-features" => Ok(PoolMode::RawFeatures),
            _ => Err(Error::config("pool", format!("unknown mode `{s}`"))),
        }
    }
}

/// Per-node vectors keyed by external node id.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeTable {
    pub d: usize,
    pub rows: HashMap<String, Vec<f64>>,
}

impl NodeTable {
    /// CSV rows `id,x1,...,xd` (optional header).
    pub fn load(path: &Path) -> Result<Self> {
        let (d, rows) = read_feature_csv(path)?;
        Ok(NodeTable { d, rows })
    }

    pub fn from_graph_features(g: &Graph) -> Self {
        NodeTable {
            d: g.p(),
            rows: (0..g.n())
                .map(|v| (g.label(v).to_string(), g.features(v).to_vec()))
                .collect(),
        }
    }
}

/// Pools per-node vectors over each k-set: elementwise sum, or mean.
/// `RawFeatures` sums rows of `table` too; callers pass the graph's features.
pub fn pool_external(table: &NodeTable, task: &KSetTask, mode: PoolMode) -> Result<EmbeddingTable> {
    let mut rows = Vec::with_capacity(task.examples.len());
    for ex in &task.examples {
        let mut acc = vec![0.0; table.d];
        for id in &ex.nodes {
            let r = table
                .rows
                .get(id)
                .ok_or_else(|| Error::InvalidSet(format!("node {id} has no embedding row")))?;
            for (a, x) in acc.iter_mut().zip(r) {
                *a += x;
            }
        }
        if mode == PoolMode::Mean {
            let inv = 1.0 / ex.nodes.len() as f64;
            acc.iter_mut().for_each(|a| *a *= inv);
        }
        rows.push(acc);
    }
    let source = match mode {
        PoolMode::RawFeatures => EmbeddingSource::RawFeatures,
        _ => EmbeddingSource::PooledExternal,
    };
    EmbeddingTable::new(table.d, rows, source)
}

/// Multinomial logistic regression: `W` is `classes × d`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub classes: Vec<i64>,
    pub d: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl Classifier {
    fn scores(&self, x: &[f64], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            let w = &self.weights[c * self.d..(c + 1) * self.d];
            *o = self.bias[c] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    pub fn predict(&self, x: &[f64]) -> i64 {
        let mut s = vec![0.0; self.classes.len()];
        self.scores(x, &mut s);
        let best = (0..s.len()).fold(0, |b, c| if s[c] > s[b] { c } else { b });
        self.classes[best]
    }
}

// Mean cross-entropy plus (λ/2)‖W‖² and its gradient.
fn objective(clf: &Classifier, xs: &[&[f64]], ys: &[usize], lambda: f64, grad: Option<(&mut [f64], &mut [f64])>) -> f64 {
    let nc = clf.classes.len();
    let n = xs.len() as f64;
    let mut loss = 0.0;
    let mut s = vec![0.0; nc];
    let mut g = grad;
    if let Some((gw, gb)) = g.as_mut() {
        gw.iter_mut().for_each(|v| *v = 0.0);
        gb.iter_mut().for_each(|v| *v = 0.0);
    }
    for (x, &y) in xs.iter().zip(ys) {
        clf.scores(x, &mut s);
        let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = s.iter().map(|v| (v - m).exp()).sum();
        loss += m + z.ln() - s[y];
        if let Some((gw, gb)) = g.as_mut() {
            for c in 0..nc {
                let pc = (s[c] - m).exp() / z - if c == y { 1.0 } else { 0.0 };
                gb[c] += pc / n;
                for (gwi, xi) in gw[c * clf.d..(c + 1) * clf.d].iter_mut().zip(x.iter()) {
                    *gwi += pc * xi / n;
                }
            }
        }
    }
    if let Some((gw, _)) = g.as_mut() {
        for (gwi, w) in gw.iter_mut().zip(&clf.weights) {
            *gwi += lambda * w;
        }
    }
    loss / n + 0.5 * lambda * clf.weights.iter().map(|w| w * w).sum::<f64>()
}

/// Fits on the train split by full-batch gradient descent with backtracking
/// line search, to gradient norm 1e-6 or 5000 iterations.
///
/// Training rows are put in a canonical order first, so the result does not
/// depend on the order of examples in the task.
pub fn logistic_fit(table: &EmbeddingTable, task: &KSetTask, reg_lambda: f64, seed: u64) -> Result<Classifier> {
    if table.rows.len() != task.examples.len() {
        return Err(Error::Shape(format!(
            "{} embedding rows for {} examples",
            table.rows.len(),
            task.examples.len()
        )));
    }
    if !(reg_lambda >= 0.0) {
        return Err(Error::config("reg_lambda", "must be >= 0"));
    }
    let mut train: Vec<(&[f64], i64)> = table
        .rows
        .iter()
        .zip(&task.examples)
        .filter(|(_, ex)| ex.split == Split::Train)
        .map(|(r, ex)| (r.as_slice(), ex.label))
        .collect();
    train.sort_by(|a, b| {
        a.1.cmp(&b.1).then_with(|| {
            a.0.iter()
                .zip(b.0)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    let classes: Vec<i64> = train.iter().map(|t| t.1).collect::<BTreeSet<_>>().into_iter().collect();
    if classes.len() < 2 {
        return Err(Error::config("task", "train split needs at least two classes"));
    }
    let xs: Vec<&[f64]> = train.iter().map(|t| t.0).collect();
    let ys: Vec<usize> = train.iter().map(|t| classes.binary_search(&t.1).unwrap()).collect();
    let d = table.d;
    let nc = classes.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights: Vec<f64> = (0..nc * d).map(|_| rng.gen_range(-1e-3..1e-3)).collect();
    // centre the rows: a common shift does not change the softmax
    for j in 0..d {
        let mean = (0..nc).map(|c| weights[c * d + j]).sum::<f64>() / nc as f64;
        (0..nc).for_each(|c| weights[c * d + j] -= mean);
    }
    let mut clf = Classifier {
        classes,
        d,
        weights,
        bias: vec![0.0; nc],
        iterations: 0,
        converged: false,
    };
    let mut gw = vec![0.0; nc * d];
    let mut gb = vec![0.0; nc];
    let mut step = 1.0;
    let mut f = objective(&clf, &xs, &ys, reg_lambda, Some((&mut gw, &mut gb)));
    for it in 0..MAX_ITERS {
        let gnorm2: f64 = gw.iter().chain(&gb).map(|g| g * g).sum();
        if gnorm2.sqrt() < GRAD_TOL {
            clf.converged = true;
            clf.iterations = it;
            return Ok(clf);
        }
        step *= 2.0;
        loop {
            let mut trial = clf.clone();
            trial.weights.iter_mut().zip(&gw).for_each(|(w, g)| *w -= step * g);
            trial.bias.iter_mut().zip(&gb).for_each(|(b, g)| *b -= step * g);
            let ft = objective(&trial, &xs, &ys, reg_lambda, None);
            if ft <= f - 0.5 * step * gnorm2 || step < 1e-12 {
                clf = trial;
                break;
            }
            step *= 0.5;
        }
        f = objective(&clf, &xs, &ys, reg_lambda, Some((&mut gw, &mut gb)));
    }
    clf.iterations = MAX_ITERS;
    log::warn!("logistic regression stopped at {MAX_ITERS} iterations");
    Ok(clf)
}

/// Mean over classes of per-class recall; classes are those present in `labels`.
pub fn balanced_accuracy(predictions: &[i64], labels: &[i64]) -> Result<f64> {
    if labels.is_empty() || predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut counts: HashMap<i64, (usize, usize)> = HashMap::new();
    for (p, l) in predictions.iter().zip(labels) {
        let e = counts.entry(*l).or_default();
        e.1 += 1;
        if p == l {
            e.0 += 1;
        }
    }
    let mut recalls: Vec<f64> = counts.values().map(|&(hit, n)| hit as f64 / n as f64).collect();
    recalls.sort_by(f64::total_cmp);
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub reg_lambda: f64,
    pub seeds: Vec<u64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            reg_lambda: DEFAULT_REG_LAMBDA,
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean: f64,
    pub std: f64,
    pub per_seed: Vec<f64>,
}

impl EvalReport {
    pub fn from_scores(per_seed: Vec<f64>) -> Self {
        let n = per_seed.len() as f64;
        let mean = per_seed.iter().sum::<f64>() / n;
        let std = if per_seed.len() > 1 {
            (per_seed.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        EvalReport { mean, std, per_seed }
    }
}

/// Test-split balanced accuracy of a classifier fit on the train split.
pub fn test_balanced_accuracy(table: &EmbeddingTable, task: &KSetTask, reg_lambda: f64, seed: u64) -> Result<f64> {
    let train_classes: BTreeSet<i64> = task
        .examples
        .iter()
        .filter(|e| e.split == Split::Train)
        .map(|e| e.label)
        .collect();
    let test_classes: BTreeSet<i64> = task
        .examples
        .iter()
        .filter(|e| e.split == Split::Test)
        .map(|e| e.label)
        .collect();
    if let Some(c) = train_classes.difference(&test_classes).next() {
        return Err(Error::config("task", format!("class {c} has no test instances")));
    }
    let clf = logistic_fit(table, task, reg_lambda, seed)?;
    let (preds, labels): (Vec<i64>, Vec<i64>) = table
        .rows
        .iter()
        .zip(&task.examples)
        .filter(|(_, e)| e.split == Split::Test)
        .map(|(r, e)| (clf.predict(r), e.label))
        .unzip();
    balanced_accuracy(&preds, &labels)
}

/// Fits and scores once per configured seed; reports mean and sample std.
pub fn run_eval(table: &EmbeddingTable, task: &KSetTask, cfg: &EvalConfig) -> Result<EvalReport> {
    if cfg.seeds.is_empty() {
        return Err(Error::config("seeds", "need at least one seed"));
    }
    let scores = cfg
        .seeds
        .iter()
        .map(|&s| test_balanced_accuracy(table, task, cfg.reg_lambda, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_scores(scores))
}
