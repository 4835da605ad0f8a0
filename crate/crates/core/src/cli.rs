//! Command-line interface. Every command that writes files also writes a run
//! manifest next to its primary output, from which `rerun` can reproduce it.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimate::Estimator;
use crate::eval::{embed_ksets, pool_external, run_eval, EmbeddingSource, EmbeddingTable, EvalConfig, KSetTask, NodeTable, PoolMode};
use crate::graph::{load_graph, write_edge_list, write_features, Graph};
use crate::hon::{enumerate_cises, exact_energy_sum, DEFAULT_ENUMERATION_CAP};
use crate::model::EnergyModel;
use crate::nce::LogMpnMode;
use crate::sample::NoiseMode;
use crate::synth::{planted_hyperedge_task, SynthConfig};
use crate::tour::{build_supernode, validate_supernode, DEFAULT_MAX_TOUR_STEPS};
use crate::train::{train, write_log, TrainConfig};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "motif-energy", version, about = "Energy-based motif representations")]
pub struct Cli {
    /// Worker threads (1 is the reproducibility reference).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an energy model with NCE on a graph.
    Train(TrainArgs),
    /// Estimate a graph's total motif energy with random walk tours.
    Estimate(EstimateArgs),
    /// Exact CIS counts and energy sums by enumeration.
    Oracle(OracleArgs),
    /// Export frozen motif representations for a task's k-sets.
    Embed(EmbedArgs),
    /// Logistic-regression evaluation of representations on a task.
    Eval(EvalArgs),
    /// Write the synthetic planted-hyperedge graph and task.
    SynthTask(SynthArgs),
    /// Re-run a command from its manifest and check its outputs.
    Rerun(RerunArgs),
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    /// Edge list, one `u v` pair per line.
    #[arg(long)]
    pub graph: PathBuf,
    /// Node feature CSV (`id,f1,...,fp`).
    #[arg(long)]
    pub features: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub input: GraphArgs,
    /// JSON file with TrainConfig fields; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint path for the final model.
    #[arg(long)]
    pub out: PathBuf,
    /// Checkpoint path for the best-loss model.
    #[arg(long)]
    pub best: Option<PathBuf>,
    /// Training log CSV (default: `<out>.log.csv`).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Write 0 in the log's wall_ms column so reruns are byte-identical.
    #[arg(long)]
    pub no_timing: bool,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub supernode_budget: Option<usize>,
    #[arg(long)]
    pub minibatch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Noise graphs per positive.
    #[arg(long = "negatives", short = 'M')]
    pub m: Option<usize>,
    /// Forest Fire sample size (0 trains on the whole graph).
    #[arg(long)]
    pub sample_size: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub forward_prob: Option<f64>,
    #[arg(long, value_parser = clap::value_parser!(NoiseModeArg))]
    pub noise: Option<NoiseModeArg>,
    #[arg(long, value_parser = clap::value_parser!(LogMpnArg))]
    pub log_mpn_mode: Option<LogMpnArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub d_gnn: Option<usize>,
    #[arg(long)]
    pub d_hidden: Option<usize>,
    #[arg(long)]
    pub d_rep: Option<usize>,
    #[arg(long = "energy-width")]
    pub h: Option<usize>,
    #[arg(long)]
    pub gnn_layers: Option<usize>,
    #[arg(long)]
    pub leaky_slope: Option<f64>,
    #[arg(long)]
    pub max_tour_steps: Option<u64>,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum NoiseModeArg {
    ShuffleFeatures,
    AddEdges,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum LogMpnArg {
    Zero,
    LearnedOffset,
}

#[derive(Debug, Args)]
pub struct EnergyArgs {
    /// Model checkpoint; energies are its φ.
    #[arg(long, conflicts_with = "count")]
    pub checkpoint: Option<PathBuf>,
    /// Use φ ≡ 1, so the total energy is the CIS count.
    #[arg(long)]
    pub count: bool,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub input: GraphArgs,
    #[command(flatten)]
    pub energy: EnergyArgs,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 80)]
    pub q: usize,
    #[arg(long, default_value_t = 5000)]
    pub supernode_budget: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_TOUR_STEPS)]
    pub max_tour_steps: u64,
    /// Output JSON (stdout when omitted; no manifest is written then).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub input: GraphArgs,
    #[command(flatten)]
    pub energy: EnergyArgs,
    /// Motif sizes, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub k: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP)]
    pub cap: u64,
    /// Output CSV (`k,count,sum`); stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TaskGraphArgs {
    /// Task file (`k=<int>` header, then `v1 .. vk label split` lines).
    #[arg(long)]
    pub task: PathBuf,
    /// Evaluation graph; defaults to the task file's `graph=` entry.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Feature CSV; defaults to the task file's `features=` entry.
    #[arg(long)]
    pub features: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub input: TaskGraphArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Embedding CSV, one row per task example.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub input: TaskGraphArgs,
    /// Embed the task's k-sets with this checkpoint.
    #[arg(long, group = "source")]
    pub checkpoint: Option<PathBuf>,
    /// Precomputed embedding CSV aligned with the task's examples.
    #[arg(long, group = "source")]
    pub embeddings: Option<PathBuf>,
    /// Per-node embedding CSV (`id,x1,...,xd`) pooled over each k-set.
    #[arg(long, group = "source")]
    pub node_embeddings: Option<PathBuf>,
    /// Pooling for node embeddings, or raw-features to pool the graph's features.
    #[arg(long, value_parser = clap::value_parser!(PoolArg))]
    pub pool: Option<PoolArg>,
    #[arg(long, default_value_t = crate::eval::DEFAULT_REG_LAMBDA)]
    pub reg_lambda: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 3, 4])]
    pub seeds: Vec<u64>,
    /// Report JSON; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum PoolArg {
    Sum,
    Mean,
    RawFeatures,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory for graph.edges, graph.features.csv and task.txt.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub hyperedges: Option<usize>,
    #[arg(long)]
    pub decoys: Option<usize>,
    #[arg(long)]
    pub random_negatives: Option<usize>,
    #[arg(long)]
    pub avg_degree: Option<f64>,
    #[arg(long)]
    pub feature_noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RerunArgs {
    pub manifest: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub tool_version: String,
    pub command: String,
    /// Arguments after the program name, as given.
    pub argv: Vec<String>,
    pub config: Value,
    pub seeds: Vec<u64>,
    /// Input and output files with their SHA-256. A training log written with
    /// timing is hashed without its wall_ms column, which no rerun reproduces.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub threads: usize,
    pub wall_ms: u64,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn hash_all<P: AsRef<Path>>(paths: &[P]) -> Result<BTreeMap<String, String>> {
    paths
        .iter()
        .map(|p| Ok((p.as_ref().display().to_string(), sha256_file(p.as_ref())?)))
        .collect()
}

fn timed_log_digest(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    for line in text.lines() {
        h.update(line.rsplit_once(',').map_or(line, |(head, _)| head));
        h.update(b"\n");
    }
    Ok(hex::encode(h.finalize()))
}

fn output_digests(outputs: &[PathBuf], timed: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    outputs
        .iter()
        .map(|p| {
            let digest = if timed.contains(p) { timed_log_digest(p)? } else { sha256_file(p)? };
            Ok((p.display().to_string(), digest))
        })
        .collect()
}

fn manifest_path(primary: &Path) -> PathBuf {
    let mut s = primary.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// What a command produced, for the manifest.
struct Produced {
    config: Value,
    seeds: Vec<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    /// Outputs whose last CSV column is wall time.
    timed: Vec<PathBuf>,
}

fn write_json(path: Option<&Path>, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_input(g: &GraphArgs) -> Result<Graph> {
    load_graph(&g.graph, g.features.as_deref())
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($($flag:ident => $($field:ident).+),* $(,)?) => {
            $(if let Some(v) = a.$flag { cfg.$($field).+ = v; })*
        };
    }
    set!(
        k => k, q => q, supernode_budget => supernode_budget, minibatch => minibatch,
        lr => lr, epochs => epochs, m => m, samples => samples, forward_prob => forward_prob,
        seed => seed, d_gnn => dims.d_gnn, d_hidden => dims.d_hidden, d_rep => dims.d_rep,
        h => dims.h, gnn_layers => dims.gnn_layers, leaky_slope => leaky_slope,
        max_tour_steps => max_tour_steps,
    );
    if let Some(s) = a.sample_size {
        cfg.sample_size = (s > 0).then_some(s);
    }
    if let Some(n) = a.noise {
        cfg.noise = Some(match n {
            NoiseModeArg::ShuffleFeatures => NoiseMode::ShuffleFeatures,
            NoiseModeArg::AddEdges => NoiseMode::AddEdges,
        });
    }
    if let Some(m) = a.log_mpn_mode {
        cfg.log_mpn_mode = match m {
            LogMpnArg::Zero => LogMpnMode::Zero,
            LogMpnArg::LearnedOffset => LogMpnMode::LearnedOffset,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn default_log_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".log.csv");
    PathBuf::from(s)
}

fn cmd_train(a: &TrainArgs) -> Result<Produced> {
    let cfg = train_config(a)?;
    let g = load_input(&a.input)?;
    let out = train(&[g], &cfg)?;
    out.model.save(&a.out)?;
    let log_path = a.log.clone().unwrap_or_else(|| default_log_path(&a.out));
    write_log(&out.log, &log_path, !a.no_timing)?;
    let timed = if a.no_timing { vec![] } else { vec![log_path.clone()] };
    let mut outputs = vec![a.out.clone(), log_path];
    if let Some(best) = &a.best {
        out.best_model.save(best)?;
        outputs.push(best.clone());
    }
    let mut config = serde_json::to_value(&cfg)?;
    config["learned_offset"] = json!(out.offset);
    config["positives"] = json!(out.positives);
    config["best_loss"] = json!(if out.best_loss.is_finite() { Some(out.best_loss) } else { None });
    let mut inputs = vec![a.input.graph.clone()];
    inputs.extend(a.input.features.clone());
    inputs.extend(a.config.clone());
    Ok(Produced {
        config,
        seeds: vec![cfg.seed],
        inputs,
        outputs,
        timed,
    })
}

fn load_energy(e: &EnergyArgs, g: &Graph) -> Result<Option<EnergyModel>> {
    match (&e.checkpoint, e.count) {
        (Some(path), _) => {
            let m = EnergyModel::load(path)?;
            if m.dims().p != g.p() {
                return Err(Error::Shape(format!(
                    "checkpoint expects {} feature columns, graph has {}",
                    m.dims().p,
                    g.p()
                )));
            }
            Ok(Some(m))
        }
        (None, true) => Ok(None),
        (None, false) => Err(Error::config("energy", "pass --checkpoint or --count")),
    }
}

fn cmd_estimate(a: &EstimateArgs) -> Result<Produced> {
    let g = load_input(&a.input)?;
    if a.k < 2 || a.k > g.n() {
        return Err(Error::config("k", format!("must satisfy 2 <= k <= n = {}", g.n())));
    }
    let model = load_energy(&a.energy, &g)?;
    let s = build_supernode(&g, a.k, a.supernode_budget, a.seed)?;
    let report = validate_supernode(&g, &s);
    let mut est = Estimator::new(&g, s).with_max_steps(a.max_tour_steps);
    let e = match &model {
        Some(m) => est.estimate_model(a.q, a.seed, m)?,
        None => est.estimate(a.q, a.seed, |_| 1.0)?,
    };
    let value = json!({
        "value": e.value,
        "supernode_term": e.supernode_term,
        "tour_term": e.tour_term,
        "q": e.q,
        "mean_tour_length": e.mean_tour_length,
        "std_error": e.std_error,
        "boundary_degree": e.boundary_degree,
        "covers_space": e.covers_space,
        "supernode_valid": report.valid,
        "supernode_report": report,
    });
    write_json(a.out.as_deref(), &value)?;
    let mut inputs = vec![a.input.graph.clone()];
    inputs.extend(a.input.features.clone());
    inputs.extend(a.energy.checkpoint.clone());
    Ok(Produced {
        config: json!({"k": a.k, "q": a.q, "supernode_budget": a.supernode_budget, "count": a.energy.count, "max_tour_steps": a.max_tour_steps}),
        seeds: vec![a.seed],
        inputs,
        outputs: a.out.iter().cloned().collect(),
        timed: vec![],
    })
}

fn cmd_oracle(a: &OracleArgs) -> Result<Produced> {
    let g = load_input(&a.input)?;
    let model = load_energy(&a.energy, &g)?;
    let mut text = String::from("k,count,sum\n");
    for &k in &a.k {
        let count = enumerate_cises(&g, k, a.cap)?.len();
        let sum = match &model {
            Some(m) => {
                // model errors surface through NaN and the non-finite check
                exact_energy_sum(&g, k, a.cap, |motif| m.energy(motif).unwrap_or(f64::NAN))?
            }
            None => count as f64,
        };
        text.push_str(&format!("{k},{count},{sum}\n"));
    }
    match &a.out {
        Some(p) => fs::write(p, &text).map_err(|e| Error::io(p, e))?,
        None => print!("{text}"),
    }
    let mut inputs = vec![a.input.graph.clone()];
    inputs.extend(a.input.features.clone());
    inputs.extend(a.energy.checkpoint.clone());
    Ok(Produced {
        config: json!({"k": a.k, "cap": a.cap, "count": a.energy.count}),
        seeds: vec![],
        inputs,
        outputs: a.out.iter().cloned().collect(),
        timed: vec![],
    })
}

fn load_task_graph(a: &TaskGraphArgs) -> Result<(KSetTask, Graph, Vec<PathBuf>)> {
    let task = KSetTask::load(&a.task)?;
    let graph = a
        .graph
        .clone()
        .or_else(|| task.graph_ref.clone())
        .ok_or_else(|| Error::config("graph", "task names no graph; pass --graph"))?;
    let features = a.features.clone().or_else(|| task.features_ref.clone());
    let g = load_graph(&graph, features.as_deref())?;
    let mut inputs = vec![a.task.clone(), graph];
    inputs.extend(features);
    Ok((task, g, inputs))
}

fn check_model_k(model: &EnergyModel, task: &KSetTask) -> Result<()> {
    match model.k() {
        Some(k) if k != task.k => Err(Error::config(
            "k",
            format!("checkpoint was trained for k = {k}, task has k = {}", task.k),
        )),
        _ => Ok(()),
    }
}

fn cmd_embed(a: &EmbedArgs) -> Result<Produced> {
    let (task, g, inputs) = load_task_graph(&a.input)?;
    let model = EnergyModel::load(&a.checkpoint)?;
    check_model_k(&model, &task)?;
    embed_ksets(&model, &g, &task)?.save(&a.out)?;
    Ok(Produced {
        config: json!({}),
        seeds: vec![],
        inputs: inputs.into_iter().chain([a.checkpoint.clone()]).collect(),
        outputs: vec![a.out.clone()],
        timed: vec![],
    })
}

fn cmd_eval(a: &EvalArgs) -> Result<Produced> {
    let (task, g, inputs) = load_task_graph(&a.input)?;
    let mut extra = Vec::new();
    let table = match (&a.checkpoint, &a.embeddings, &a.node_embeddings, a.pool) {
        (Some(ckpt), None, None, None) => {
            let model = EnergyModel::load(ckpt)?;
            check_model_k(&model, &task)?;
            extra.push(ckpt.clone());
            embed_ksets(&model, &g, &task)?
        }
        (None, Some(path), None, None) => {
            extra.push(path.clone());
            EmbeddingTable::load(path, EmbeddingSource::PooledExternal)?
        }
        (None, None, Some(path), Some(pool @ (PoolArg::Sum | PoolArg::Mean))) => {
            extra.push(path.clone());
            let mode = if matches!(pool, PoolArg::Sum) { PoolMode::Sum } else { PoolMode::Mean };
            pool_external(&NodeTable::load(path)?, &task, mode)?
        }
        (None, None, None, Some(PoolArg::RawFeatures)) => {
            pool_external(&NodeTable::from_graph_features(&g), &task, PoolMode::RawFeatures)?
        }
        _ => {
            return Err(Error::config(
                "eval",
                "use one of --checkpoint, --embeddings, --node-embeddings with --pool sum|mean, or --pool raw-features",
            ))
        }
    };
    if table.rows.len() != task.examples.len() {
        return Err(Error::Shape(format!(
            "{} embedding rows for {} task examples",
            table.rows.len(),
            task.examples.len()
        )));
    }
    let cfg = EvalConfig {
        reg_lambda: a.reg_lambda,
        seeds: a.seeds.clone(),
    };
    let report = run_eval(&table, &task, &cfg)?;
    write_json(a.out.as_deref(), &serde_json::to_value(&report)?)?;
    Ok(Produced {
        config: serde_json::to_value(&cfg)?,
        seeds: a.seeds.clone(),
        inputs: inputs.into_iter().chain(extra).collect(),
        outputs: a.out.iter().cloned().collect(),
        timed: vec![],
    })
}

fn cmd_synth(a: &SynthArgs) -> Result<Produced> {
    let mut cfg = SynthConfig::default();
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = a.$f { cfg.$f = v; })* };
    }
    set!(n, k, p, hyperedges, decoys, random_negatives, avg_degree, feature_noise, seed);
    let (g, task) = planted_hyperedge_task(&cfg)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let edges = a.out_dir.join("graph.edges");
    let feats = a.out_dir.join("graph.features.csv");
    let task_path = a.out_dir.join("task.txt");
    write_edge_list(&g, &edges)?;
    write_features(&g, &feats)?;
    let text = task.to_text(Some("graph.edges"), Some("graph.features.csv"));
    fs::write(&task_path, text).map_err(|e| Error::io(&task_path, e))?;
    Ok(Produced {
        config: serde_json::to_value(&cfg)?,
        seeds: vec![cfg.seed],
        inputs: vec![],
        outputs: vec![task_path, edges, feats],
        timed: vec![],
    })
}

fn primary_output(cmd: &Command) -> Option<PathBuf> {
    match cmd {
        Command::Train(a) => Some(a.out.clone()),
        Command::Estimate(a) => a.out.clone(),
        Command::Oracle(a) => a.out.clone(),
        Command::Embed(a) => Some(a.out.clone()),
        Command::Eval(a) => a.out.clone(),
        Command::SynthTask(a) => Some(a.out_dir.join("task.txt")),
        Command::Rerun(_) => None,
    }
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Train(_) => "train",
        Command::Estimate(_) => "estimate",
        Command::Oracle(_) => "oracle",
        Command::Embed(_) => "embed",
        Command::Eval(_) => "eval",
        Command::SynthTask(_) => "synth-task",
        Command::Rerun(_) => "rerun",
    }
}

fn execute(cmd: &Command, argv: &[String], threads: usize, record: bool) -> Result<()> {
    let start = Instant::now();
    let produced = match cmd {
        Command::Train(a) => cmd_train(a)?,
        Command::Estimate(a) => cmd_estimate(a)?,
        Command::Oracle(a) => cmd_oracle(a)?,
        Command::Embed(a) => cmd_embed(a)?,
        Command::Eval(a) => cmd_eval(a)?,
        Command::SynthTask(a) => cmd_synth(a)?,
        Command::Rerun(a) => return rerun(&a.manifest, threads),
    };
    let Some(primary) = primary_output(cmd).filter(|_| record) else {
        return Ok(());
    };
    let manifest = RunManifest {
        manifest_version: MANIFEST_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: command_name(cmd).to_string(),
        argv: argv.to_vec(),
        config: produced.config,
        seeds: produced.seeds,
        inputs: hash_all(&produced.inputs)?,
        outputs: output_digests(&produced.outputs, &produced.timed)?,
        threads,
        wall_ms: start.elapsed().as_millis() as u64,
    };
    let path = manifest_path(&primary);
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Re-executes the manifest's command and checks every output hash.
fn rerun(path: &Path, threads: usize) -> Result<()> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: RunManifest = serde_json::from_str(&text)?;
    if manifest.manifest_version != MANIFEST_VERSION {
        return Err(Error::config(
            "manifest",
            format!("version {} is not supported (expected {MANIFEST_VERSION})", manifest.manifest_version),
        ));
    }
    for (input, hash) in &manifest.inputs {
        if &sha256_file(Path::new(input))? != hash {
            return Err(Error::config("manifest", format!("input {input} changed since the recorded run")));
        }
    }
    let cli = Cli::try_parse_from(std::iter::once("motif-energy".to_string()).chain(manifest.argv.iter().cloned()))
        .map_err(|e| Error::config("manifest", format!("recorded arguments do not parse: {e}")))?;
    if matches!(cli.command, Command::Rerun(_)) {
        return Err(Error::config("manifest", "refusing to rerun a rerun"));
    }
    in_pool(threads, || execute(&cli.command, &manifest.argv, threads, false))?;
    let timed = match &cli.command {
        Command::Train(a) if !a.no_timing => vec![a.log.clone().unwrap_or_else(|| default_log_path(&a.out))],
        _ => vec![],
    };
    let outputs: Vec<PathBuf> = manifest.outputs.keys().map(PathBuf::from).collect();
    let now = output_digests(&outputs, &timed)?;
    let mismatched: Vec<String> = manifest
        .outputs
        .iter()
        .filter(|(path, hash)| now.get(*path) != Some(*hash))
        .map(|(path, _)| path.clone())
        .collect();
    if mismatched.is_empty() {
        println!("reproduced {} output(s) of `{}`", manifest.outputs.len(), manifest.command);
        Ok(())
    } else {
        Err(Error::NotReproduced(mismatched))
    }
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config("threads", e.to_string()))?;
    pool.install(f)
}

/// Runs a parsed command line; `args` is the raw argv, recorded in manifests.
pub fn run_parsed(cli: Cli, args: &[OsString]) -> Result<()> {
    let threads = match cli.threads {
        Some(0) => return Err(Error::config("threads", "must be >= 1")),
        Some(t) => t,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let argv: Vec<String> = args
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    in_pool(threads, || execute(&cli.command, &argv, threads, true))
}
