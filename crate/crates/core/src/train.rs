//! NCE training loop.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adam::Adam;
use crate::error::{Error, Result};
use crate::estimate::Estimator;
use crate::graph::Graph;
use crate::model::{EnergyModel, Gradient, ModelDims, DEFAULT_LEAKY_SLOPE};
use crate::nce::{nce_energy_grad, nce_loss, nce_response, LogMpnMode};
use crate::sample::{forest_fire_sample, make_noise, NoiseMode};
use crate::tour::{build_supernode, derive_seed, validate_supernode, DEFAULT_MAX_TOUR_STEPS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub k: usize,
    /// Tours per energy estimate, for data and noise alike.
    pub q: usize,
    pub supernode_budget: usize,
    /// Positive examples per optimizer step.
    pub minibatch: usize,
    pub lr: f64,
    pub adam_betas: [f64; 2],
    pub adam_eps: f64,
    pub epochs: usize,
    /// Noise graphs per positive.
    #[serde(rename = "M")]
    pub m: usize,
    /// Forest Fire sample size; `None` trains on the input graphs whole.
    pub sample_size: Option<usize>,
    /// Forest Fire samples drawn from each input graph.
    pub samples: usize,
    pub forward_prob: f64,
    /// `None` picks shuffle-features for graphs with features, add-edges otherwise.
    pub noise: Option<NoiseMode>,
    pub log_mpn_mode: LogMpnMode,
    pub seed: u64,
    /// Architecture; `p` is taken from the training graphs.
    pub dims: ModelDims,
    pub leaky_slope: f64,
    pub rho_output_activation: bool,
    pub max_tour_steps: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 3,
            q: 80,
            supernode_budget: 5000,
            minibatch: 50,
            lr: 1e-3,
            adam_betas: [0.9, 0.999],
            adam_eps: 1e-8,
            epochs: 30,
            m: 1,
            sample_size: Some(100),
            samples: 100,
            forward_prob: 0.7,
            noise: None,
            log_mpn_mode: LogMpnMode::Zero,
            seed: 0,
            dims: ModelDims::default(),
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            rho_output_activation: false,
            max_tour_steps: DEFAULT_MAX_TOUR_STEPS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, v: usize| {
            if v == 0 {
                Err(Error::config(field, "must be >= 1"))
            } else {
                Ok(())
            }
        };
        if self.k < 2 {
            return Err(Error::config("k", "must be >= 2"));
        }
        positive("q", self.q)?;
        positive("supernode_budget", self.supernode_budget)?;
        positive("minibatch", self.minibatch)?;
        positive("M", self.m)?;
        positive("samples", self.samples)?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be a positive number"));
        }
        for (i, b) in self.adam_betas.iter().enumerate() {
            if !(0.0..1.0).contains(b) {
                return Err(Error::config(format!("adam_betas[{i}]"), "must lie in [0, 1)"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config("adam_eps", "must be positive"));
        }
        if let Some(s) = self.sample_size {
            if s < self.k {
                return Err(Error::config("sample_size", format!("must be >= k = {}", self.k)));
            }
        }
        if !(0.0..=1.0).contains(&self.forward_prob) {
            return Err(Error::config("forward_prob", "must lie in [0, 1]"));
        }
        if self.max_tour_steps == 0 {
            return Err(Error::config("max_tour_steps", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Estimated NCE loss per positive example (data term plus its M noise terms).
    pub loss: f64,
    pub mean_yhat_pos: f64,
    pub mean_yhat_neg: f64,
    pub mean_tour_len: f64,
    pub wall_ms: u64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: EnergyModel,
    /// Parameters after the epoch with the lowest logged loss.
    pub best_model: EnergyModel,
    pub best_loss: f64,
    pub log: Vec<EpochLog>,
    /// Learned `log(M·P_n)` (zero unless learned-offset mode).
    pub offset: f64,
    pub positives: usize,
}

pub fn write_log(log: &[EpochLog], path: &std::path::Path, timing: bool) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(["epoch", "loss", "mean_yhat_pos", "mean_yhat_neg", "mean_tour_len", "wall_ms"])?;
    for row in log {
        let mut row = row.clone();
        if !timing {
            row.wall_ms = 0;
        }
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn resolve_noise(cfg: &TrainConfig, p: usize) -> Result<NoiseMode> {
    match cfg.noise {
        Some(NoiseMode::ShuffleFeatures) if p == 0 => {
            Err(Error::config("noise", "shuffle-features needs node features"))
        }
        Some(mode) => Ok(mode),
        None if p > 0 => Ok(NoiseMode::ShuffleFeatures),
        None => Ok(NoiseMode::AddEdges),
    }
}

/// Positive examples: Forest Fire samples (or the graphs themselves), keeping
/// only graphs on which a valid supernode can be built.
pub fn positive_examples(data: &[Graph], cfg: &TrainConfig) -> Result<Vec<Graph>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2));
    for (gi, g) in data.iter().enumerate() {
        let draws: Vec<Graph> = match cfg.sample_size {
            Some(size) if size < g.n() => (0..cfg.samples)
                .map(|_| forest_fire_sample(g, size, cfg.forward_prob, &mut rng))
                .collect::<Result<_>>()?,
            _ => vec![g.clone()],
        };
        for (si, s) in draws.into_iter().enumerate() {
            match build_supernode(&s, cfg.k, cfg.supernode_budget, 0) {
                Ok(sn) => {
                    let report = validate_supernode(&s, &sn);
                    if report.valid || sn.covers_space() {
                        out.push(s);
                    } else {
                        log::warn!("skipping example {si} of graph {gi}: {}", report.reasons.join("; "));
                    }
                }
                Err(e) => log::warn!("skipping example {si} of graph {gi}: {e}"),
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Sampling(format!(
            "no training example admits a valid supernode for k = {}",
            cfg.k
        )));
    }
    Ok(out)
}

struct Scored {
    positive: bool,
    phi: f64,
    tour_len: f64,
    grad: Gradient,
}

/// Trains on `data` and returns the final and best-loss models.
pub fn train(data: &[Graph], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let p = data
        .first()
        .ok_or_else(|| Error::config("graph", "no training graphs"))?
        .p();
    if let Some(g) = data.iter().find(|g| g.p() != p) {
        return Err(Error::Shape(format!("training graphs mix feature widths {p} and {}", g.p())));
    }
    let noise_mode = resolve_noise(cfg, p)?;
    let dims = ModelDims { p, ..cfg.dims };
    let mut model = EnergyModel::init(dims, cfg.leaky_slope, derive_seed(cfg.seed, 1))?
        .with_rho_output_activation(cfg.rho_output_activation)
        .with_k(cfg.k);
    let positives = positive_examples(data, cfg)?;
    log::info!("{} positive examples", positives.len());

    let learned = cfg.log_mpn_mode == LogMpnMode::LearnedOffset;
    let mut offset = 0.0;
    let mut adam = Adam::new(
        model.num_params() + usize::from(learned),
        cfg.lr,
        (cfg.adam_betas[0], cfg.adam_betas[1]),
        cfg.adam_eps,
    );
    let mut best_model = model.clone();
    let mut best_loss = f64::INFINITY;
    let mut log = Vec::with_capacity(cfg.epochs);

    // One estimator per positive keeps its neighbor cache across epochs.
    let mut estimators: Vec<Option<Estimator>> = positives.iter().map(|_| None).collect();
    let mut order: Vec<usize> = (0..positives.len()).collect();
    let mut flat = vec![0.0; adam_len(&model, learned)];
    let mut grad_buf = vec![0.0; flat.len()];

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let epoch_seed = derive_seed(derive_seed(cfg.seed, 3), epoch as u64);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
        let (mut loss_sum, mut ypos, mut yneg, mut tours, mut npos, mut nneg) = (0.0, 0.0, 0.0, 0.0, 0usize, 0usize);

        for batch in order.chunks(cfg.minibatch) {
            // Borrow the batch's estimators; the rest stay untouched.
            let mut slots: Vec<(usize, Option<Estimator>)> =
                batch.iter().map(|&i| (i, estimators[i].take())).collect();
            let model_ref = &model;
            let scored: Vec<Result<Vec<Scored>>> = slots
                .par_iter_mut()
                .map(|(i, slot)| score_positive(&positives[*i], *i, slot, model_ref, cfg, noise_mode, epoch_seed))
                .collect();
            for (i, slot) in slots {
                estimators[i] = slot;
            }

            let mut grad = Gradient::zeros(model.num_params());
            let mut offset_grad = 0.0;
            let (mut rpos, mut rneg) = (Vec::new(), Vec::new());
            for group in scored {
                for s in group? {
                    let y = nce_response(s.phi, offset);
                    let dl = nce_energy_grad(y, s.positive);
                    grad.add_scaled(&s.grad, dl);
                    offset_grad += dl;
                    tours += s.tour_len;
                    if s.positive {
                        rpos.push(y);
                        ypos += y;
                        npos += 1;
                    } else {
                        rneg.push(y);
                        yneg += y;
                        nneg += 1;
                    }
                }
            }
            let batch_loss = nce_loss(&rpos, &rneg);
            if !batch_loss.is_finite() || grad.as_slice().iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    last_good: Box::new(best_model),
                });
            }
            loss_sum += batch_loss;

            flat[..model.num_params()].copy_from_slice(model.params());
            grad_buf[..model.num_params()].copy_from_slice(grad.as_slice());
            if learned {
                flat[model.num_params()] = offset;
                grad_buf[model.num_params()] = offset_grad;
            }
            adam.step(&mut flat, &grad_buf);
            let np = model.num_params();
            model.params_mut().copy_from_slice(&flat[..np]);
            if learned {
                offset = flat[np];
            }
        }

        let row = EpochLog {
            epoch,
            loss: loss_sum / positives.len() as f64,
            mean_yhat_pos: ypos / npos.max(1) as f64,
            mean_yhat_neg: yneg / nneg.max(1) as f64,
            mean_tour_len: tours / (npos + nneg).max(1) as f64,
            wall_ms: start.elapsed().as_millis() as u64,
        };
        log::info!(
            "epoch {epoch}: loss {:.5} yhat+ {:.4} yhat- {:.4} tour {:.2}",
            row.loss,
            row.mean_yhat_pos,
            row.mean_yhat_neg,
            row.mean_tour_len
        );
        if row.loss < best_loss {
            best_loss = row.loss;
            best_model = model.clone();
        }
        log.push(row);
    }

    Ok(TrainOutcome {
        model,
        best_model,
        best_loss,
        log,
        offset,
        positives: positives.len(),
    })
}

fn adam_len(model: &EnergyModel, learned: bool) -> usize {
    model.num_params() + usize::from(learned)
}

// Energy estimates and gradients for one positive and its M noise graphs.
fn score_positive<'a>(
    g: &'a Graph,
    index: usize,
    slot: &mut Option<Estimator<'a>>,
    model: &EnergyModel,
    cfg: &TrainConfig,
    noise_mode: NoiseMode,
    epoch_seed: u64,
) -> Result<Vec<Scored>> {
    let ex_seed = derive_seed(epoch_seed, index as u64);
    let supernode = build_supernode(g, cfg.k, cfg.supernode_budget, derive_seed(ex_seed, 0))?;
    let est = match slot {
        Some(est) => {
            est.set_supernode(supernode);
            est
        }
        None => slot.insert(Estimator::new(g, supernode).with_max_steps(cfg.max_tour_steps)),
    };
    let mut out = Vec::with_capacity(1 + cfg.m);
    let (e, grad) = est.estimate_with_grad(cfg.q, derive_seed(ex_seed, 1), model)?;
    out.push(Scored {
        positive: true,
        phi: e.value,
        tour_len: e.mean_tour_length,
        grad,
    });
    for j in 0..cfg.m {
        let nseed = derive_seed(ex_seed, 2 + j as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(nseed);
        let noise = make_noise(g, noise_mode, &mut rng)?;
        let sn = build_supernode(&noise, cfg.k, cfg.supernode_budget, derive_seed(nseed, 0))?;
        let (e, grad) = Estimator::new(&noise, sn)
            .with_max_steps(cfg.max_tour_steps)
            .estimate_with_grad(cfg.q, derive_seed(nseed, 1), model)?;
        out.push(Scored {
            positive: false,
            phi: e.value,
            tour_len: e.mean_tour_length,
            grad,
        });
    }
    Ok(out)
}

/// Mean NCE responses on fresh positives and their noise graphs, without training.
pub fn mean_responses(
    model: &EnergyModel,
    offset: f64,
    graphs: &[Graph],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(f64, f64)> {
    let noise_mode = resolve_noise(cfg, model.dims().p)?;
    let scored: Vec<(f64, f64)> = graphs
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            let s = derive_seed(seed, i as u64);
            let sn = build_supernode(g, cfg.k, cfg.supernode_budget, derive_seed(s, 0))?;
            let pos = Estimator::new(g, sn).estimate_model(cfg.q, derive_seed(s, 1), model)?;
            let noise = make_noise(g, noise_mode, &mut ChaCha8Rng::seed_from_u64(derive_seed(s, 2)))?;
            let sn = build_supernode(&noise, cfg.k, cfg.supernode_budget, derive_seed(s, 3))?;
            let neg = Estimator::new(&noise, sn).estimate_model(cfg.q, derive_seed(s, 4), model)?;
            Ok((nce_response(pos.value, offset), nce_response(neg.value, offset)))
        })
        .collect::<Result<_>>()?;
    let (mut a, mut b) = (0.0, 0.0);
    for (x, y) in scored {
        a += x;
        b += y;
    }
    let n = graphs.len().max(1) as f64;
    Ok((a / n, b / n))
}
