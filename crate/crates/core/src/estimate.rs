//! The random-walk-tour estimator of the total energy `Φ = Σ_{C ∈ CIS_k} φ(C)`.
//!
//! With supernode `I`, boundary degree `B` and `q` tours whose interior states
//! are `C^r_1, ..., C^r_{t_r - 1}`:
//!
//! ```text
//! Φ̂ = Σ_{C ∈ I} φ(C) + (B / q) Σ_r Σ_i φ(C^r_i) / deg(C^r_i)
//! ```
//!
//! Each tour's interior sum has expectation `Σ_{C ∉ I} φ(C) / B`, so `Φ̂` is
//! unbiased for any `q ≥ 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{EnergyModel, Gradient};
use crate::motif::{motif_of, Motif};
use crate::tour::{derive_seed, tour_rng, validate_supernode, Supernode, SupernodeReport, TourSampler, TourTrace, DEFAULT_MAX_TOUR_STEPS};

pub const DEFAULT_MAX_ATTEMPTS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyEstimate {
    pub value: f64,
    pub supernode_term: f64,
    pub tour_term: f64,
    pub q: usize,
    /// `supernode_term + B · Σ_i φ(C^r_i)/deg(C^r_i)` for each tour; their mean is `value`.
    pub per_tour_values: Vec<f64>,
    pub mean_tour_length: f64,
    /// Standard error of `value` from the per-tour spread; `None` when `q < 2`.
    pub std_error: Option<f64>,
    pub boundary_degree: usize,
    pub covers_space: bool,
}

/// Runs repeated estimates against one graph and supernode, reusing the
/// memoized k-HON neighborhoods between calls.
pub struct Estimator<'a> {
    sampler: TourSampler<'a>,
    max_steps: u64,
    max_attempts: usize,
    paths: Vec<Vec<u32>>,
}

impl<'a> Estimator<'a> {
    pub fn new(g: &'a Graph, s: Supernode) -> Self {
        Estimator {
            sampler: TourSampler::new_unchecked(g, s),
            max_steps: DEFAULT_MAX_TOUR_STEPS,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            paths: Vec::new(),
        }
    }

    pub fn with_max_steps(mut self, max_steps: u64) -> Self {
        self.max_steps = max_steps;
        self
    }

    /// Number of times a batch with a truncated tour is redrawn before giving up.
    pub fn with_max_attempts(mut self, attempts: usize) -> Self {
        self.max_attempts = attempts.max(1);
        self
    }

    pub fn graph(&self) -> &'a Graph {
        self.sampler.graph()
    }

    pub fn supernode(&self) -> &Supernode {
        self.sampler.supernode()
    }

    /// Replaces the supernode; cached neighborhoods stay valid since the graph is unchanged.
    pub fn set_supernode(&mut self, s: Supernode) {
        self.sampler.replace_supernode(s);
    }

    pub fn report(&self) -> SupernodeReport {
        validate_supernode(self.graph(), self.supernode())
    }

    // Fills `self.paths` with q complete tours. A batch containing a truncated
    // tour is discarded whole and redrawn under a derived seed.
    fn draw(&mut self, q: usize, seed: u64) -> Result<()> {
        if q == 0 {
            return Err(Error::config("q", "must be >= 1"));
        }
        self.paths.resize_with(q, Vec::new);
        self.paths.truncate(q);
        if self.supernode().covers_space() {
            for p in &mut self.paths {
                p.clear();
            }
            return Ok(());
        }
        if self.supernode().boundary_degree() == 0 {
            return Err(Error::Supernode(
                "supernode has no boundary edges but does not cover every component".into(),
            ));
        }
        for attempt in 0..self.max_attempts {
            let batch_seed = if attempt == 0 {
                seed
            } else {
                derive_seed(seed, attempt as u64)
            };
            let mut ok = true;
            for (r, path) in self.paths.iter_mut().enumerate() {
                let mut rng = tour_rng(batch_seed, r as u64);
                if !self.sampler.walk(&mut rng, self.max_steps, path) {
                    ok = false;
                    break;
                }
            }
            if ok {
                return Ok(());
            }
            log::warn!(
                "tour exceeded {} steps (attempt {} of {}); redrawing batch",
                self.max_steps,
                attempt + 1,
                self.max_attempts
            );
        }
        Err(Error::PersistentTruncation {
            attempts: self.max_attempts,
            cap: self.max_steps,
        })
    }

    /// `q` tours drawn exactly as [`Estimator::estimate`] draws them.
    pub fn tours(&mut self, q: usize, seed: u64) -> Result<Vec<TourTrace>> {
        self.draw(q, seed)?;
        Ok(self.paths.iter().map(|p| self.sampler.trace_of(p)).collect())
    }

    /// Estimate with a per-motif energy that may fail.
    pub fn estimate_with<F>(&mut self, q: usize, seed: u64, mut phi: F) -> Result<EnergyEstimate>
    where
        F: FnMut(&Motif) -> Result<f64>,
    {
        self.draw(q, seed)?;
        let g = self.graph();
        let mut member_phi = Vec::with_capacity(self.supernode().len());
        for c in self.supernode().members() {
            member_phi.push(checked(c, phi(&motif_of(g, c)))?);
        }
        // φ is memoized per state for the duration of this call
        let mut cache = vec![f64::NAN; self.sampler.state_count()];
        for path in &self.paths {
            for &id in path {
                if cache[id as usize].is_nan() {
                    let c = self.sampler.set(id);
                    cache[id as usize] = checked(c, phi(&motif_of(g, c)))?;
                }
            }
        }
        Ok(self.assemble(q, &member_phi, &cache))
    }

    /// Estimate of `Σ φ` for an infallible `phi`; non-finite values are errors.
    pub fn estimate<F>(&mut self, q: usize, seed: u64, phi: F) -> Result<EnergyEstimate>
    where
        F: Fn(&Motif) -> f64,
    {
        self.estimate_with(q, seed, |m| Ok(phi(m)))
    }

    /// Estimate of the model's total energy.
    pub fn estimate_model(&mut self, q: usize, seed: u64, model: &EnergyModel) -> Result<EnergyEstimate> {
        self.estimate_with(q, seed, |m| model.energy(m))
    }

    /// Estimate plus `∇Φ̂`: members weigh 1, each tour visit weighs `B/(q·deg)`.
    pub fn estimate_with_grad(
        &mut self,
        q: usize,
        seed: u64,
        model: &EnergyModel,
    ) -> Result<(EnergyEstimate, Gradient)> {
        self.draw(q, seed)?;
        let g = self.graph();
        let mut grad = Gradient::zeros(model.num_params());
        let mut member_phi = Vec::with_capacity(self.supernode().len());
        for c in self.supernode().members() {
            member_phi.push(model.accumulate_grad(&motif_of(g, c), 1.0, &mut grad)?);
        }
        let b = self.supernode().boundary_degree() as f64;
        let states = self.sampler.state_count();
        let mut weight = vec![0.0; states];
        let mut order = Vec::new();
        for path in &self.paths {
            for &id in path {
                if weight[id as usize] == 0.0 {
                    order.push(id);
                }
                weight[id as usize] += b / (q as f64 * self.sampler.degree(id) as f64);
            }
        }
        // backward in a fixed (canonical) order so the sum is reproducible
        order.sort_unstable_by(|a, b| self.sampler.set(*a).cmp(self.sampler.set(*b)));
        let mut cache = vec![f64::NAN; states];
        for id in order {
            let m = motif_of(g, self.sampler.set(id));
            cache[id as usize] = model.accumulate_grad(&m, weight[id as usize], &mut grad)?;
        }
        Ok((self.assemble(q, &member_phi, &cache), grad))
    }

    fn assemble(&self, q: usize, member_phi: &[f64], cache: &[f64]) -> EnergyEstimate {
        let s = self.supernode();
        let supernode_term: f64 = member_phi.iter().sum();
        if s.covers_space() {
            return EnergyEstimate {
                value: supernode_term,
                supernode_term,
                tour_term: 0.0,
                q,
                per_tour_values: vec![supernode_term; q],
                mean_tour_length: 0.0,
                std_error: if q >= 2 { Some(0.0) } else { None },
                boundary_degree: 0,
                covers_space: true,
            };
        }
        let b = s.boundary_degree() as f64;
        let sums: Vec<f64> = self
            .paths
            .iter()
            .map(|p| {
                p.iter()
                    .map(|&id| cache[id as usize] / self.sampler.degree(id) as f64)
                    .sum::<f64>()
            })
            .collect();
        finish(supernode_term, b, &sums, self.paths.iter().map(|p| p.len() + 1))
    }
}

fn checked(c: &crate::motif::KSet, v: Result<f64>) -> Result<f64> {
    let v = v?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("energy of {c}")))
    }
}

fn finish(
    supernode_term: f64,
    b: f64,
    sums: &[f64],
    lengths: impl Iterator<Item = usize>,
) -> EnergyEstimate {
    let q = sums.len();
    let qf = q as f64;
    let tour_term = b / qf * sums.iter().sum::<f64>();
    let per_tour_values: Vec<f64> = sums.iter().map(|s| supernode_term + b * s).collect();
    let std_error = (q >= 2).then(|| {
        let mean = per_tour_values.iter().sum::<f64>() / qf;
        let var = per_tour_values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (qf - 1.0);
        (var / qf).sqrt()
    });
    let mean_tour_length = lengths.map(|l| l as f64).sum::<f64>() / qf;
    EnergyEstimate {
        value: supernode_term + tour_term,
        supernode_term,
        tour_term,
        q,
        per_tour_values,
        mean_tour_length,
        std_error,
        boundary_degree: b as usize,
        covers_space: false,
    }
}

/// `Φ̂` from already-drawn tours. Used to differentiate the estimate with the
/// walk held fixed.
pub fn estimate_from_traces<F>(s: &Supernode, g: &Graph, traces: &[TourTrace], mut phi: F) -> Result<EnergyEstimate>
where
    F: FnMut(&Motif) -> Result<f64>,
{
    if traces.is_empty() {
        return Err(Error::config("q", "must be >= 1"));
    }
    let mut supernode_term = 0.0;
    for c in s.members() {
        supernode_term += checked(c, phi(&motif_of(g, c)))?;
    }
    if s.covers_space() {
        let q = traces.len();
        return Ok(EnergyEstimate {
            value: supernode_term,
            supernode_term,
            tour_term: 0.0,
            q,
            per_tour_values: vec![supernode_term; q],
            mean_tour_length: 0.0,
            std_error: if q >= 2 { Some(0.0) } else { None },
            boundary_degree: 0,
            covers_space: true,
        });
    }
    let mut sums = Vec::with_capacity(traces.len());
    for t in traces {
        let mut acc = 0.0;
        for (c, &d) in t.states.iter().zip(&t.degrees) {
            acc += checked(c, phi(&motif_of(g, c)))? / d as f64;
        }
        sums.push(acc);
    }
    Ok(finish(
        supernode_term,
        s.boundary_degree() as f64,
        &sums,
        traces.iter().map(|t| t.length()),
    ))
}

fn check_k(s: &Supernode, k: usize) -> Result<()> {
    if s.k() != k {
        return Err(Error::config("k", format!("supernode holds {}-sets, asked for k = {k}", s.k())));
    }
    Ok(())
}

/// One-shot estimate of `Σ_{C ∈ CIS_k} phi(C)`.
pub fn estimate_energy<F>(g: &Graph, k: usize, s: &Supernode, q: usize, phi: F, seed: u64) -> Result<EnergyEstimate>
where
    F: Fn(&Motif) -> f64,
{
    check_k(s, k)?;
    Estimator::new(g, s.clone()).estimate(q, seed, phi)
}

/// One-shot estimate of the model's total energy and its gradient.
pub fn estimate_energy_with_grad(
    g: &Graph,
    k: usize,
    s: &Supernode,
    q: usize,
    model: &EnergyModel,
    seed: u64,
) -> Result<(EnergyEstimate, Gradient)> {
    check_k(s, k)?;
    Estimator::new(g, s.clone()).estimate_with_grad(q, seed, model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hon::{enumerate_cises, exact_energy_sum, DEFAULT_ENUMERATION_CAP};
    use crate::motif::KSet;
    use crate::tour::{build_supernode, build_supernode_from};

    fn triangle() -> Graph {
        Graph::from_edges(3, [(0, 1), (1, 2), (0, 2)]).unwrap()
    }

    #[test]
    fn zero_energy_is_exactly_zero() {
        let g = Graph::from_edges(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 3)]).unwrap();
        let s = build_supernode(&g, 3, 2, 0).unwrap();
        let e = estimate_energy(&g, 3, &s, 20, |_| 0.0, 1).unwrap();
        assert_eq!(e.value, 0.0);
        assert_eq!(e.per_tour_values.len(), 20);
    }

    #[test]
    fn triangle_edge_count_is_unbiased() {
        let g = triangle();
        let s = build_supernode(&g, 2, 1, 0).unwrap();
        assert_eq!(s.boundary_degree(), 2);
        let mut est = Estimator::new(&g, s);
        let vals: Vec<f64> = (0..10_000)
            .map(|seed| est.estimate(1, seed, |_| 1.0).unwrap().value)
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((mean - 3.0).abs() < 3.0 * sd / n.sqrt(), "mean {mean}");
    }

    #[test]
    fn covering_supernode_is_exact() {
        let g = Graph::from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (0, 2)]).unwrap();
        let s = build_supernode(&g, 3, 1000, 0).unwrap();
        assert!(s.covers_space());
        let phi = |m: &Motif| m.nodes().iter().map(|&v| v as f64).product::<f64>().sin();
        let e = estimate_energy(&g, 3, &s, 7, phi, 0).unwrap();
        let exact = exact_energy_sum(&g, 3, DEFAULT_ENUMERATION_CAP, phi).unwrap();
        assert_eq!(e.value.to_bits(), exact.to_bits());
        assert_eq!(e.tour_term, 0.0);
    }

    #[test]
    fn same_seed_same_estimate() {
        let g = Graph::from_edges(7, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 0), (1, 4)]).unwrap();
        let s = build_supernode(&g, 3, 2, 3).unwrap();
        let phi = |m: &Motif| m.edge_count() as f64;
        let a = estimate_energy(&g, 3, &s, 30, phi, 9).unwrap();
        let mut est = Estimator::new(&g, s.clone());
        est.estimate(30, 1, phi).unwrap();
        let b = est.estimate(30, 9, phi).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn traces_reproduce_estimate() {
        let g = Graph::from_edges(7, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 0), (1, 4)]).unwrap();
        let s = build_supernode(&g, 3, 2, 3).unwrap();
        let phi = |m: &Motif| 1.0 + m.nodes()[0] as f64;
        let mut est = Estimator::new(&g, s.clone());
        let direct = est.estimate(25, 4, phi).unwrap();
        let traces = est.tours(25, 4).unwrap();
        let replay = estimate_from_traces(&s, &g, &traces, |m| Ok(phi(m))).unwrap();
        assert_eq!(direct, replay);
    }

    #[test]
    fn single_tour_has_no_std_error() {
        let g = triangle();
        let s = build_supernode(&g, 2, 1, 0).unwrap();
        let e = estimate_energy(&g, 2, &s, 1, |_| 1.0, 0).unwrap();
        assert_eq!(e.std_error, None);
        assert!(estimate_energy(&g, 2, &s, 0, |_| 1.0, 0).is_err());
    }

    #[test]
    fn persistent_truncation_reports_cap() {
        let g = Graph::from_edges(40, (0..40).map(|i| (i, (i + 1) % 40))).unwrap();
        let s = build_supernode_from(&g, 3, 1, KSet::new([0, 1, 2]).unwrap()).unwrap();
        let mut est = Estimator::new(&g, s).with_max_steps(2);
        match est.estimate(50, 0, |_| 1.0) {
            Err(Error::PersistentTruncation { attempts, cap }) => assert_eq!((attempts, cap), (3, 2)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_finite_phi_names_set() {
        let g = triangle();
        let s = build_supernode(&g, 2, 1, 0).unwrap();
        let err = estimate_energy(&g, 2, &s, 3, |_| f64::NAN, 0).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn mean_tour_length_on_triangle() {
        // K3's 2-HON is K3; one member: π(I) = 2/6, so E[t] = 3.
        let g = triangle();
        let s = build_supernode(&g, 2, 1, 0).unwrap();
        let e = estimate_energy(&g, 2, &s, 20_000, |_| 1.0, 5).unwrap();
        assert!((e.mean_tour_length - 3.0).abs() < 0.05, "{}", e.mean_tour_length);
        assert_eq!(enumerate_cises(&g, 2, 10).unwrap().len(), 3);
    }
}
