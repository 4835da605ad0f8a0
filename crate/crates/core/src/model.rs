//! The per-motif energy function and its reverse-mode gradient.
//!
//! For a motif `C` with adjacency `A` and features `X`:
//!
//! ```text
//! z_v   = lrelu(W_gnn [x_v ; mean_{u ~ v} x_u] + b_gnn)        (per layer, motif edges only)
//! h     = normalize(R_2 lrelu(R_1 Σ_v z_v + c_1) + c_2)         (READOUT, unit L2 norm)
//! ρ     = P_2 lrelu(P_1 h + e_1) + e_2
//! φ     = w_energy · ρ
//! ```
//!
//! All parameters live in one flat `Vec<f64>`; named views follow a fixed
//! layout so that optimizers and finite-difference checks can treat the
//! model as a plain vector.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motif::{KSet, Motif};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

fn one() -> usize {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    /// Node feature width. Zero means featureless: every node gets the constant input 1.
    pub p: usize,
    pub d_gnn: usize,
    pub d_hidden: usize,
    /// Width of the exported motif representation.
    pub d_rep: usize,
    /// Output width of ρ.
    #[serde(rename = "H")]
    pub h: usize,
    #[serde(default = "one")]
    pub gnn_layers: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            p: 0,
            d_gnn: 32,
            d_hidden: 64,
            d_rep: 128,
            h: 16,
            gnn_layers: 1,
        }
    }
}

impl ModelDims {
    fn input_width(&self) -> usize {
        self.p.max(1)
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d_gnn", self.d_gnn),
            ("d_hidden", self.d_hidden),
            ("d_rep", self.d_rep),
            ("H", self.h),
            ("gnn_layers", self.gnn_layers),
        ] {
            if v == 0 {
                return Err(Error::config(format!("dims.{name}"), "must be >= 1"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Dense {
    w: usize,
    b: usize,
    out: usize,
    inp: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    gnn: Vec<Dense>,
    r1: Dense,
    r2: Dense,
    p1: Dense,
    p2: Dense,
    energy: usize,
    total: usize,
}

impl Layout {
    fn new(d: &ModelDims) -> Self {
        let mut at = 0;
        let mut dense = |out: usize, inp: usize| {
            let l = Dense {
                w: at,
                b: at + out * inp,
                out,
                inp,
            };
            at += out * inp + out;
            l
        };
        let mut gnn = Vec::with_capacity(d.gnn_layers);
        let mut width = d.input_width();
        for _ in 0..d.gnn_layers {
            gnn.push(dense(d.d_gnn, 2 * width));
            width = d.d_gnn;
        }
        let r1 = dense(d.d_hidden, d.d_gnn);
        let r2 = dense(d.d_rep, d.d_hidden);
        let p1 = dense(d.d_hidden, d.d_rep);
        let p2 = dense(d.h, d.d_hidden);
        let energy = at;
        Layout {
            gnn,
            r1,
            r2,
            p1,
            p2,
            energy,
            total: energy + d.h,
        }
    }

    /// `(name, offset, len, fan_in, fan_out)` for every named array.
    fn named(&self) -> Vec<(String, usize, usize, usize, usize)> {
        let mut out = Vec::new();
        let mut push = |name: String, d: &Dense| {
            out.push((format!("{name}.weight"), d.w, d.out * d.inp, d.inp, d.out));
            out.push((format!("{name}.bias"), d.b, d.out, 0, 0));
        };
        for (i, d) in self.gnn.iter().enumerate() {
            push(format!("gnn.{i}"), d);
        }
        push("readout.hidden".into(), &self.r1);
        push("readout.out".into(), &self.r2);
        push("rho.hidden".into(), &self.p1);
        push("rho.out".into(), &self.p2);
        let h = self.total - self.energy;
        out.push(("energy.weight".into(), self.energy, h, h, 1));
        out
    }
}

/// Flat parameter-shaped vector of partial derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient(Vec<f64>);

impl Gradient {
    pub fn zeros(len: usize) -> Self {
        Gradient(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradient, scale: f64) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }

    pub fn merge(&mut self, other: &Gradient) {
        self.add_scaled(other, 1.0);
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Unit-norm motif representation. `degenerate` marks the zero vector
/// returned when the pre-normalized READOUT output is exactly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct MotifRepresentation {
    pub vector: Vec<f64>,
    pub source: KSet,
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyModel {
    dims: ModelDims,
    leaky_slope: f64,
    rho_output_activation: bool,
    k: Option<usize>,
    layout: Layout,
    params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    version: u32,
    dims: ModelDims,
    leaky_slope: f64,
    #[serde(default)]
    rho_output_activation: bool,
    /// Motif size the weights were trained for, if recorded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    weights: BTreeMap<String, Vec<f64>>,
}

// Activations recorded during the forward pass for the backward pass.
#[derive(Default)]
struct Tape {
    k: usize,
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    outs: Vec<Vec<f64>>,
    pooled: Vec<f64>,
    r_pre: Vec<f64>,
    r_hid: Vec<f64>,
    r_out: Vec<f64>,
    norm: f64,
    h: Vec<f64>,
    p_pre: Vec<f64>,
    p_hid: Vec<f64>,
    rho_pre: Vec<f64>,
    rho: Vec<f64>,
    phi: f64,
}

impl Tape {
    fn new(k: usize) -> Self {
        Tape {
            k,
            ..Tape::default()
        }
    }
}

fn check_finite(xs: &[f64], stage: &str) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{stage} output")))
    }
}

impl EnergyModel {
    /// Glorot-uniform weights, zero biases; deterministic per seed.
    pub fn init(dims: ModelDims, leaky_slope: f64, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(dims, leaky_slope)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, off, len, fan_in, fan_out) in model.layout.named() {
            if name.ends_with(".bias") {
                continue;
            }
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for x in &mut model.params[off..off + len] {
                *x = rng.gen_range(-a..a);
            }
        }
        Ok(model)
    }

    pub fn zeros(dims: ModelDims, leaky_slope: f64) -> Result<Self> {
        dims.validate()?;
        if !leaky_slope.is_finite() {
            return Err(Error::config("leaky_slope", "must be finite"));
        }
        let layout = Layout::new(&dims);
        Ok(EnergyModel {
            dims,
            leaky_slope,
            rho_output_activation: false,
            k: None,
            params: vec![0.0; layout.total],
            layout,
        })
    }

    /// Applies LeakyReLU to ρ's output layer as well (off by default: linear output).
    pub fn with_rho_output_activation(mut self, on: bool) -> Self {
        self.rho_output_activation = on;
        self
    }

    /// Records the motif size the model is trained for.
    pub fn with_k(mut self, k: usize) -> Self {
        self.k = Some(k);
        self
    }

    pub fn k(&self) -> Option<usize> {
        self.k
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn leaky_slope(&self) -> f64 {
        self.leaky_slope
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_names(&self) -> Vec<String> {
        self.layout.named().into_iter().map(|n| n.0).collect()
    }

    pub fn param(&self, name: &str) -> Option<&[f64]> {
        let (_, off, len, _, _) = self.layout.named().into_iter().find(|n| n.0 == name)?;
        Some(&self.params[off..off + len])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let (_, off, len, _, _) = self.layout.named().into_iter().find(|n| n.0 == name)?;
        Some(&mut self.params[off..off + len])
    }

    fn lrelu(&self, z: f64) -> f64 {
        if z >= 0.0 {
            z
        } else {
            self.leaky_slope * z
        }
    }

    fn lrelu_grad(&self, z: f64) -> f64 {
        if z >= 0.0 {
            1.0
        } else {
            self.leaky_slope
        }
    }

    fn affine(&self, d: Dense, x: &[f64], y: &mut [f64]) {
        let w = &self.params[d.w..d.b];
        let b = &self.params[d.b..d.b + d.out];
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &w[o * d.inp..(o + 1) * d.inp];
            *yo = b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    // grad[W] += dy ⊗ x, grad[b] += dy, returns Wᵀ dy when `dx` is given.
    fn affine_back(&self, d: Dense, x: &[f64], dy: &[f64], grad: &mut [f64], dx: Option<&mut [f64]>) {
        for o in 0..d.out {
            let g = dy[o];
            if g == 0.0 {
                continue;
            }
            grad[d.b + o] += g;
            let row = &mut grad[d.w + o * d.inp..d.w + (o + 1) * d.inp];
            for (r, xi) in row.iter_mut().zip(x) {
                *r += g * xi;
            }
        }
        if let Some(dx) = dx {
            let w = &self.params[d.w..d.b];
            for (i, dxi) in dx.iter_mut().enumerate() {
                let mut s = 0.0;
                for o in 0..d.out {
                    s += w[o * d.inp + i] * dy[o];
                }
                *dxi += s;
            }
        }
    }

    fn check_motif(&self, m: &Motif) -> Result<()> {
        if m.p() != self.dims.p {
            return Err(Error::Shape(format!(
                "motif has {} feature columns, model expects {}",
                m.p(),
                self.dims.p
            )));
        }
        Ok(())
    }

    fn gnn_tape(&self, m: &Motif, tape: &mut Tape) -> Result<()> {
        let k = m.k();
        let d_gnn = self.dims.d_gnn;
        let mut width = self.dims.input_width();
        let mut x: Vec<f64> = if self.dims.p == 0 {
            vec![1.0; k]
        } else {
            (0..k).flat_map(|v| m.features(v).iter().copied()).collect()
        };
        let nbrs: Vec<Vec<usize>> = (0..k).map(|v| m.neighbors(v).collect()).collect();
        for (l, &layer) in self.layout.gnn.iter().enumerate() {
            let mut inputs = vec![0.0; k * 2 * width];
            for v in 0..k {
                let row = &mut inputs[v * 2 * width..(v + 1) * 2 * width];
                row[..width].copy_from_slice(&x[v * width..(v + 1) * width]);
                if !nbrs[v].is_empty() {
                    let inv = 1.0 / nbrs[v].len() as f64;
                    for &u in &nbrs[v] {
                        for (r, xu) in row[width..].iter_mut().zip(&x[u * width..(u + 1) * width]) {
                            *r += xu;
                        }
                    }
                    for r in &mut row[width..] {
                        *r *= inv;
                    }
                }
            }
            let mut pre = vec![0.0; k * d_gnn];
            for v in 0..k {
                self.affine(
                    layer,
                    &inputs[v * 2 * width..(v + 1) * 2 * width],
                    &mut pre[v * d_gnn..(v + 1) * d_gnn],
                );
            }
            let out: Vec<f64> = pre.iter().map(|&z| self.lrelu(z)).collect();
            check_finite(&out, &format!("gnn layer {l}"))?;
            tape.inputs.push(inputs);
            tape.pre.push(pre);
            x = out.clone();
            tape.outs.push(out);
            width = d_gnn;
        }
        Ok(())
    }

    fn readout_tape(&self, embeds: &[f64], k: usize, tape: &mut Tape) -> Result<()> {
        let d = &self.dims;
        let mut pooled = vec![0.0; d.d_gnn];
        for v in 0..k {
            for (p, e) in pooled.iter_mut().zip(&embeds[v * d.d_gnn..(v + 1) * d.d_gnn]) {
                *p += e;
            }
        }
        let mut r_pre = vec![0.0; d.d_hidden];
        self.affine(self.layout.r1, &pooled, &mut r_pre);
        let r_hid: Vec<f64> = r_pre.iter().map(|&z| self.lrelu(z)).collect();
        let mut r_out = vec![0.0; d.d_rep];
        self.affine(self.layout.r2, &r_hid, &mut r_out);
        let norm = r_out.iter().map(|x| x * x).sum::<f64>().sqrt();
        let h: Vec<f64> = if norm > 0.0 {
            r_out.iter().map(|x| x / norm).collect()
        } else {
            vec![0.0; d.d_rep]
        };
        check_finite(&h, "readout")?;
        tape.pooled = pooled;
        tape.r_pre = r_pre;
        tape.r_hid = r_hid;
        tape.r_out = r_out;
        tape.norm = norm;
        tape.h = h;
        Ok(())
    }

    fn forward(&self, m: &Motif) -> Result<Tape> {
        self.check_motif(m)?;
        let k = m.k();
        let mut tape = Tape::new(k);
        self.gnn_tape(m, &mut tape)?;
        let last = tape.outs.last().unwrap().clone();
        self.readout_tape(&last, k, &mut tape)?;

        let d = &self.dims;
        let mut p_pre = vec![0.0; d.d_hidden];
        self.affine(self.layout.p1, &tape.h, &mut p_pre);
        let p_hid: Vec<f64> = p_pre.iter().map(|&z| self.lrelu(z)).collect();
        let mut rho_pre = vec![0.0; d.h];
        self.affine(self.layout.p2, &p_hid, &mut rho_pre);
        let rho: Vec<f64> = if self.rho_output_activation {
            rho_pre.iter().map(|&z| self.lrelu(z)).collect()
        } else {
            rho_pre.clone()
        };
        check_finite(&rho, "rho")?;
        let w = &self.params[self.layout.energy..self.layout.total];
        let phi: f64 = w.iter().zip(&rho).map(|(a, b)| a * b).sum();
        if !phi.is_finite() {
            return Err(Error::NonFinite("energy output".into()));
        }
        tape.p_pre = p_pre;
        tape.p_hid = p_hid;
        tape.rho_pre = rho_pre;
        tape.rho = rho;
        tape.phi = phi;
        Ok(tape)
    }

    /// Node embeddings (`k × d_gnn`, row-major) after the last GNN layer.
    pub fn gnn_forward(&self, m: &Motif) -> Result<Vec<f64>> {
        self.check_motif(m)?;
        let mut tape = Tape::new(m.k());
        self.gnn_tape(m, &mut tape)?;
        Ok(tape.outs.pop().unwrap())
    }

    /// Sum-pool `node_embeds` (`k × d_gnn`) and apply the READOUT MLP and L2 normalization.
    /// Returns the representation and whether it is the degenerate zero vector.
    pub fn readout(&self, node_embeds: &[f64]) -> Result<(Vec<f64>, bool)> {
        let d_gnn = self.dims.d_gnn;
        if node_embeds.is_empty() || !node_embeds.len().is_multiple_of(d_gnn) {
            return Err(Error::Shape(format!(
                "node embeddings of length {} are not a nonempty multiple of {d_gnn}",
                node_embeds.len()
            )));
        }
        let k = node_embeds.len() / d_gnn;
        let mut tape = Tape::new(k);
        self.readout_tape(node_embeds, k, &mut tape)?;
        Ok((tape.h, tape.norm == 0.0))
    }

    pub fn representation(&self, m: &Motif) -> Result<MotifRepresentation> {
        let embeds = self.gnn_forward(m)?;
        let (vector, degenerate) = self.readout(&embeds)?;
        Ok(MotifRepresentation {
            vector,
            source: KSet::new(m.nodes().iter().copied())?,
            degenerate,
        })
    }

    /// Motif energy φ.
    pub fn energy(&self, m: &Motif) -> Result<f64> {
        Ok(self.forward(m)?.phi)
    }

    /// Gradient of `upstream · φ(m)` with respect to every parameter.
    pub fn energy_backward(&self, m: &Motif, upstream: f64) -> Result<Gradient> {
        let mut g = Gradient::zeros(self.params.len());
        self.accumulate_grad(m, upstream, &mut g)?;
        Ok(g)
    }

    /// Adds `upstream · ∇φ(m)` into `grad` and returns φ(m).
    pub fn accumulate_grad(&self, m: &Motif, upstream: f64, grad: &mut Gradient) -> Result<f64> {
        if grad.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "gradient has {} entries, model has {}",
                grad.len(),
                self.params.len()
            )));
        }
        let t = self.forward(m)?;
        let gr = &mut grad.0;
        let d = self.dims;
        let lay = &self.layout;

        // energy = w · ρ
        let w_energy = &self.params[lay.energy..lay.total];
        for (gw, r) in gr[lay.energy..lay.total].iter_mut().zip(&t.rho) {
            *gw += upstream * r;
        }
        let mut d_rho: Vec<f64> = w_energy.iter().map(|w| upstream * w).collect();
        if self.rho_output_activation {
            for (g, &z) in d_rho.iter_mut().zip(&t.rho_pre) {
                *g *= self.lrelu_grad(z);
            }
        }

        // ρ MLP
        let mut d_phid = vec![0.0; d.d_hidden];
        self.affine_back(lay.p2, &t.p_hid, &d_rho, gr, Some(&mut d_phid));
        for (g, &z) in d_phid.iter_mut().zip(&t.p_pre) {
            *g *= self.lrelu_grad(z);
        }
        let mut d_h = vec![0.0; d.d_rep];
        self.affine_back(lay.p1, &t.h, &d_phid, gr, Some(&mut d_h));

        // L2 normalization: dr = (dh - h (h·dh)) / ‖r‖; zero at the degenerate point.
        let mut d_rout = vec![0.0; d.d_rep];
        if t.norm > 0.0 {
            let proj: f64 = t.h.iter().zip(&d_h).map(|(a, b)| a * b).sum();
            for i in 0..d.d_rep {
                d_rout[i] = (d_h[i] - t.h[i] * proj) / t.norm;
            }
        }

        // READOUT MLP
        let mut d_rhid = vec![0.0; d.d_hidden];
        self.affine_back(lay.r2, &t.r_hid, &d_rout, gr, Some(&mut d_rhid));
        for (g, &z) in d_rhid.iter_mut().zip(&t.r_pre) {
            *g *= self.lrelu_grad(z);
        }
        let mut d_pooled = vec![0.0; d.d_gnn];
        self.affine_back(lay.r1, &t.pooled, &d_rhid, gr, Some(&mut d_pooled));

        // sum pooling, then GNN layers in reverse
        let k = t.k;
        let mut d_out: Vec<f64> = (0..k).flat_map(|_| d_pooled.iter().copied()).collect();
        let nbrs: Vec<Vec<usize>> = (0..k).map(|v| m.neighbors(v).collect()).collect();
        for l in (0..lay.gnn.len()).rev() {
            let layer = lay.gnn[l];
            let width = layer.inp / 2;
            let pre = &t.pre[l];
            let inputs = &t.inputs[l];
            let mut d_x = if l > 0 { vec![0.0; k * width] } else { Vec::new() };
            for v in 0..k {
                let d_pre: Vec<f64> = (0..d.d_gnn)
                    .map(|j| d_out[v * d.d_gnn + j] * self.lrelu_grad(pre[v * d.d_gnn + j]))
                    .collect();
                let inp = &inputs[v * layer.inp..(v + 1) * layer.inp];
                if l == 0 {
                    self.affine_back(layer, inp, &d_pre, gr, None);
                    continue;
                }
                let mut d_in = vec![0.0; layer.inp];
                self.affine_back(layer, inp, &d_pre, gr, Some(&mut d_in));
                for (a, b) in d_x[v * width..(v + 1) * width].iter_mut().zip(&d_in[..width]) {
                    *a += b;
                }
                if !nbrs[v].is_empty() {
                    let inv = 1.0 / nbrs[v].len() as f64;
                    for &u in &nbrs[v] {
                        for (a, b) in d_x[u * width..(u + 1) * width].iter_mut().zip(&d_in[width..]) {
                            *a += b * inv;
                        }
                    }
                }
            }
            d_out = d_x;
        }
        Ok(t.phi)
    }

    pub fn to_json(&self) -> String {
        let weights = self
            .layout
            .named()
            .into_iter()
            .map(|(name, off, len, _, _)| (name, self.params[off..off + len].to_vec()))
            .collect();
        let doc = Document {
            version: CHECKPOINT_VERSION,
            dims: self.dims,
            leaky_slope: self.leaky_slope,
            rho_output_activation: self.rho_output_activation,
            k: self.k,
            weights,
        };
        serde_json::to_string_pretty(&doc).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Document = serde_json::from_str(text)?;
        if doc.version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: doc.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let mut model = Self::zeros(doc.dims, doc.leaky_slope)?;
        model.rho_output_activation = doc.rho_output_activation;
        model.k = doc.k;
        let named = model.layout.named();
        for name in doc.weights.keys() {
            if !named.iter().any(|n| &n.0 == name) {
                return Err(Error::Shape(format!("unexpected weight array `{name}`")));
            }
        }
        for (name, off, len, _, _) in named {
            let values = doc
                .weights
                .get(&name)
                .ok_or_else(|| Error::Shape(format!("missing weight array `{name}`")))?;
            if values.len() != len {
                return Err(Error::Shape(format!(
                    "`{name}` has {} values, dims require {len}",
                    values.len()
                )));
            }
            model.params[off..off + len].copy_from_slice(values);
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
