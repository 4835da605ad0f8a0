//! Noise-contrastive estimation loss over estimated graph energies.

use serde::{Deserialize, Serialize};

const CLAMP: f64 = 1e-12;

/// How `log(M · P_n)` enters the response.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LogMpnMode {
    /// Constant zero, absorbed into the energy scale.
    #[default]
    Zero,
    /// One learned scalar offset.
    LearnedOffset,
}

impl std::str::FromStr for LogMpnMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "zero" => Ok(LogMpnMode::Zero),
            "learned-offset" => Ok(LogMpnMode::LearnedOffset),
            _ => Err(crate::Error::config("log_mpn_mode", format!("unknown mode `{s}`"))),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ŷ = σ(−(Φ̂ + log(M·P_n)))`: the probability the model assigns to "data".
pub fn nce_response(phi_hat: f64, log_mpn: f64) -> f64 {
    sigmoid(-(phi_hat + log_mpn))
}

/// `−Σ log ŷ_pos − Σ log(1 − ŷ_neg)`, with both logs clamped at `1e-12`.
pub fn nce_loss(responses_pos: &[f64], responses_neg: &[f64]) -> f64 {
    let pos: f64 = responses_pos.iter().map(|&y| -y.max(CLAMP).ln()).sum();
    let neg: f64 = responses_neg.iter().map(|&y| -(1.0 - y).max(CLAMP).ln()).sum();
    pos + neg
}

/// `∂L/∂Φ̂` for one example with response `y`: `1 − ŷ` for data, `−ŷ` for noise.
pub fn nce_energy_grad(y: f64, positive: bool) -> f64 {
    if positive {
        1.0 - y
    } else {
        -y
    }
}
