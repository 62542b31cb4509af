use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::latent::Latent;

/// Timestep weighting ω(t) of the distillation gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightSchedule {
    Constant(f64),
    /// ω(t) = 1 − ᾱ_t
    StdSquared,
}

impl Default for WeightSchedule {
    fn default() -> Self {
        WeightSchedule::StdSquared
    }
}

impl WeightSchedule {
    pub fn weight(&self, s: &NoiseSchedule, t: usize) -> f64 {
        match *self {
            WeightSchedule::Constant(c) => c,
            WeightSchedule::StdSquared => 1.0 - s.alpha_bar(t),
        }
    }
}

impl FromStr for WeightSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "std-squared" | "std2" => Ok(WeightSchedule::StdSquared),
            "constant" => Ok(WeightSchedule::Constant(1.0)),
            other => other
                .strip_prefix("constant:")
                .and_then(|v| v.parse::<f64>().ok())
                .filter(|v| *v > 0.0)
                .map(WeightSchedule::Constant)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown weight schedule `{other}`"))),
        }
    }
}

/// ω(t)·(ε_φ − ε): the latent-space factor of the distillation gradient.
pub fn sds_residual_classic(
    eps_pred: &Latent,
    eps: &Latent,
    t: usize,
    w: WeightSchedule,
    s: &NoiseSchedule,
) -> Result<Latent> {
    let omega = w.weight(s, t);
    eps_pred.zip_with(eps, |p, e| omega * (p - e))
}

/// ω(t)·(scale/std)·(z_π − ẑ0): the same factor written as a reconstruction
/// residual against a pseudo-ground-truth.
pub fn sds_residual_recon(
    z_pi: &Latent,
    pseudo_gt: &Latent,
    t: usize,
    w: WeightSchedule,
    s: &NoiseSchedule,
) -> Result<Latent> {
    s.check_t(t)?;
    let b = s.std(t);
    if b == 0.0 {
        return Err(Error::Domain("reconstruction residual undefined at t = 0".into()));
    }
    let k = w.weight(s, t) * s.scale(t) / b;
    z_pi.zip_with(pseudo_gt, |z, g| k * (z - g))
}
