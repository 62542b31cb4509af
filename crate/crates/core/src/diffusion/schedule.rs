use std::f64::consts::FRAC_PI_2;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    /// ᾱ interpolated linearly from 1 at t = 0 to `floor` at t = T.
    LinearAlphaBar,
    /// Squared-cosine curve, affinely rescaled so that ᾱ_T = `floor`.
    Cosine,
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" | "linear-alphabar" => Ok(ScheduleKind::LinearAlphaBar),
            "cosine" => Ok(ScheduleKind::Cosine),
            other => Err(Error::Schedule(format!("unknown schedule kind `{other}`"))),
        }
    }
}

/// Cumulative signal coefficients ᾱ_t for t = 0..=T.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(kind: ScheduleKind, steps: usize, floor: f64) -> Result<Self> {
        if steps < 1 {
            return Err(Error::Schedule("step count must be at least 1".into()));
        }
        if !(floor > 0.0 && floor < 1.0) {
            return Err(Error::Schedule(format!("floor {floor} outside (0, 1)")));
        }
        let t_max = steps as f64;
        let alpha_bar = match kind {
            ScheduleKind::LinearAlphaBar => (0..=steps)
                .map(|t| 1.0 - (1.0 - floor) * t as f64 / t_max)
                .collect(),
            ScheduleKind::Cosine => {
                let offset = 0.008;
                let g = |t: f64| {
                    let x = ((t / t_max + offset) / (1.0 + offset)) * FRAC_PI_2;
                    x.cos().powi(2)
                };
                let (g0, g_end) = (g(0.0), g(t_max));
                (0..=steps)
                    .map(|t| {
                        let c = (g(t as f64) - g_end) / (g0 - g_end);
                        floor + (1.0 - floor) * c
                    })
                    .collect()
            }
        };
        Self::from_alpha_bar(alpha_bar)
    }

    /// Default schedule: linear in ᾱ, T = 50, floor 0.01.
    pub fn default_linear() -> Self {
        Self::new(ScheduleKind::LinearAlphaBar, 50, 0.01).expect("valid default schedule")
    }

    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.len() < 2 {
            return Err(Error::Schedule("need at least ᾱ_0 and ᾱ_1".into()));
        }
        if alpha_bar[0] != 1.0 {
            return Err(Error::Schedule(format!("ᾱ_0 = {} (must be 1)", alpha_bar[0])));
        }
        for (t, w) in alpha_bar.windows(2).enumerate() {
            if !(w[1] < w[0]) {
                return Err(Error::Schedule(format!(
                    "ᾱ not strictly decreasing at t = {}",
                    t + 1
                )));
            }
        }
        let last = *alpha_bar.last().unwrap();
        if !(last > 0.0) || !last.is_finite() {
            return Err(Error::Schedule(format!("ᾱ_T = {last} must be positive")));
        }
        Ok(NoiseSchedule { alpha_bar })
    }

    /// Number of noising steps T.
    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// √ᾱ_t
    pub fn scale(&self, t: usize) -> f64 {
        self.alpha_bar[t].sqrt()
    }

    /// √(1 − ᾱ_t)
    pub fn std(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar[t]).sqrt()
    }

    /// std(t) / scale(t)
    pub fn gamma(&self, t: usize) -> f64 {
        self.std(t) / self.scale(t)
    }

    pub(crate) fn check_t(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            return Err(Error::Domain(format!(
                "timestep {t} outside 0..={}",
                self.steps()
            )));
        }
        Ok(())
    }
}
