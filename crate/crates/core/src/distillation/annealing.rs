use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnealCurve {
    Linear,
    /// t(u) = t_hi − (t_hi − t_lo)·√u: leaves the high-noise regime quickly.
    Sqrt,
}

impl FromStr for AnnealCurve {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(AnnealCurve::Linear),
            "sqrt" => Ok(AnnealCurve::Sqrt),
            other => Err(Error::InvalidArgument(format!("unknown annealing curve `{other}`"))),
        }
    }
}

/// Strictly decreasing timesteps t_1 > t_2 > … > t_N.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnealingSchedule {
    timesteps: Vec<usize>,
    curve: AnnealCurve,
}

impl AnnealingSchedule {
    pub fn new(
        count: usize,
        t_hi: usize,
        t_lo: usize,
        curve: AnnealCurve,
        max_t: usize,
    ) -> Result<Self> {
        if !(max_t >= t_hi && t_hi > t_lo && t_lo >= 1) {
            return Err(Error::InvalidArgument(format!(
                "annealing needs T >= t_hi > t_lo >= 1 (T = {max_t}, t_hi = {t_hi}, t_lo = {t_lo})"
            )));
        }
        if count < 2 {
            return Err(Error::InvalidArgument("annealing needs at least 2 timesteps".into()));
        }
        if count > t_hi - t_lo + 1 {
            return Err(Error::InvalidArgument(format!(
                "cannot fit {count} distinct timesteps in [{t_lo}, {t_hi}]"
            )));
        }
        let span = (t_hi - t_lo) as f64;
        let mut timesteps = Vec::with_capacity(count);
        for n in 0..count {
            let u = n as f64 / (count - 1) as f64;
            let frac = match curve {
                AnnealCurve::Linear => u,
                AnnealCurve::Sqrt => u.sqrt(),
            };
            let raw = (t_hi as f64 - span * frac).round() as usize;
            // Keep room for the remaining steps above t_lo and stay below the
            // previous step.
            let floor = t_lo + (count - 1 - n);
            let ceil = timesteps.last().map_or(t_hi, |&p: &usize| p - 1);
            timesteps.push(raw.clamp(floor, ceil));
        }
        Ok(AnnealingSchedule { timesteps, curve })
    }

    /// Validate an explicit list.
    pub fn from_timesteps(timesteps: Vec<usize>, max_t: usize) -> Result<Self> {
        if timesteps.is_empty() {
            return Err(Error::InvalidArgument("empty timestep list".into()));
        }
        if timesteps[0] > max_t || *timesteps.last().unwrap() < 1 {
            return Err(Error::InvalidArgument(format!(
                "timesteps must lie in [1, {max_t}]"
            )));
        }
        if timesteps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidArgument("timesteps must be strictly decreasing".into()));
        }
        Ok(AnnealingSchedule {
            timesteps,
            curve: AnnealCurve::Linear,
        })
    }

    pub fn timesteps(&self) -> &[usize] {
        &self.timesteps
    }

    pub fn len(&self) -> usize {
        self.timesteps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timesteps.is_empty()
    }

    pub fn curve(&self) -> AnnealCurve {
        self.curve
    }
}
