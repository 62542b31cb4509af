use serde::{Deserialize, Serialize};

use crate::config::SectionReader;
use crate::diffusion::{NoiseSchedule, ScheduleKind};
use crate::distillation::{AnnealCurve, AnnealingSchedule};
use crate::error::{Error, Result};
use crate::splat::GroupRates;
use crate::vcac::TinyDenoiserConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreBackend {
    /// Closed-form Gaussian-mixture scores; attention control is bypassed.
    Analytic,
    /// The seeded tiny denoiser with attention-control hooks.
    Tiny,
}

impl std::str::FromStr for ScoreBackend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic" => Ok(ScoreBackend::Analytic),
            "tiny" | "tiny-denoiser" => Ok(ScoreBackend::Tiny),
            other => Err(Error::InvalidArgument(format!("unknown score backend `{other}`"))),
        }
    }
}

/// Hyperparameters of the editing loop. None of the loss weights, rates or
/// step counts come with published values; the defaults are assumptions
/// tuned for the desk-scale scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TasConfig {
    pub schedule_kind: ScheduleKind,
    pub schedule_steps: usize,
    pub schedule_floor: f64,
    /// Outer steps N.
    pub outer_steps: usize,
    pub t_hi: usize,
    pub t_lo: usize,
    pub curve: AnnealCurve,
    /// Inner reconstruction steps K per outer step.
    pub inner_steps: usize,
    pub eta: f64,
    pub rates: GroupRates,
    pub lambda_lpips: f64,
    pub lambda_anchor: f64,
    /// Huber width of the absolute-difference terms (0 = exact L1).
    pub l1_delta: f64,
    /// Query injection is active for outer steps `n ≤ t_q`.
    pub t_q: usize,
    pub ctx_len: usize,
    pub angle_threshold_deg: f64,
    pub seed: u64,
    pub backend: ScoreBackend,
    /// Latent = rendered image average-pooled by this factor.
    pub pool: usize,
    pub vcac: bool,
    pub denoiser: TinyDenoiserConfig,
}

impl Default for TasConfig {
    fn default() -> Self {
        let outer_steps = 24;
        TasConfig {
            schedule_kind: ScheduleKind::LinearAlphaBar,
            schedule_steps: 50,
            schedule_floor: 0.01,
            outer_steps,
            t_hi: 48,
            t_lo: 2,
            curve: AnnealCurve::Linear,
            inner_steps: 15,
            eta: 0.05,
            rates: GroupRates::default(),
            lambda_lpips: 0.1,
            lambda_anchor: 0.5,
            l1_delta: 0.01,
            t_q: default_t_q(outer_steps),
            ctx_len: 4,
            angle_threshold_deg: 25.0,
            seed: 0,
            backend: ScoreBackend::Analytic,
            pool: 1,
            vcac: true,
            denoiser: TinyDenoiserConfig::default(),
        }
    }
}

/// Injection covers the first 60% of the editing steps.
pub fn default_t_q(outer_steps: usize) -> usize {
    (0.6 * outer_steps as f64).round() as usize
}

impl TasConfig {
    pub fn noise_schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(self.schedule_kind, self.schedule_steps, self.schedule_floor)
    }

    pub fn annealing(&self) -> Result<AnnealingSchedule> {
        if self.outer_steps == 1 {
            return AnnealingSchedule::from_timesteps(vec![self.t_hi], self.schedule_steps);
        }
        AnnealingSchedule::new(
            self.outer_steps,
            self.t_hi,
            self.t_lo,
            self.curve,
            self.schedule_steps,
        )
    }

    pub fn loss_weights(&self) -> crate::tas::LossWeights {
        crate::tas::LossWeights {
            lambda_lpips: self.lambda_lpips,
            lambda_anchor: self.lambda_anchor,
            l1_delta: self.l1_delta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.outer_steps == 0 {
            return Err(Error::InvalidArgument("outer step count N must be at least 1".into()));
        }
        if self.inner_steps == 0 {
            return Err(Error::InvalidArgument("inner step count K must be at least 1".into()));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidArgument(format!("eta must be non-negative, got {}", self.eta)));
        }
        if !(self.lambda_lpips >= 0.0) || !(self.lambda_anchor >= 0.0) || !(self.l1_delta >= 0.0) {
            return Err(Error::InvalidArgument("loss weights must be non-negative".into()));
        }
        if self.pool == 0 {
            return Err(Error::InvalidArgument("pool factor must be positive".into()));
        }
        self.annealing()?;
        Ok(())
    }

    /// Override fields from `key = value` entries; unknown keys are left to
    /// the caller.
    pub fn apply(&mut self, r: &SectionReader) -> Result<()> {
        let mut n_set = false;
        let mut tq_set = false;
        for e in &r.section.entries {
            match e.key.as_str() {
                "schedule" => self.schedule_kind = r.parse("schedule")?,
                "schedule_steps" => self.schedule_steps = r.parse("schedule_steps")?,
                "schedule_floor" => self.schedule_floor = r.parse("schedule_floor")?,
                "outer_steps" | "steps" => {
                    self.outer_steps = r.parse(&e.key)?;
                    n_set = true;
                }
                "t_hi" => self.t_hi = r.parse("t_hi")?,
                "t_lo" => self.t_lo = r.parse("t_lo")?,
                "curve" => self.curve = r.parse("curve")?,
                "inner_steps" => self.inner_steps = r.parse("inner_steps")?,
                "eta" => self.eta = r.parse("eta")?,
                "rate_position" => self.rates.position = r.parse("rate_position")?,
                "rate_scale" => self.rates.log_scale = r.parse("rate_scale")?,
                "rate_color" => self.rates.color = r.parse("rate_color")?,
                "rate_opacity" => self.rates.opacity = r.parse("rate_opacity")?,
                "lambda_lpips" => self.lambda_lpips = r.parse("lambda_lpips")?,
                "lambda_anchor" => self.lambda_anchor = r.parse("lambda_anchor")?,
                "l1_delta" => self.l1_delta = r.parse("l1_delta")?,
                "t_q" => {
                    self.t_q = r.parse("t_q")?;
                    tq_set = true;
                }
                "ctx_len" => self.ctx_len = r.parse("ctx_len")?,
                "angle_threshold" => self.angle_threshold_deg = r.parse("angle_threshold")?,
                "seed" => self.seed = r.parse("seed")?,
                "backend" => self.backend = r.parse("backend")?,
                "pool" => self.pool = r.parse("pool")?,
                "vcac" => self.vcac = r.parse("vcac")?,
                "denoiser_seed" => self.denoiser.seed = r.parse("denoiser_seed")?,
                "denoiser_dim" => self.denoiser.dim = r.parse("denoiser_dim")?,
                "denoiser_patch" => self.denoiser.patch = r.parse("denoiser_patch")?,
                _ => {}
            }
        }
        if n_set && !tq_set {
            self.t_q = default_t_q(self.outer_steps);
        }
        self.denoiser.max_t = self.schedule_steps;
        self.validate().map_err(|e| match e {
            Error::InvalidArgument(msg) | Error::Schedule(msg) => Error::Parse {
                path: r.path.to_string(),
                line: r.section.line,
                msg,
            },
            other => other,
        })
    }

    pub const KEYS: &'static [&'static str] = &[
        "schedule",
        "schedule_steps",
        "schedule_floor",
        "outer_steps",
        "steps",
        "t_hi",
        "t_lo",
        "curve",
        "inner_steps",
        "eta",
        "rate_position",
        "rate_scale",
        "rate_color",
        "rate_opacity",
        "lambda_lpips",
        "lambda_anchor",
        "l1_delta",
        "t_q",
        "ctx_len",
        "angle_threshold",
        "seed",
        "backend",
        "pool",
        "vcac",
        "denoiser_seed",
        "denoiser_dim",
        "denoiser_patch",
    ];
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ConfigDoc;

    #[test]
    fn defaults_validate() {
        let c = TasConfig::default();
        c.validate().unwrap();
        assert_eq!(c.annealing().unwrap().len(), 24);
        assert_eq!(c.t_q, 14);
    }

    #[test]
    fn rejects_zero_inner_steps() {
        let c = TasConfig {
            inner_steps: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn single_outer_step() {
        let c = TasConfig {
            outer_steps: 1,
            ..Default::default()
        };
        assert_eq!(c.annealing().unwrap().timesteps(), &[48]);
    }

    #[test]
    fn overrides_from_text() {
        let doc = ConfigDoc::parse("steps = 10\ninner_steps = 3\neta = 0\nbackend = tiny\n", "s").unwrap();
        let mut c = TasConfig::default();
        c.apply(&SectionReader::new(&doc, &doc.root)).unwrap();
        assert_eq!(c.outer_steps, 10);
        assert_eq!(c.t_q, 6);
        assert_eq!(c.eta, 0.0);
        assert_eq!(c.backend, ScoreBackend::Tiny);
        let doc = ConfigDoc::parse("inner_steps = 0\n", "s").unwrap();
        assert!(matches!(
            TasConfig::default().apply(&SectionReader::new(&doc, &doc.root)),
            Err(Error::Parse { .. })
        ));
    }
}
