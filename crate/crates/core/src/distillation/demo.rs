//! Annealed pseudo-GT reconstruction of a single 2D latent.
//!
//! Each step draws fresh noise, forms the selected kind's pseudo-ground-truth
//! from the current latent, and takes a reconstruction step toward it. All
//! score models are analytic point masses (zero data variance):
//!
//! * `target` – mean = target latent μ
//! * `source` – mean = source latent (DDS reference, NFSD negative)
//! * `null`   – mean = current latent, re-registered every step (the
//!   unconditional model of ISM and NFSD explains the current render)
//! * VSD's auxiliary model – mean = current latent + `aux_offset`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    pseudo_gt, AnnealCurve, AnnealingSchedule, IsmContext, IsmStep, NfsdContext, PseudoGtContext,
    PseudoGtKind,
};
use crate::config::SectionReader;
use crate::diffusion::{AnalyticGmmScore, Condition, NoiseSchedule};
use crate::error::{Error, Result};
use crate::latent::Latent;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistillDemoConfig {
    pub kind: PseudoGtKind,
    pub shape: [usize; 3],
    pub steps: usize,
    pub lr: f64,
    pub t_hi: usize,
    pub t_lo: usize,
    pub curve: AnnealCurve,
    /// NFSD guidance scale s.
    pub guidance: f64,
    /// Constant offset of VSD's auxiliary mean from the current latent.
    pub aux_offset: f64,
    /// ISM inversion gap Δs.
    pub ism_gap: usize,
    pub seed: u64,
    pub schedule_steps: usize,
    pub schedule_floor: f64,
    /// Keep every n-th latent for dumping (0 keeps none).
    pub frame_every: usize,
}

impl Default for DistillDemoConfig {
    fn default() -> Self {
        DistillDemoConfig {
            kind: PseudoGtKind::Sds,
            shape: [3, 16, 16],
            steps: 200,
            lr: 0.1,
            t_hi: 48,
            t_lo: 2,
            curve: AnnealCurve::Linear,
            guidance: 7.5,
            aux_offset: 0.0,
            ism_gap: 5,
            seed: 0,
            schedule_steps: 50,
            schedule_floor: 0.01,
            frame_every: 20,
        }
    }
}

impl DistillDemoConfig {
    pub const KEYS: &'static [&'static str] = &[
        "kind",
        "shape",
        "steps",
        "lr",
        "t_hi",
        "t_lo",
        "curve",
        "guidance",
        "aux_offset",
        "ism_gap",
        "seed",
        "schedule_steps",
        "schedule_floor",
        "frame_every",
    ];

    /// Override fields from a config section.
    pub fn apply(&mut self, r: &SectionReader) -> Result<()> {
        r.only(Self::KEYS)?;
        if r.has("kind") {
            self.kind = r.parse("kind")?;
        }
        if r.has("shape") {
            let v = r.usizes("shape")?;
            self.shape = v.as_slice().try_into().map_err(|_| Error::Parse {
                path: r.path.to_string(),
                line: r.entry("shape").map_or(0, |e| e.line),
                msg: format!("`shape` needs 3 integers, got {}", v.len()),
            })?;
        }
        self.steps = r.parse_or("steps", self.steps)?;
        self.lr = r.parse_or("lr", self.lr)?;
        self.t_hi = r.parse_or("t_hi", self.t_hi)?;
        self.t_lo = r.parse_or("t_lo", self.t_lo)?;
        self.curve = r.parse_or("curve", self.curve)?;
        self.guidance = r.parse_or("guidance", self.guidance)?;
        self.aux_offset = r.parse_or("aux_offset", self.aux_offset)?;
        self.ism_gap = r.parse_or("ism_gap", self.ism_gap)?;
        self.seed = r.parse_or("seed", self.seed)?;
        self.schedule_steps = r.parse_or("schedule_steps", self.schedule_steps)?;
        self.schedule_floor = r.parse_or("schedule_floor", self.schedule_floor)?;
        self.frame_every = r.parse_or("frame_every", self.frame_every)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DemoStep {
    pub step: usize,
    pub t: usize,
    /// ½‖x − ẑ0‖² before the update.
    pub recon_loss: f64,
    /// ‖x − fixed point‖₂ after the update.
    pub dist_to_target: f64,
    /// max |ẑ0 − closed-form ẑ0| for this step.
    pub oracle_gap: f64,
}

#[derive(Debug, Clone)]
pub struct DistillDemoResult {
    pub target: Latent,
    pub source: Latent,
    /// The point the iteration is expected to reach for this kind.
    pub fixed_point: Latent,
    pub final_latent: Latent,
    pub history: Vec<DemoStep>,
    pub frames: Vec<(usize, Latent)>,
}

impl DistillDemoResult {
    pub fn final_distance(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |h| h.dist_to_target)
    }

    pub fn max_oracle_gap(&self) -> f64 {
        self.history.iter().map(|h| h.oracle_gap).fold(0.0, f64::max)
    }
}

/// Smooth synthetic target and source images in [0, 1].
pub fn demo_images(shape: [usize; 3]) -> (Latent, Latent) {
    let [c, h, w] = shape;
    let mut target = Latent::zeros(c, h, w);
    let mut source = Latent::zeros(c, h, w);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let u = (x as f64 + 0.5) / w as f64;
                let v = (y as f64 + 0.5) / h as f64;
                let phase = ch as f64 * 2.1;
                target.set(ch, y, x, 0.5 + 0.4 * (6.0 * u + phase).sin() * (4.0 * v).cos());
                source.set(ch, y, x, 0.5 + 0.3 * (3.0 * (u + v) + phase).cos());
            }
        }
    }
    (target, source)
}

/// Where the demo iteration settles for `kind`, from expanding its
/// pseudo-GT with the point-mass models listed in the module docs.
pub fn demo_fixed_point(cfg: &DistillDemoConfig, target: &Latent, source: &Latent) -> Result<Latent> {
    match cfg.kind {
        PseudoGtKind::Sds | PseudoGtKind::Dds | PseudoGtKind::Ism => Ok(target.clone()),
        PseudoGtKind::Vsd => Ok(target.map(|v| v - cfg.aux_offset)),
        PseudoGtKind::Nfsd => {
            let s = cfg.guidance;
            target.lincomb(s / (s - 1.0), source, -1.0 / (s - 1.0))
        }
    }
}

/// Closed-form pseudo-GT of one demo step at latent `x`, independent of the
/// noise draw and timestep:
///
/// * SDS, DDS, ISM: μ
/// * VSD: μ − offset
/// * NFSD: (2 − s)·x − source + s·μ
pub fn demo_symbolic_pseudo_gt(
    cfg: &DistillDemoConfig,
    x: &Latent,
    target: &Latent,
    source: &Latent,
) -> Result<Latent> {
    match cfg.kind {
        PseudoGtKind::Sds | PseudoGtKind::Dds | PseudoGtKind::Ism => Ok(target.clone()),
        PseudoGtKind::Vsd => Ok(target.map(|v| v - cfg.aux_offset)),
        PseudoGtKind::Nfsd => {
            let s = cfg.guidance;
            x.lincomb(2.0 - s, target, s)?.sub(source)
        }
    }
}

fn validate(cfg: &DistillDemoConfig) -> Result<()> {
    if cfg.steps == 0 {
        return Err(Error::InvalidArgument("steps must be positive".into()));
    }
    if !(cfg.lr > 0.0 && cfg.lr <= 1.0) {
        return Err(Error::InvalidArgument(format!("lr {} outside (0, 1]", cfg.lr)));
    }
    if cfg.kind == PseudoGtKind::Nfsd {
        let rate = cfg.lr * (cfg.guidance - 1.0);
        if !(cfg.guidance > 1.0 && rate < 2.0) {
            return Err(Error::InvalidArgument(format!(
                "NFSD demo needs guidance > 1 and lr·(guidance − 1) < 2 (got {rate})"
            )));
        }
    }
    Ok(())
}

pub fn run_distill_demo(cfg: &DistillDemoConfig) -> Result<DistillDemoResult> {
    let (target, source) = demo_images(cfg.shape);
    run_distill_demo_with(cfg, target, source)
}

pub fn run_distill_demo_with(
    cfg: &DistillDemoConfig,
    target: Latent,
    source: Latent,
) -> Result<DistillDemoResult> {
    validate(cfg)?;
    target.ensure_same_shape(&source)?;
    let sched = NoiseSchedule::new(
        crate::diffusion::ScheduleKind::LinearAlphaBar,
        cfg.schedule_steps,
        cfg.schedule_floor,
    )?;
    let distinct = cfg.steps.min(cfg.t_hi.saturating_sub(cfg.t_lo) + 1).max(2);
    let anneal = AnnealingSchedule::new(distinct, cfg.t_hi, cfg.t_lo, cfg.curve, sched.steps())?;
    let fixed_point = demo_fixed_point(cfg, &target, &source)?;

    let y = Condition::new("target");
    let y_src = Condition::new("source");
    let null = Condition::new("null");

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = source.clone();
    let mut history = Vec::with_capacity(cfg.steps);
    let mut frames = Vec::new();
    if cfg.frame_every > 0 {
        frames.push((0, x.clone()));
    }
    for step in 0..cfg.steps {
        let t = anneal.timesteps()[step * anneal.len() / cfg.steps];

        let mut model = AnalyticGmmScore::new(sched.clone(), 0.0)?;
        model.register_single(&y.id, target.clone())?;
        model.register_single(&y_src.id, source.clone())?;
        model.register_single(&null.id, x.clone())?;
        let mut aux = AnalyticGmmScore::new(sched.clone(), 0.0)?;
        aux.register_single(&y.id, x.map(|v| v + cfg.aux_offset))?;

        let ctx = PseudoGtContext::new(&model)
            .with_aux(&aux)
            .with_reference(&source, &y_src)
            .with_ism(IsmContext {
                null: null.clone(),
                step: IsmStep::Gap(cfg.ism_gap),
            })
            .with_nfsd(NfsdContext::new(y_src.clone(), null.clone(), cfg.guidance));

        let eps = Latent::randn(cfg.shape, &mut rng);
        let goal = pseudo_gt(cfg.kind, &ctx, &x, &eps, t, &y, &sched)?;
        let oracle_gap = goal.max_abs_diff(&demo_symbolic_pseudo_gt(cfg, &x, &target, &source)?)?;
        let recon_loss = 0.5 * x.l2_dist(&goal)?.powi(2);
        x = x.lincomb(1.0 - cfg.lr, &goal, cfg.lr)?;
        if !x.is_finite() {
            return Err(Error::Domain(format!("latent diverged at step {step}")));
        }
        history.push(DemoStep {
            step: step + 1,
            t,
            recon_loss,
            dist_to_target: x.l2_dist(&fixed_point)?,
            oracle_gap,
        });
        if cfg.frame_every > 0 && (step + 1) % cfg.frame_every == 0 {
            frames.push((step + 1, x.clone()));
        }
    }
    Ok(DistillDemoResult {
        target,
        source,
        fixed_point,
        final_latent: x,
        history,
        frames,
    })
}
