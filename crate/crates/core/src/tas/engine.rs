//! The alternating edit/reconstruct loop.
//!
//! Every outer step n renders the current cloud, forms one pseudo ground
//! truth per camera from the two-branch noise predictions at timestep t_n,
//! then runs K gradient steps of the reconstruction loss against those
//! targets with all cameras batched into one update.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{MetricsLog, MetricsRow};
use super::session::EditSession;
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::latent::Latent;
use crate::splat::{
    anchor_loss_grad, apply_grad_step, latent_of_image, render, render_backward,
    smooth_l1_loss_grad, smooth_perceptual_loss_grad, CloudGradients, GaussianCloud,
};
use crate::vcac::local_blend;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LossTerms {
    pub l1: f64,
    pub perceptual: f64,
    pub anchor: f64,
    pub total: f64,
}

/// Weights of the reconstruction objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_lpips: f64,
    pub lambda_anchor: f64,
    /// Huber width applied to every absolute difference; 0 is exact L1.
    pub l1_delta: f64,
}

impl LossWeights {
    pub fn exact(lambda_lpips: f64, lambda_anchor: f64) -> Self {
        LossWeights {
            lambda_lpips,
            lambda_anchor,
            l1_delta: 0.0,
        }
    }
}

/// Reconstruction loss of one view, its gradient with respect to the view
/// latent, and the gradient of the weighted anchor term.
pub fn compute_loss(
    view: &Latent,
    pseudo_gt: &Latent,
    cloud: &GaussianCloud,
    cloud0: &GaussianCloud,
    w: &LossWeights,
) -> Result<(LossTerms, Latent, CloudGradients)> {
    let (lambda_lpips, lambda_anchor) = (w.lambda_lpips, w.lambda_anchor);
    if !(lambda_lpips >= 0.0) || !(lambda_anchor >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "loss weights must be non-negative (lpips {lambda_lpips}, anchor {lambda_anchor})"
        )));
    }
    let (l1, g1) = smooth_l1_loss_grad(view, pseudo_gt, w.l1_delta)?;
    let (perceptual, gp) = smooth_perceptual_loss_grad(view, pseudo_gt, w.l1_delta)?;
    let (anchor, ga) = anchor_loss_grad(cloud, cloud0)?;
    let grad_view = g1.lincomb(1.0, &gp, lambda_lpips)?;
    let mut grad_anchor = CloudGradients::zeros(ga.len());
    grad_anchor.add_scaled(&ga, lambda_anchor)?;
    Ok((
        LossTerms {
            l1,
            perceptual,
            anchor,
            total: l1 + lambda_lpips * perceptual + lambda_anchor * anchor,
        },
        grad_view,
        grad_anchor,
    ))
}

/// `z_π + γ_t(ε_src − ε_tgt)`: the algebraic form of the two-branch
/// pseudo ground truth. Identical branch inputs cancel exactly.
pub fn pseudo_gt_from_eps(
    s: &NoiseSchedule,
    z_pi: &Latent,
    eps_src: &Latent,
    eps_tgt: &Latent,
    t: usize,
) -> Result<Latent> {
    let diff = eps_src.sub(eps_tgt)?;
    z_pi.lincomb(1.0, &diff, s.gamma(t))
}

/// The same quantity computed line by line: ε_cons = ε_src − ε, then
/// ẑ0 = (z_tgt − std·(ε_tgt − ε_cons)) / scale.
pub fn pseudo_gt_literal(
    s: &NoiseSchedule,
    z_tgt: &Latent,
    eps: &Latent,
    eps_src: &Latent,
    eps_tgt: &Latent,
    t: usize,
) -> Result<Latent> {
    let eps_cons = eps_src.sub(eps)?;
    let inner = eps_tgt.sub(&eps_cons)?;
    Ok(z_tgt.lincomb(1.0, &inner, -s.std(t))?.scale(1.0 / s.scale(t)))
}

/// Intermediate quantities of one pseudo-GT formation.
#[derive(Debug, Clone)]
pub struct PseudoGtStep {
    pub z_pi: Vec<Latent>,
    pub noise: Vec<Latent>,
    pub z_tgt: Vec<Latent>,
    pub z_src: Vec<Latent>,
    pub eps_src: Vec<Latent>,
    pub eps_tgt: Vec<Latent>,
    pub pseudo_gts: Vec<Latent>,
}

/// One noise draw per camera, in camera order.
pub fn draw_noise<R: Rng + ?Sized>(shape: [usize; 3], cameras: usize, rng: &mut R) -> Vec<Latent> {
    (0..cameras).map(|_| Latent::randn(shape, rng)).collect()
}

pub fn form_pseudo_gts(
    session: &EditSession,
    z_pi: Vec<Latent>,
    noise: Vec<Latent>,
    t: usize,
    n: usize,
) -> Result<PseudoGtStep> {
    let s = session.schedule();
    let (a, sd) = (s.scale(t), s.std(t));
    let z_src0 = session.source_latents();
    let z_tgt: Vec<Latent> = z_pi
        .iter()
        .zip(&noise)
        .map(|(z, e)| z.lincomb(a, e, sd))
        .collect::<Result<_>>()?;
    let z_src: Vec<Latent> = z_src0
        .iter()
        .zip(&noise)
        .map(|(z, e)| z.lincomb(a, e, sd))
        .collect::<Result<_>>()?;
    let (eps_src, eps_tgt) = session.branch_eps(&z_src, &z_tgt, t, n)?;
    let mut pseudo_gts = Vec::with_capacity(z_pi.len());
    for m in 0..z_pi.len() {
        let mut pgt = pseudo_gt_from_eps(s, &z_pi[m], &eps_src[m], &eps_tgt[m], t)?;
        if let Some(mask) = &session.masks[m] {
            pgt = local_blend(&pgt, &z_src0[m], mask)?;
        }
        if !pgt.is_finite() {
            return Err(Error::Domain(format!(
                "non-finite pseudo ground truth at step {n}, camera `{}`",
                session.cameras[m].id
            )));
        }
        pseudo_gts.push(pgt);
    }
    Ok(PseudoGtStep {
        z_pi,
        noise,
        z_tgt,
        z_src,
        eps_src,
        eps_tgt,
        pseudo_gts,
    })
}

/// Batched loss over all cameras and its gradient.
fn batch_loss(
    session: &EditSession,
    cloud: &GaussianCloud,
    cloud0: &GaussianCloud,
    targets: &[Latent],
    with_grad: bool,
) -> Result<(Vec<LossTerms>, f64, Option<CloudGradients>)> {
    let cfg = &session.config;
    let per_view: Vec<(LossTerms, Option<CloudGradients>)> = session
        .cameras
        .par_iter()
        .zip(targets.par_iter())
        .map(|(cam, target)| {
            let img = render(cloud, cam, session.background);
            let z = latent_of_image(&img, cfg.pool)?;
            let w = LossWeights {
                lambda_anchor: 0.0,
                ..cfg.loss_weights()
            };
            let (terms, gz, _) = compute_loss(&z, target, cloud, cloud0, &w)?;
            let grads = if with_grad {
                let gimg = gz.avg_pool_backward(cfg.pool);
                Some(render_backward(cloud, cam, session.background, &gimg)?)
            } else {
                None
            };
            Ok((terms, grads))
        })
        .collect::<Result<_>>()?;
    let (anchor, ga) = anchor_loss_grad(cloud, cloud0)?;
    let mut total = cfg.lambda_anchor * anchor;
    let mut grad = with_grad.then(|| CloudGradients::zeros(cloud.len()));
    let mut terms = Vec::with_capacity(per_view.len());
    for (mut t, g) in per_view {
        total += t.l1 + cfg.lambda_lpips * t.perceptual;
        t.anchor = anchor;
        t.total = t.l1 + cfg.lambda_lpips * t.perceptual + cfg.lambda_anchor * anchor;
        terms.push(t);
        if let (Some(acc), Some(g)) = (grad.as_mut(), g) {
            acc.add_scaled(&g, 1.0)?;
        }
    }
    if let Some(acc) = grad.as_mut() {
        acc.add_scaled(&ga, cfg.lambda_anchor)?;
    }
    Ok((terms, total, grad))
}

/// Summary of K reconstruction steps against fixed targets.
#[derive(Debug, Clone)]
pub struct InnerResult {
    pub cloud: GaussianCloud,
    pub terms: Vec<LossTerms>,
    pub first: f64,
    pub last: f64,
    pub violations: usize,
}

/// K gradient steps of the batched loss; the anchor term is measured
/// against the cloud at entry.
pub fn reconstruct(
    session: &EditSession,
    cloud: &GaussianCloud,
    targets: &[Latent],
) -> Result<InnerResult> {
    let cfg = &session.config;
    let cloud0 = cloud.clone();
    let mut cur = cloud.clone();
    let mut first = f64::NAN;
    let mut prev = f64::INFINITY;
    let mut violations = 0;
    for k in 0..cfg.inner_steps {
        let (_, total, grad) = batch_loss(session, &cur, &cloud0, targets, true)?;
        if k == 0 {
            first = total;
        } else if total > prev {
            violations += 1;
        }
        prev = total;
        cur = apply_grad_step(&cur, &grad.expect("gradient requested"), cfg.eta, &cfg.rates)?;
    }
    let (terms, last, _) = batch_loss(session, &cur, &cloud0, targets, false)?;
    if last > prev {
        violations += 1;
    }
    Ok(InnerResult {
        cloud: cur,
        terms,
        first,
        last,
        violations,
    })
}

#[derive(Debug, Clone)]
pub struct OuterStep {
    pub n: usize,
    pub t: usize,
    pub cloud: GaussianCloud,
    pub pseudo: PseudoGtStep,
    pub rows: Vec<MetricsRow>,
    /// Noise tensors drawn during this step.
    pub noise_draws: usize,
}

fn rows_for(
    session: &EditSession,
    n: usize,
    t: usize,
    pgts: &[Latent],
    inner: &InnerResult,
) -> Result<Vec<MetricsRow>> {
    let src = session.source_latents();
    let reference = session.reference_latents();
    session
        .cameras
        .iter()
        .enumerate()
        .map(|(m, cam)| {
            let terms = inner.terms[m];
            Ok(MetricsRow {
                n,
                t,
                camera: cam.id.clone(),
                l1: terms.l1,
                perceptual: terms.perceptual,
                anchor: terms.anchor,
                total: terms.total,
                pgt_to_source: pgts[m].mean_abs_diff(&src[m])?,
                pgt_to_target: reference.map(|r| pgts[m].mean_abs_diff(&r[m])).transpose()?,
                inner_first: inner.first,
                inner_last: inner.last,
                inner_violations: inner.violations,
            })
        })
        .collect()
}

/// Outer step `n` (1-based) starting from `cloud`.
pub fn tas_outer_step<R: Rng + ?Sized>(
    session: &EditSession,
    cloud: &GaussianCloud,
    n: usize,
    rng: &mut R,
) -> Result<OuterStep> {
    let schedule = session.config.annealing()?;
    if n == 0 || n > schedule.len() {
        return Err(Error::InvalidArgument(format!(
            "outer step {n} outside 1..={}",
            schedule.len()
        )));
    }
    let t = schedule.timesteps()[n - 1];
    let z_pi = session.render_latents(cloud)?;
    let noise = draw_noise(session.latent_shape(), session.cameras.len(), rng);
    let noise_draws = noise.len();
    let pseudo = form_pseudo_gts(session, z_pi, noise, t, n)?;
    let inner = reconstruct(session, cloud, &pseudo.pseudo_gts)?;
    let rows = rows_for(session, n, t, &pseudo.pseudo_gts, &inner)?;
    Ok(OuterStep {
        n,
        t,
        cloud: inner.cloud,
        pseudo,
        rows,
        noise_draws,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    /// Edit every view in 2D along the whole trajectory first, then
    /// reconstruct from the final edited views only.
    NoTas,
    /// Full loop with attention-control hooks disabled.
    NoVcac,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "no-tas" => Ok(Variant::NoTas),
            "no-vcac" => Ok(Variant::NoVcac),
            other => Err(Error::InvalidArgument(format!("unknown variant `{other}`"))),
        }
    }
}

/// Result of a complete run.
#[derive(Debug, Clone)]
pub struct TasRun {
    pub cloud: GaussianCloud,
    pub timesteps: Vec<usize>,
    /// Pseudo ground truths per outer step, per camera.
    pub pseudo_gts: Vec<Vec<Latent>>,
    pub initial_views: Vec<Latent>,
    pub final_views: Vec<Latent>,
}

impl TasRun {
    /// The 2D edited views the last reconstruction was supervised by.
    pub fn final_edits(&self) -> &[Latent] {
        self.pseudo_gts.last().map(|v| v.as_slice()).unwrap_or(&[])
    }
}

/// Run the full loop; rows are appended to `log` as steps complete, so a
/// failed run leaves the partial log behind.
pub fn run_tas(session: &EditSession, log: &mut MetricsLog) -> Result<TasRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(session.config.seed);
    let schedule = session.config.annealing()?;
    let initial_views = session.render_latents(&session.source)?;
    let mut cloud = session.source.clone();
    let mut pseudo_gts = Vec::with_capacity(schedule.len());
    for n in 1..=schedule.len() {
        let step = tas_outer_step(session, &cloud, n, &mut rng)?;
        log.rows.extend(step.rows);
        pseudo_gts.push(step.pseudo.pseudo_gts);
        cloud = step.cloud;
    }
    let final_views = session.render_latents(&cloud)?;
    Ok(TasRun {
        cloud,
        timesteps: schedule.timesteps().to_vec(),
        pseudo_gts,
        initial_views,
        final_views,
    })
}

/// The no-feedback ablation: the same noise draws drive a purely 2D editing
/// trajectory per view (each step's pseudo ground truth becomes the next
/// step's view latent); the cloud is then fitted to the final edited views
/// with the same N×K update budget.
pub fn run_no_tas(session: &EditSession, log: &mut MetricsLog) -> Result<TasRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(session.config.seed);
    let schedule = session.config.annealing()?;
    let initial_views = session.render_latents(&session.source)?;
    let mut views = initial_views.clone();
    let mut pseudo_gts = Vec::with_capacity(schedule.len());
    for (i, &t) in schedule.timesteps().iter().enumerate() {
        let noise = draw_noise(session.latent_shape(), session.cameras.len(), &mut rng);
        let step = form_pseudo_gts(session, views, noise, t, i + 1)?;
        views = step.pseudo_gts.clone();
        pseudo_gts.push(step.pseudo_gts);
    }
    let mut cloud = session.source.clone();
    for (i, &t) in schedule.timesteps().iter().enumerate() {
        let inner = reconstruct(session, &cloud, &views)?;
        log.rows.extend(rows_for(session, i + 1, t, &views, &inner)?);
        cloud = inner.cloud;
    }
    let final_views = session.render_latents(&cloud)?;
    Ok(TasRun {
        cloud,
        timesteps: schedule.timesteps().to_vec(),
        pseudo_gts,
        initial_views,
        final_views,
    })
}

pub fn run_variant(session: &EditSession, variant: Variant, log: &mut MetricsLog) -> Result<TasRun> {
    match variant {
        Variant::Full => run_tas(session, log),
        Variant::NoTas => run_no_tas(session, log),
        Variant::NoVcac => {
            let mut s = session.clone();
            s.config.vcac = false;
            run_tas(&s, log)
        }
    }
}

/// L1 distance between consecutive pseudo ground truths, per camera:
/// entry `[m][i]` compares steps `i` and `i + 1`.
pub fn trajectory_steps(pseudo_gts: &[Vec<Latent>]) -> Result<Vec<Vec<f64>>> {
    let cams = pseudo_gts.first().map_or(0, |v| v.len());
    (0..cams)
        .map(|m| {
            pseudo_gts
                .windows(2)
                .map(|w| w[1][m].mean_abs_diff(&w[0][m]))
                .collect()
        })
        .collect()
}
