//! Property suites with machine-readable reports.
//!
//! Each suite runs a fixed set of checks from one seed and records the
//! largest observed error next to its tolerance. The CLI `verify` command
//! and the acceptance tests both call into this module.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::diffusion::{
    add_noise, ddcm_step, ddcm_x0_step, ddim_step, predict_x0, AnalyticGmmScore, Component,
    Condition, NoiseSchedule, ScheduleKind, ScoreModel,
};
use crate::distillation::{assert_sds_equivalence, AnnealCurve, AnnealingSchedule};
use crate::error::{Error, Result};
use crate::gradcheck::{central_diff, compare};
use crate::latent::Latent;
use crate::splat::{
    render, render_backward, smooth_perceptual_loss_grad, Camera, Gaussian, GaussianCloud,
};
use crate::tas::{
    pseudo_gt_from_eps, pseudo_gt_literal, run_tas, tas_outer_step, toy_scenario,
    MetricsLog, ScoreBackend, TasConfig,
};
use crate::vcac::{
    injection_active, kv_reference, local_blend, partition_contexts, query_inject, KvPlan,
    TinyDenoiser, TinyDenoiserConfig, TokenTensor, VcacHooks,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Schedules,
    Samplers,
    Equivalence,
    Gradients,
    Vcac,
    TasIdentities,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::Schedules,
        Suite::Samplers,
        Suite::Equivalence,
        Suite::Gradients,
        Suite::Vcac,
        Suite::TasIdentities,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Schedules => "schedules",
            Suite::Samplers => "samplers",
            Suite::Equivalence => "equivalence",
            Suite::Gradients => "gradients",
            Suite::Vcac => "vcac",
            Suite::TasIdentities => "tas-identities",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown suite `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub max_error: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl Check {
    /// Passes when `max_error ≤ tolerance` (NaN fails).
    pub fn within(name: &str, max_error: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed: max_error <= tolerance,
            max_error,
            tolerance,
            detail: detail.into(),
        }
    }

    /// A yes/no property; the error column counts failures.
    pub fn holds(name: &str, failures: usize, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed: failures == 0,
            max_error: failures as f64,
            tolerance: 0.0,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    fn new(suite: Suite, seed: u64, checks: Vec<Check>) -> Self {
        SuiteReport {
            suite,
            seed,
            passed: checks.iter().all(|c| c.passed),
            checks,
        }
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<SuiteReport> {
    let checks = match suite {
        Suite::Schedules => schedules(seed)?,
        Suite::Samplers => samplers(seed)?,
        Suite::Equivalence => equivalence(seed)?,
        Suite::Gradients => gradients(seed)?,
        Suite::Vcac => vcac(seed)?,
        Suite::TasIdentities => tas_identities(seed)?,
    };
    Ok(SuiteReport::new(suite, seed, checks))
}

fn schedules(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad_monotone = 0;
    let mut endpoint_err = 0.0f64;
    let mut gamma_err = 0.0f64;
    for kind in [ScheduleKind::LinearAlphaBar, ScheduleKind::Cosine] {
        for _ in 0..20 {
            let steps = rng.random_range(2..=200);
            let floor = rng.random_range(1e-4..0.5);
            let s = NoiseSchedule::new(kind, steps, floor)?;
            let ab = s.alpha_bars();
            bad_monotone += ab.windows(2).filter(|w| !(w[1] < w[0])).count();
            endpoint_err = endpoint_err
                .max((ab[0] - 1.0).abs())
                .max((ab[steps] - floor).abs());
            for t in 1..=steps {
                let g = s.std(t) / s.scale(t);
                gamma_err = gamma_err.max((s.gamma(t) - g).abs() / g);
            }
        }
    }
    let rejects = [
        NoiseSchedule::new(ScheduleKind::LinearAlphaBar, 0, 0.01).is_ok(),
        NoiseSchedule::new(ScheduleKind::LinearAlphaBar, 50, 0.0).is_ok(),
        NoiseSchedule::new(ScheduleKind::LinearAlphaBar, 50, 1.5).is_ok(),
        NoiseSchedule::from_alpha_bar(vec![1.0, 0.5, 0.7]).is_ok(),
    ]
    .iter()
    .filter(|&&ok| ok)
    .count();

    let mut bad_anneal = 0;
    let mut anneal_cases = 0;
    for curve in [AnnealCurve::Linear, AnnealCurve::Sqrt] {
        for _ in 0..50 {
            let t_lo = rng.random_range(1..20);
            let t_hi = rng.random_range(t_lo + 1..=50);
            let count = rng.random_range(2..=t_hi - t_lo + 1);
            let a = AnnealingSchedule::new(count, t_hi, t_lo, curve, 50)?;
            let ts = a.timesteps();
            anneal_cases += 1;
            let ok = ts.len() == count
                && ts[0] == t_hi
                && ts[count - 1] == t_lo
                && ts.windows(2).all(|w| w[1] < w[0]);
            bad_anneal += usize::from(!ok);
        }
    }
    Ok(vec![
        Check::holds("alpha_bar_strictly_decreasing", bad_monotone, "40 random schedules"),
        Check::within("alpha_bar_endpoints", endpoint_err, 1e-15, "alpha_bar[0] = 1, alpha_bar[T] = floor"),
        Check::within("gamma_is_std_over_scale", gamma_err, 1e-14, "relative"),
        Check::holds("invalid_schedules_rejected", rejects, "4 invalid parameter sets"),
        Check::holds(
            "annealing_strictly_decreasing_exact_endpoints",
            bad_anneal,
            format!("{anneal_cases} random schedules"),
        ),
    ])
}

fn random_mixture(s: &NoiseSchedule, shape: [usize; 3], rng: &mut ChaCha8Rng) -> Result<AnalyticGmmScore> {
    let mut m = AnalyticGmmScore::new(s.clone(), rng.random_range(0.0..1.0))?;
    let k = rng.random_range(1..=3);
    let comps = (0..k)
        .map(|_| Component {
            mean: Latent::randn(shape, rng),
            weight: 1.0 / k as f64,
        })
        .collect();
    m.register("y", comps)?;
    Ok(m)
}

fn samplers(seed: u64) -> Result<Vec<Check>> {
    let s = NoiseSchedule::default_linear();
    let shape = [3, 8, 8];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut reduction = 0.0f64;
    for _ in 0..1000 {
        let t = rng.random_range(1..=s.steps());
        let z = Latent::randn(shape, &mut rng);
        let e = Latent::randn(shape, &mut rng);
        let n = Latent::randn(shape, &mut rng);
        let sigma = (1.0 - s.alpha_bar(t - 1)).sqrt();
        let a = ddim_step(&s, &z, &e, t, sigma, &n)?;
        let b = ddcm_step(&s, &z, &e, t, &n)?;
        reduction = reduction.max(a.max_abs_diff(&b)?);
    }

    let mut roundtrip = 0.0f64;
    for _ in 0..200 {
        let t = rng.random_range(1..=s.steps());
        let x0 = Latent::randn(shape, &mut rng);
        let e = Latent::randn(shape, &mut rng);
        let z = add_noise(&s, &x0, &e, t)?;
        roundtrip = roundtrip.max(predict_x0(&s, &z, &e, t)?.max_abs_diff(&x0)?);
    }

    let y = Condition::new("y");
    let mut recursion = 0.0f64;
    for traj_seed in 0..100u64 {
        let mut r = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(traj_seed));
        let model = random_mixture(&s, shape, &mut r)?;
        let mut z = Latent::randn(shape, &mut r);
        let mut x0_recursive: Option<Latent> = None;
        let mut last_noise: Option<Latent> = None;
        for t in (1..=s.steps()).rev() {
            let eps = model.eps(&z, t, &y)?;
            let x0_direct = predict_x0(&s, &z, &eps, t)?;
            let x0 = match (&x0_recursive, &last_noise) {
                (Some(prev), Some(noise)) => ddcm_x0_step(&s, prev, noise, &eps, t)?,
                _ => x0_direct.clone(),
            };
            recursion = recursion.max(x0.max_abs_diff(&x0_direct)?);
            let noise = Latent::randn(shape, &mut r);
            z = ddcm_step(&s, &z, &eps, t, &noise)?;
            x0_recursive = Some(x0);
            last_noise = Some(noise);
        }
    }
    Ok(vec![
        Check::within("ddim_to_ddcm_reduction", reduction, 1e-12, "1000 random steps"),
        Check::within("add_noise_predict_x0_roundtrip", roundtrip, 1e-10, "200 draws"),
        Check::within("x0_recursion_matches_direct", recursion, 1e-10, "100 trajectories of 50 steps"),
    ])
}

fn equivalence(seed: u64) -> Result<Vec<Check>> {
    let s = NoiseSchedule::default_linear();
    let r = assert_sds_equivalence(1000, seed, [3, 8, 8], &s)?;
    Ok(vec![Check::within(
        "sds_reconstruction_equivalence",
        r.max_abs_diff,
        r.tolerance,
        format!("{} trials, worst trial {}", r.trials, r.worst_trial),
    )])
}

/// Random scene whose primitives are wide enough that the finite support
/// cutoff leaves the rendered image smooth within the difference step.
pub fn gradcheck_scene(seed: u64, primitives: usize, res: usize) -> Result<(GaussianCloud, Camera, [f64; 3])> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cam = Camera::orbit(
        "c",
        rng.random_range(-40.0..40.0),
        rng.random_range(-20.0..20.0),
        2.0,
        res,
        res,
    )?;
    let cloud = GaussianCloud::new(
        (0..primitives)
            .map(|_| {
                Gaussian::new(
                    [
                        rng.random_range(-0.5..0.5),
                        rng.random_range(-0.5..0.5),
                        rng.random_range(-0.5..0.5),
                    ],
                    rng.random_range(0.6..1.0),
                    [rng.random(), rng.random(), rng.random()],
                    rng.random_range(0.2..0.9),
                )
            })
            .collect(),
    );
    Ok((cloud, cam, [rng.random(), rng.random(), rng.random()]))
}

pub const GRADCHECK_STEP: f64 = 1e-4;
pub const GRADCHECK_FLOOR: f64 = 1e-6;

fn gradients(seed: u64) -> Result<Vec<Check>> {
    let mut worst = 0.0f64;
    let mut worst_scene = 0;
    for i in 0..20u64 {
        let scene_seed = seed.wrapping_mul(101).wrapping_add(i);
        let (cloud, cam, bg) = gradcheck_scene(scene_seed, 5, 32)?;
        let mut rng = ChaCha8Rng::seed_from_u64(scene_seed ^ 0x9e37);
        let g = Latent::randn([3, 32, 32], &mut rng);
        let analytic = render_backward(&cloud, &cam, bg, &g)?.to_flat();
        let f = |p: &[f64]| {
            GaussianCloud::from_params(p)
                .map(|c| render(&c, &cam, bg).dot(&g).unwrap_or(f64::NAN))
                .unwrap_or(f64::NAN)
        };
        let numeric = central_diff(f, &cloud.to_params(), GRADCHECK_STEP);
        let r = compare(&analytic, &numeric, GRADCHECK_FLOOR);
        if r.max_rel_err > worst || i == 0 {
            worst = r.max_rel_err;
            worst_scene = i;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let a = Latent::randn([3, 16, 16], &mut rng);
    let b = Latent::randn([3, 16, 16], &mut rng);
    let (_, grad) = smooth_perceptual_loss_grad(&a, &b, 0.05)?;
    let f = |p: &[f64]| {
        Latent::from_vec(a.shape(), p.to_vec())
            .and_then(|x| smooth_perceptual_loss_grad(&x, &b, 0.05))
            .map_or(f64::NAN, |(l, _)| l)
    };
    let numeric = central_diff(f, a.as_slice(), 1e-6);
    let loss = compare(grad.as_slice(), &numeric, GRADCHECK_FLOOR);

    Ok(vec![
        Check::within(
            "render_backward_vs_central_differences",
            worst,
            1e-4,
            format!("20 scenes x 5 primitives at 32x32, worst scene {worst_scene}"),
        ),
        Check::within(
            "smoothed_pyramid_loss_gradient",
            loss.max_rel_err,
            1e-4,
            "3x16x16, width 0.05",
        ),
    ])
}

fn vcac(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Keyframe order in the reference concatenation.
    let mut perm = 0.0f64;
    for _ in 0..20 {
        let frames = rng.random_range(2..=5);
        let q = TokenTensor::random(frames, 6, 8, &mut rng);
        let k = TokenTensor::random(frames, 6, 8, &mut rng);
        let v = TokenTensor::random(frames, 6, 5, &mut rng);
        let base = kv_reference(&q, &k, &v)?;
        let mut order: Vec<usize> = (0..frames).collect();
        order.rotate_left(rng.random_range(1..frames));
        order.swap(0, frames - 1);
        let pk = TokenTensor::stack(&order.iter().map(|&f| k.select(f)).collect::<Vec<_>>())?;
        let pv = TokenTensor::stack(&order.iter().map(|&f| v.select(f)).collect::<Vec<_>>())?;
        perm = perm.max(kv_reference(&q, &pk, &pv)?.max_abs_diff(&base));
    }

    // Injection boundary.
    let t_q = rng.random_range(2..20);
    let qs = TokenTensor::random(1, 4, 8, &mut rng);
    let qt = TokenTensor::random(1, 4, 8, &mut rng);
    let k = TokenTensor::random(1, 4, 8, &mut rng);
    let v = TokenTensor::random(1, 4, 8, &mut rng);
    let with_src = crate::vcac::attention(&qs, &k, &v)?;
    let with_tgt = crate::vcac::attention(&qt, &k, &v)?;
    let at = query_inject(&qs, &qt, &k, &v, t_q, t_q)?;
    let after = query_inject(&qs, &qt, &k, &v, t_q + 1, t_q)?;
    let boundary_fail = usize::from(!injection_active(t_q, t_q))
        + usize::from(injection_active(t_q + 1, t_q))
        + usize::from(at != with_src)
        + usize::from(after != with_tgt);

    // Blend preservation at exact 0/1 mask entries.
    let tgt = Latent::randn([3, 8, 8], &mut rng);
    let src = Latent::randn([3, 8, 8], &mut rng);
    let mut mask = Latent::zeros(1, 8, 8);
    for m in mask.as_mut_slice() {
        *m = match rng.random_range(0..3) {
            0 => 0.0,
            1 => 1.0,
            _ => rng.random(),
        };
    }
    let out = local_blend(&tgt, &src, &mask)?;
    let mut blend_fail = 0;
    for c in 0..3 {
        for y in 0..8 {
            for x in 0..8 {
                let m = mask.get(0, y, x);
                if (m == 0.0 && out.get(c, y, x) != src.get(c, y, x))
                    || (m == 1.0 && out.get(c, y, x) != tgt.get(c, y, x))
                {
                    blend_fail += 1;
                }
            }
        }
    }

    // Hook identity on the denoiser.
    let model = TinyDenoiser::new(TinyDenoiserConfig {
        seed,
        ..TinyDenoiserConfig::default()
    })?;
    let frames: Vec<Latent> = (0..4).map(|_| Latent::randn([3, 8, 8], &mut rng)).collect();
    let y = Condition::from_prompt("a red ball above a garden");
    let t = rng.random_range(1..=50);
    let dirs: Vec<[f64; 3]> = (0..4)
        .map(|i| Camera::orbit("c", 30.0 * i as f64, 0.0, 2.0, 8, 8).map(|c| c.view_dir()))
        .collect::<Result<_>>()?;
    let (partition, pairing) = partition_contexts(4, 2, &dirs, 25.0)?;
    let plan = KvPlan { partition, pairing };
    let mut identity_plain = 0.0f64;
    let mut identity_kv = 0.0f64;
    let plain = model.forward(&frames, t, &y, &VcacHooks::disabled(), None)?.eps;
    let kv_only = model
        .forward(&frames, t, &y, &VcacHooks { kv: Some(plan.clone()), ..VcacHooks::default() }, None)?
        .eps;
    for injection in [false, true] {
        for cross in [false, true] {
            for step in [1, 10] {
                let mut hooks = VcacHooks {
                    query_injection: injection,
                    t_q: 5,
                    step,
                    kv: None,
                    cross_attn: cross.then(|| crate::vcac::CrossAttnAlignment::from_tokens(&y.tokens, &y.tokens)),
                };
                let (_, eps) = model.edit_pair(&frames, &frames, t, &y, &y, &hooks)?;
                for (a, b) in eps.iter().zip(&plain) {
                    identity_plain = identity_plain.max(a.max_abs_diff(b)?);
                }
                hooks.kv = Some(plan.clone());
                let (_, eps) = model.edit_pair(&frames, &frames, t, &y, &y, &hooks)?;
                for (a, b) in eps.iter().zip(&kv_only) {
                    identity_kv = identity_kv.max(a.max_abs_diff(b)?);
                }
            }
        }
    }
    let missing = usize::from(
        model
            .forward(
                &frames,
                t,
                &y,
                &VcacHooks { query_injection: true, t_q: 5, step: 1, ..VcacHooks::default() },
                None,
            )
            .is_ok(),
    );

    Ok(vec![
        Check::within("kv_reference_permutation_invariance", perm, 1e-12, "20 random keyframe orders"),
        Check::holds("injection_boundary_inclusive", boundary_fail, format!("t_q = {t_q}")),
        Check::holds("blend_preserves_masked_regions", blend_fail, "3x8x8 with mixed 0/1/fractional mask"),
        Check::within(
            "hook_identity_without_kv_plan",
            identity_plain,
            1e-12,
            "injection x cross-attention x step, vs plain forward",
        ),
        Check::within(
            "hook_identity_with_kv_plan",
            identity_kv,
            1e-12,
            "same hooks plus a shared K/V plan, vs the K/V plan alone",
        ),
        Check::holds("missing_source_cache_rejected", missing, "injection without cache"),
    ])
}

fn tas_identities(seed: u64) -> Result<Vec<Check>> {
    let scn = toy_scenario();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = NoiseSchedule::default_linear();

    // Literal and algebraic pseudo ground truths agree.
    let mut literal = 0.0f64;
    for _ in 0..200 {
        let t = rng.random_range(1..=s.steps());
        let z = Latent::randn([3, 8, 8], &mut rng);
        let e = Latent::randn([3, 8, 8], &mut rng);
        let es = Latent::randn([3, 8, 8], &mut rng);
        let et = Latent::randn([3, 8, 8], &mut rng);
        let z_tgt = add_noise(&s, &z, &e, t)?;
        let a = pseudo_gt_from_eps(&s, &z, &es, &et, t)?;
        let b = pseudo_gt_literal(&s, &z_tgt, &e, &es, &et, t)?;
        literal = literal.max(a.max_abs_diff(&b)? / (1.0 + a.max_abs()));
    }

    let mut checks = vec![Check::within(
        "literal_and_algebraic_pseudo_gt_agree",
        literal,
        1e-9,
        "200 draws, relative to 1 + max|pgt|",
    )];

    for backend in [ScoreBackend::Analytic, ScoreBackend::Tiny] {
        let cfg = TasConfig {
            seed,
            backend,
            ..TasConfig::default()
        };
        let session = scn.session(cfg, true)?;
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut cloud = session.source.clone();
        let mut pgt_gap = 0.0f64;
        for n in 1..=session.config.outer_steps {
            let step = tas_outer_step(&session, &cloud, n, &mut r)?;
            for (p, z) in step.pseudo.pseudo_gts.iter().zip(&step.pseudo.z_pi) {
                pgt_gap = pgt_gap.max(p.max_abs_diff(z)?);
            }
            cloud = step.cloud;
        }
        let views = session.render_latents(&cloud)?;
        let mut view_gap = 0.0f64;
        for (a, b) in views.iter().zip(session.source_latents()) {
            view_gap = view_gap.max(a.max_abs_diff(b)?);
        }
        let tag = match backend {
            ScoreBackend::Analytic => "analytic",
            ScoreBackend::Tiny => "tiny",
        };
        checks.push(Check::within(
            &format!("identical_prompt_pseudo_gt_is_render_{tag}"),
            pgt_gap,
            1e-10,
            "every outer step and camera",
        ));
        checks.push(Check::within(
            &format!("identical_prompt_views_unchanged_{tag}"),
            view_gap,
            1e-6,
            "per-pixel after the full run",
        ));
    }

    // η = 0 leaves the scene untouched.
    let cfg = TasConfig {
        eta: 0.0,
        outer_steps: 2,
        inner_steps: 1,
        seed,
        ..TasConfig::default()
    };
    let session = scn.session(cfg, false)?;
    let run = run_tas(&session, &mut MetricsLog::default())?;
    checks.push(Check::holds(
        "zero_step_size_keeps_cloud",
        usize::from(run.cloud != session.source),
        "two outer steps toward the edit target",
    ));

    // One noise draw and one pseudo ground truth per camera per outer step.
    let step = tas_outer_step(&session, &session.source, 1, &mut rng)?;
    let cams = session.cameras.len();
    checks.push(Check::holds(
        "one_draw_and_target_per_camera",
        step.noise_draws.abs_diff(cams) + step.pseudo.pseudo_gts.len().abs_diff(cams),
        format!("{cams} cameras"),
    ));
    Ok(checks)
}
