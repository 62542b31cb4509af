use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use splatedit::gradcheck::{central_diff, compare};
use splatedit::splat::GaussianCloud;
use splatedit::tas::{
    compute_loss, run_no_tas, run_tas, tas_outer_step, toy_scenario, trajectory_steps, EditSession,
    LossWeights, MetricsLog, TasConfig,
};
use splatedit::Latent;

fn short(seed: u64) -> TasConfig {
    TasConfig {
        outer_steps: 8,
        inner_steps: 5,
        seed,
        ..TasConfig::default()
    }
}

#[test]
fn identical_prompts_give_a_flat_trajectory() {
    let s = toy_scenario().session(short(1), true).unwrap();
    let run = run_tas(&s, &mut MetricsLog::default()).unwrap();
    for steps in trajectory_steps(&run.pseudo_gts).unwrap() {
        assert!(steps.iter().all(|&d| d <= 1e-6), "{steps:?}");
    }
    for (a, b) in run.final_views.iter().zip(&run.initial_views) {
        assert!(a.max_abs_diff(b).unwrap() <= 1e-6);
    }
}

#[test]
fn every_outer_step_yields_one_image_per_camera() {
    let s = toy_scenario().session(short(2), false).unwrap();
    let run = run_tas(&s, &mut MetricsLog::default()).unwrap();
    assert_eq!(run.pseudo_gts.len(), 8);
    assert!(run.pseudo_gts.iter().all(|p| p.len() == s.cameras.len()));
    let d = trajectory_steps(&run.pseudo_gts).unwrap();
    assert_eq!(d.len(), s.cameras.len());
    assert!(d.iter().all(|v| v.len() == 7 && v.iter().all(|x| x.is_finite())));
}

fn increases(d: &[f64]) -> usize {
    d.windows(2).filter(|w| w[1] > w[0] + 1e-12).count()
}

/// Rendered views after every outer step: the path the cloud actually takes.
fn rendered_path(s: &EditSession, seed: u64) -> Vec<Vec<Latent>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cloud = s.source.clone();
    let mut path = vec![s.render_latents(&cloud).unwrap()];
    for n in 1..=s.config.annealing().unwrap().len() {
        cloud = tas_outer_step(s, &cloud, n, &mut rng).unwrap().cloud;
        path.push(s.render_latents(&cloud).unwrap());
    }
    path
}

#[test]
fn single_mode_trajectory_approaches_its_target() {
    let scn = toy_scenario().single_mode();
    for seed in 0..3 {
        let s = scn.session(TasConfig { seed, ..TasConfig::default() }, false).unwrap();
        let run = run_tas(&s, &mut MetricsLog::default()).unwrap();
        let target = s.reference_latents().unwrap();
        for m in 0..s.cameras.len() {
            let d: Vec<f64> = run.pseudo_gts.iter().map(|p| p[m].l2_dist(&target[m]).unwrap()).collect();
            assert!(
                increases(&d) as f64 <= 0.05 * (d.len() - 1) as f64,
                "seed {seed} camera {m}: {d:?}"
            );
        }
    }
}

#[test]
fn two_mode_path_approaches_the_nearest_mode() {
    let scn = toy_scenario();
    for seed in 0..3 {
        let s = scn.session(TasConfig { seed, ..TasConfig::default() }, false).unwrap();
        let path = rendered_path(&s, seed);
        let modes: Vec<Vec<Latent>> = scn
            .target_modes()
            .iter()
            .map(|m| s.render_latents(&m.cloud).unwrap())
            .collect();
        for m in 0..s.cameras.len() {
            let last = &path.last().unwrap()[m];
            let target = modes
                .iter()
                .min_by(|a, b| a[m].l2_dist(last).unwrap().total_cmp(&b[m].l2_dist(last).unwrap()))
                .unwrap();
            let d: Vec<f64> = path.iter().map(|p| p[m].l2_dist(&target[m]).unwrap()).collect();
            assert!(d.iter().all(|x| x.is_finite()));
            assert!(
                increases(&d) as f64 <= 0.05 * (d.len() - 1) as f64,
                "seed {seed} camera {m}: {d:?}"
            );
            assert!(d[d.len() - 1] < 0.5 * d[0], "seed {seed} camera {m}: {d:?}");
        }
    }
}

#[test]
fn inner_loop_descends_at_default_step_size() {
    let s = toy_scenario().session(TasConfig::default(), false).unwrap();
    let mut log = MetricsLog::default();
    let run = run_tas(&s, &mut log).unwrap();
    let inner = run.timesteps.len() * s.config.inner_steps;
    assert!(
        log.descent_violations() * 100 <= inner,
        "{} violations in {inner} inner steps",
        log.descent_violations()
    );
}

#[test]
fn equal_seeds_give_identical_logs() {
    let s = toy_scenario().session(short(5), false).unwrap();
    let (mut a, mut b) = (MetricsLog::default(), MetricsLog::default());
    let ra = run_tas(&s, &mut a).unwrap();
    let rb = run_tas(&s, &mut b).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(ra.cloud, rb.cloud);
}

#[test]
fn no_tas_draws_the_same_noise_and_reaches_the_same_budget() {
    let s = toy_scenario().session(short(6), false).unwrap();
    let mut log = MetricsLog::default();
    let run = run_no_tas(&s, &mut log).unwrap();
    assert_eq!(run.pseudo_gts.len(), 8);
    assert_eq!(log.rows.len(), 8 * s.cameras.len());
}

#[test]
fn zero_step_size_leaves_the_cloud_unchanged() {
    let cfg = TasConfig {
        eta: 0.0,
        outer_steps: 1,
        inner_steps: 1,
        ..TasConfig::default()
    };
    let s = toy_scenario().session(cfg, false).unwrap();
    let run = run_tas(&s, &mut MetricsLog::default()).unwrap();
    assert_eq!(run.cloud, s.source);
}

#[test]
fn loss_is_zero_at_the_target() {
    let scn = toy_scenario();
    let s = scn.session(TasConfig::default(), false).unwrap();
    let v = &s.source_latents()[0];
    let (terms, _, _) =
        compute_loss(v, v, &scn.source, &scn.source, &TasConfig::default().loss_weights()).unwrap();
    assert_eq!(terms.total, 0.0);
    let w = LossWeights::exact(0.0, 0.0);
    let other = v.map(|x| x + 0.1);
    let (terms, _, _) = compute_loss(v, &other, &scn.source, &scn.source, &w).unwrap();
    assert_eq!(terms.total, terms.l1);
}

#[test]
fn full_loss_gradient_matches_differences() {
    // Through the renderer: d/dθ of the total loss of one view.
    let scn = toy_scenario();
    let s = scn.session(TasConfig::default(), false).unwrap();
    let cam = &s.cameras[1];
    let target = &s.reference_latents().unwrap()[1];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut cloud0 = scn.source.clone();
    for g in &mut cloud0.gaussians {
        g.position[0] += 0.01 * rand::Rng::random_range(&mut rng, -1.0..1.0);
    }
    for delta in [0.0, 0.01] {
        let w = LossWeights {
            lambda_lpips: 0.1,
            lambda_anchor: 0.5,
            l1_delta: delta,
        };
        let loss_of = |c: &GaussianCloud| {
            let view = splatedit::splat::render(c, cam, s.background);
            compute_loss(&view, target, c, &cloud0, &w).unwrap()
        };
        let (_, gview, ganchor) = loss_of(&scn.source);
        let mut grad = splatedit::splat::render_backward(&scn.source, cam, s.background, &gview).unwrap();
        grad.add_scaled(&ganchor, 1.0).unwrap();
        let f = |p: &[f64]| loss_of(&GaussianCloud::from_params(p).unwrap()).0.total;
        let numeric = central_diff(f, &scn.source.to_params(), 1e-6);
        let r = compare(&grad.to_flat(), &numeric, 1e-4);
        assert!(r.max_rel_err <= 1e-3, "delta {delta}: {r:?}");
    }
}
