use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatedit::diffusion::{
    add_noise, ddcm_step, ddim_step, predict_x0, NoiseSchedule, ScheduleKind,
};
use splatedit::distillation::{residual_gap, AnnealCurve, AnnealingSchedule, WeightSchedule};
use splatedit::splat::{
    apply_grad_step, huber, parse_scene, render, scene_to_string, Camera, CloudGradients, Gaussian,
    GaussianCloud, GroupRates, Scene,
};
use splatedit::tas::{cross_view_disagreement, psnr};
use splatedit::vcac::{attention, attention_probs, kv_reference, local_blend, TokenTensor};
use splatedit::Latent;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_cloud(r: &mut ChaCha8Rng, n: usize) -> GaussianCloud {
    GaussianCloud::new(
        (0..n)
            .map(|_| {
                Gaussian::new(
                    [r.random_range(-0.8..0.8), r.random_range(-0.8..0.8), r.random_range(-0.8..0.8)],
                    r.random_range(0.03..0.4),
                    [r.random(), r.random(), r.random()],
                    r.random_range(0.05..0.99),
                )
            })
            .collect(),
    )
}

fn kind() -> impl Strategy<Value = ScheduleKind> {
    prop_oneof![Just(ScheduleKind::LinearAlphaBar), Just(ScheduleKind::Cosine)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schedule_is_monotone_with_exact_endpoints(k in kind(), steps in 1usize..400, floor in 1e-5f64..0.9) {
        let s = NoiseSchedule::new(k, steps, floor).unwrap();
        let ab = s.alpha_bars();
        prop_assert_eq!(ab[0], 1.0);
        prop_assert!((ab[steps] - floor).abs() <= 1e-15);
        prop_assert!(ab.windows(2).all(|w| w[1] < w[0]));
        prop_assert!(ab.iter().all(|&a| a > 0.0));
    }

    #[test]
    fn noising_round_trips(seed: u64, t in 1usize..=50) {
        let s = NoiseSchedule::default_linear();
        let mut r = rng(seed);
        let x0 = Latent::randn([3, 4, 4], &mut r);
        let e = Latent::randn([3, 4, 4], &mut r);
        let z = add_noise(&s, &x0, &e, t).unwrap();
        prop_assert!(predict_x0(&s, &z, &e, t).unwrap().max_abs_diff(&x0).unwrap() <= 1e-10);
    }

    #[test]
    fn ddim_with_full_noise_is_ddcm(seed: u64, t in 1usize..=50) {
        let s = NoiseSchedule::default_linear();
        let mut r = rng(seed);
        let z = Latent::randn([2, 3, 3], &mut r);
        let e = Latent::randn([2, 3, 3], &mut r);
        let n = Latent::randn([2, 3, 3], &mut r);
        let sigma = (1.0 - s.alpha_bar(t - 1)).sqrt();
        let a = ddim_step(&s, &z, &e, t, sigma, &n).unwrap();
        let b = ddcm_step(&s, &z, &e, t, &n).unwrap();
        prop_assert!(a.max_abs_diff(&b).unwrap() <= 1e-12);
    }

    #[test]
    fn sds_residual_equals_reconstruction_residual(seed: u64, t in 1usize..=50, data_var in 0.0f64..2.0) {
        let s = NoiseSchedule::default_linear();
        let mut r = rng(seed);
        let mut m = splatedit::diffusion::AnalyticGmmScore::new(s.clone(), data_var).unwrap();
        m.register_single("y", Latent::randn([3, 4, 4], &mut r)).unwrap();
        let z = Latent::randn([3, 4, 4], &mut r);
        let e = Latent::randn([3, 4, 4], &mut r);
        let y = splatedit::diffusion::Condition::new("y");
        let gap = residual_gap(&m, &z, &e, t, &y, WeightSchedule::StdSquared, &s).unwrap();
        prop_assert!(gap <= 1e-10, "gap {}", gap);
    }

    #[test]
    fn annealing_is_strictly_decreasing(t_lo in 1usize..30, span in 1usize..20, frac in 0.0f64..1.0, sqrt: bool) {
        let t_hi = t_lo + span;
        let count = 2 + ((span - 1) as f64 * frac) as usize;
        let curve = if sqrt { AnnealCurve::Sqrt } else { AnnealCurve::Linear };
        let a = AnnealingSchedule::new(count, t_hi, t_lo, curve, 50).unwrap();
        let ts = a.timesteps();
        prop_assert_eq!(ts.len(), count);
        prop_assert_eq!(ts[0], t_hi);
        prop_assert_eq!(*ts.last().unwrap(), t_lo);
        prop_assert!(ts.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn attention_rows_are_stochastic_and_outputs_convex(seed: u64, lq in 1usize..6, lk in 1usize..6) {
        let mut r = rng(seed);
        let q = TokenTensor::random(1, lq, 4, &mut r);
        let k = TokenTensor::random(1, lk, 4, &mut r);
        let v = TokenTensor::random(1, lk, 3, &mut r);
        let p = attention_probs(q.frame(0), k.frame(0), 4);
        for row in p.chunks(lk) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
        let o = attention(&q, &k, &v).unwrap();
        for d in 0..3 {
            let lo = (0..lk).map(|l| v.get(0, l, d)).fold(f64::INFINITY, f64::min);
            let hi = (0..lk).map(|l| v.get(0, l, d)).fold(f64::NEG_INFINITY, f64::max);
            for l in 0..lq {
                let x = o.get(0, l, d);
                prop_assert!(x >= lo - 1e-12 && x <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn kv_reference_ignores_keyframe_order(seed: u64, frames in 2usize..5, shift in 1usize..4) {
        let mut r = rng(seed);
        let q = TokenTensor::random(frames, 3, 4, &mut r);
        let k = TokenTensor::random(frames, 3, 4, &mut r);
        let v = TokenTensor::random(frames, 3, 2, &mut r);
        let order: Vec<usize> = (0..frames).map(|i| (i + shift) % frames).collect();
        let pk = TokenTensor::stack(&order.iter().map(|&f| k.select(f)).collect::<Vec<_>>()).unwrap();
        let pv = TokenTensor::stack(&order.iter().map(|&f| v.select(f)).collect::<Vec<_>>()).unwrap();
        let a = kv_reference(&q, &k, &v).unwrap();
        let b = kv_reference(&q, &pk, &pv).unwrap();
        prop_assert!(a.max_abs_diff(&b) <= 1e-12);
    }

    #[test]
    fn blend_preserves_hard_mask_regions(seed: u64) {
        let mut r = rng(seed);
        let tgt = Latent::randn([3, 5, 5], &mut r);
        let src = Latent::randn([3, 5, 5], &mut r);
        let mut mask = Latent::zeros(1, 5, 5);
        for m in mask.as_mut_slice() {
            *m = [0.0, 1.0, r.random()][r.random_range(0..3)];
        }
        let out = local_blend(&tgt, &src, &mask).unwrap();
        for c in 0..3 {
            for y in 0..5 {
                for x in 0..5 {
                    match mask.get(0, y, x) {
                        m if m == 0.0 => prop_assert_eq!(out.get(c, y, x), src.get(c, y, x)),
                        m if m == 1.0 => prop_assert_eq!(out.get(c, y, x), tgt.get(c, y, x)),
                        _ => {}
                    }
                }
            }
        }
    }

    #[test]
    fn pooling_backward_is_adjoint(seed: u64, f in 1usize..4) {
        let mut r = rng(seed);
        let x = Latent::randn([2, 4 * f, 2 * f], &mut r);
        let g = Latent::randn([2, 4, 2], &mut r);
        let lhs = x.avg_pool(f).unwrap().dot(&g).unwrap();
        let rhs = x.dot(&g.avg_pool_backward(f)).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn renders_are_convex_mixtures_of_colors_and_background(seed: u64, n in 0usize..8) {
        let mut r = rng(seed);
        let cloud = random_cloud(&mut r, n);
        let cam = Camera::orbit("c", r.random_range(-180.0..180.0), r.random_range(-60.0..60.0), 2.0, 16, 16).unwrap();
        let bg = [r.random(), r.random(), r.random()];
        let img = render(&cloud, &cam, bg);
        for c in 0..3 {
            let vals = cloud.gaussians.iter().map(|g| g.color[c]).chain([bg[c]]);
            let lo = vals.clone().fold(f64::INFINITY, f64::min);
            let hi = vals.fold(f64::NEG_INFINITY, f64::max);
            for y in 0..16 {
                for x in 0..16 {
                    let v = img.get(c, y, x);
                    prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
                }
            }
        }
    }

    #[test]
    fn scene_text_round_trip_is_exact(seed: u64, n in 0usize..6) {
        let mut r = rng(seed);
        let scene = Scene {
            cloud: random_cloud(&mut r, n),
            cameras: vec![Camera::orbit("a", r.random_range(-90.0..90.0), 10.0, 2.0, 8, 6).unwrap()],
            background: [r.random(), r.random(), r.random()],
        };
        let back = parse_scene(&scene_to_string(&scene), "mem").unwrap();
        prop_assert_eq!(back, scene);
    }

    #[test]
    fn zero_gradient_step_is_identity_and_colors_stay_in_range(seed: u64, eta in 0.0f64..5.0) {
        let mut r = rng(seed);
        let cloud = random_cloud(&mut r, 4);
        let same = apply_grad_step(&cloud, &CloudGradients::zeros(4), eta, &GroupRates::default()).unwrap();
        prop_assert_eq!(&same, &cloud);
        let mut g = CloudGradients::zeros(4);
        for c in g.color.iter_mut() {
            *c = [r.random_range(-10.0..10.0), r.random_range(-10.0..10.0), r.random_range(-10.0..10.0)];
        }
        let moved = apply_grad_step(&cloud, &g, eta, &GroupRates::default()).unwrap();
        prop_assert!(moved.gaussians.iter().flat_map(|g| g.color).all(|c| (0.0..=1.0).contains(&c)));
    }

    #[test]
    fn huber_brackets_absolute_value(x in -5.0f64..5.0, delta in 0.0f64..1.0) {
        let h = huber(x, delta);
        prop_assert!(h <= x.abs() + 1e-15);
        prop_assert!(h >= x.abs() - delta / 2.0 - 1e-15);
    }

    #[test]
    fn identical_views_do_not_disagree(seed: u64) {
        let mut r = rng(seed);
        let v = Latent::randn([3, 16, 16], &mut r);
        let views = vec![v.clone(), v.clone(), v];
        let centers = vec![[8.0, 8.0]; 3];
        prop_assert_eq!(cross_view_disagreement(&views, &centers, 4).unwrap(), 0.0);
    }

    #[test]
    fn psnr_is_symmetric(seed: u64) {
        let mut r = rng(seed);
        let a = Latent::randn([3, 4, 4], &mut r);
        let b = Latent::randn([3, 4, 4], &mut r);
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }
}
