//! Forward noising and the DDIM / DDCM update rules.
//!
//! Steps move from timestep `t` to `t - 1`; ᾱ_0 = 1 so the last DDCM step
//! returns the predicted clean latent.

use rand::Rng;

use super::{Condition, NoiseSchedule, ScoreModel};
use crate::error::{Error, Result};
use crate::latent::Latent;

fn check_step(s: &NoiseSchedule, t: usize) -> Result<()> {
    if t < 1 || t > s.steps() {
        return Err(Error::Domain(format!(
            "sampling step needs 1 <= t <= {}, got {t}",
            s.steps()
        )));
    }
    Ok(())
}

/// scale(t)·x0 + std(t)·eps
pub fn add_noise(s: &NoiseSchedule, x0: &Latent, eps: &Latent, t: usize) -> Result<Latent> {
    s.check_t(t)?;
    x0.lincomb(s.scale(t), eps, s.std(t))
}

/// (z_t − std(t)·eps_pred) / scale(t)
pub fn predict_x0(s: &NoiseSchedule, z_t: &Latent, eps_pred: &Latent, t: usize) -> Result<Latent> {
    s.check_t(t)?;
    let a = s.scale(t);
    if a == 0.0 {
        return Err(Error::Domain(format!("scale({t}) = 0")));
    }
    let b = s.std(t);
    z_t.zip_with(eps_pred, |z, e| (z - b * e) / a)
}

/// One DDIM update with stochasticity `sigma_t`.
pub fn ddim_step(
    s: &NoiseSchedule,
    z_t: &Latent,
    eps_pred: &Latent,
    t: usize,
    sigma_t: f64,
    fresh_noise: &Latent,
) -> Result<Latent> {
    check_step(s, t)?;
    z_t.ensure_same_shape(fresh_noise)?;
    let x0 = predict_x0(s, z_t, eps_pred, t)?;
    let room = 1.0 - s.alpha_bar(t - 1);
    let mut radicand = room - sigma_t * sigma_t;
    // σ_t = √(1 − ᾱ_{t−1}) can leave a rounding residue of either sign.
    if radicand.abs() <= 8.0 * f64::EPSILON * room.max(f64::MIN_POSITIVE) {
        radicand = 0.0;
    }
    if !(sigma_t >= 0.0) || radicand < 0.0 {
        return Err(Error::Domain(format!(
            "sigma_t = {sigma_t} exceeds sqrt(1 - alpha_bar[{}])",
            t - 1
        )));
    }
    let a_prev = s.scale(t - 1);
    let dir = radicand.sqrt();
    let mut out = x0;
    for ((o, e), n) in out
        .as_mut_slice()
        .iter_mut()
        .zip(eps_pred.as_slice())
        .zip(fresh_noise.as_slice())
    {
        *o = a_prev * *o + dir * e + sigma_t * n;
    }
    Ok(out)
}

/// DDCM update: the DDIM instance whose direction term vanishes, leaving the
/// predicted clean latent plus fresh noise at level t − 1.
pub fn ddcm_step(
    s: &NoiseSchedule,
    z_t: &Latent,
    eps_pred: &Latent,
    t: usize,
    fresh_noise: &Latent,
) -> Result<Latent> {
    check_step(s, t)?;
    let x0 = predict_x0(s, z_t, eps_pred, t)?;
    x0.lincomb(s.scale(t - 1), fresh_noise, s.std(t - 1))
}

/// Predicted-x0 form of the DDCM dynamics: ẑ0 at step t from ẑ0 at step
/// t + 1, the noise ε_{t+1} used to form z_t, and the prediction ε_φ(z_t).
pub fn ddcm_x0_step(
    s: &NoiseSchedule,
    x0_pred_prev: &Latent,
    eps_fresh: &Latent,
    eps_pred: &Latent,
    t: usize,
) -> Result<Latent> {
    if t < 1 || t >= s.steps() {
        return Err(Error::Domain(format!(
            "x0 recursion needs 1 <= t <= {}, got {t}",
            s.steps() - 1
        )));
    }
    x0_pred_prev.ensure_same_shape(eps_fresh)?;
    let g = s.gamma(t);
    let diff = eps_fresh.sub(eps_pred)?;
    x0_pred_prev.lincomb(1.0, &diff, g)
}

/// Output of [`ddcm_sample`].
#[derive(Debug, Clone)]
pub struct DdcmTrajectory {
    /// z_T, z_{T-1}, ..., z_0
    pub latents: Vec<Latent>,
    /// ẑ0 predicted at t = T, T-1, ..., 1
    pub x0_preds: Vec<Latent>,
    /// fresh noise consumed by the step from t (index T - t)
    pub noises: Vec<Latent>,
}

/// Run a full DDCM trajectory from `z_start` at t = T down to t = 0.
pub fn ddcm_sample<R: Rng + ?Sized>(
    s: &NoiseSchedule,
    model: &dyn ScoreModel,
    z_start: &Latent,
    y: &Condition,
    rng: &mut R,
) -> Result<DdcmTrajectory> {
    let mut z = z_start.clone();
    let mut traj = DdcmTrajectory {
        latents: vec![z.clone()],
        x0_preds: Vec::with_capacity(s.steps()),
        noises: Vec::with_capacity(s.steps()),
    };
    for t in (1..=s.steps()).rev() {
        let eps = model.eps(&z, t, y)?;
        traj.x0_preds.push(predict_x0(s, &z, &eps, t)?);
        let noise = Latent::randn(z.shape(), rng);
        z = ddcm_step(s, &z, &eps, t, &noise)?;
        traj.noises.push(noise);
        traj.latents.push(z.clone());
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::diffusion::{AnalyticGmmScore, ScheduleKind};

    fn sched() -> NoiseSchedule {
        NoiseSchedule::new(ScheduleKind::LinearAlphaBar, 50, 0.01).unwrap()
    }

    #[test]
    fn add_noise_examples() {
        let s = NoiseSchedule::from_alpha_bar(vec![1.0, 0.25]).unwrap();
        let x0 = Latent::from_vec([1, 1, 2], vec![1.0, 1.0]).unwrap();
        let e = Latent::from_vec([1, 1, 2], vec![2.0, 0.0]).unwrap();
        let z = add_noise(&s, &x0, &e, 1).unwrap();
        assert!((z.as_slice()[0] - 2.232051).abs() < 1e-6);
        assert!((z.as_slice()[1] - 0.5).abs() < 1e-15);
        assert_eq!(add_noise(&s, &x0, &e, 0).unwrap(), x0);
        let zero = Latent::zeros(1, 1, 2);
        let z = add_noise(&s, &zero, &e, 1).unwrap();
        assert_eq!(z, e.scale(s.std(1)));
    }

    #[test]
    fn predict_x0_inverts_noising() {
        let s = sched();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x0 = Latent::randn([3, 4, 4], &mut rng);
        let e = Latent::randn([3, 4, 4], &mut rng);
        for t in 1..=50 {
            let z = add_noise(&s, &x0, &e, t).unwrap();
            let back = predict_x0(&s, &z, &e, t).unwrap();
            assert!(back.max_abs_diff(&x0).unwrap() <= 1e-10);
        }
        let z = Latent::randn([1, 2, 2], &mut rng);
        let p = predict_x0(&s, &z, &Latent::zeros(1, 2, 2), 9).unwrap();
        assert!(p.max_abs_diff(&z.scale(1.0 / s.scale(9))).unwrap() < 1e-15);
    }

    #[test]
    fn deterministic_ddim_with_perfect_prediction() {
        let s = sched();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x0 = Latent::randn([1, 3, 3], &mut rng);
        let e = Latent::randn([1, 3, 3], &mut rng);
        let n = Latent::randn([1, 3, 3], &mut rng);
        let t = 20;
        let z = add_noise(&s, &x0, &e, t).unwrap();
        let out = ddim_step(&s, &z, &e, t, 0.0, &n).unwrap();
        let expect = add_noise(&s, &x0, &e, t - 1).unwrap();
        assert!(out.max_abs_diff(&expect).unwrap() < 1e-12);
    }

    #[test]
    fn ddim_rejects_oversized_sigma() {
        let s = sched();
        let z = Latent::zeros(1, 1, 1);
        let sigma = s.std(9) * 1.01;
        assert!(matches!(
            ddim_step(&s, &z, &z, 10, sigma, &z),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn ddcm_terminal_step_is_prediction() {
        let s = sched();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = Latent::randn([1, 2, 3], &mut rng);
        let e = Latent::randn([1, 2, 3], &mut rng);
        let n = Latent::randn([1, 2, 3], &mut rng);
        let out = ddcm_step(&s, &z, &e, 1, &n).unwrap();
        assert_eq!(out, predict_x0(&s, &z, &e, 1).unwrap());
    }

    #[test]
    fn ddcm_perfect_predictor() {
        let s = sched();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x0 = Latent::randn([2, 2, 2], &mut rng);
        let e = Latent::randn([2, 2, 2], &mut rng);
        let n = Latent::randn([2, 2, 2], &mut rng);
        let z = add_noise(&s, &x0, &e, 33).unwrap();
        let out = ddcm_step(&s, &z, &e, 33, &n).unwrap();
        let expect = add_noise(&s, &x0, &n, 32).unwrap();
        assert!(out.max_abs_diff(&expect).unwrap() < 1e-12);
    }

    #[test]
    fn x0_step_fixed_point() {
        let s = sched();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Latent::randn([1, 2, 2], &mut rng);
        let e = Latent::randn([1, 2, 2], &mut rng);
        assert_eq!(ddcm_x0_step(&s, &x, &e, &e, 10).unwrap(), x);
        assert!(ddcm_x0_step(&s, &x, &e, &e, 50).is_err());
        assert!(ddcm_x0_step(&s, &x, &e, &e, 0).is_err());
    }

    #[test]
    fn step_bounds_enforced() {
        let s = sched();
        let z = Latent::zeros(1, 1, 1);
        assert!(ddcm_step(&s, &z, &z, 0, &z).is_err());
        assert!(ddcm_step(&s, &z, &z, 51, &z).is_err());
        assert!(ddcm_step(&s, &z, &Latent::zeros(1, 1, 2), 3, &z).is_err());
    }

    #[test]
    fn ddcm_sampling_hits_component_mean() {
        let s = sched();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mu = Latent::randn([3, 4, 4], &mut rng);
        let mut m = AnalyticGmmScore::new(s.clone(), 0.0).unwrap();
        m.register_single("y", mu.clone()).unwrap();
        let z_t = Latent::randn([3, 4, 4], &mut rng);
        let traj = ddcm_sample(&s, &m, &z_t, &Condition::new("y"), &mut rng).unwrap();
        let last = traj.x0_preds.last().unwrap();
        assert!(last.max_abs_diff(&mu).unwrap() <= 1e-3);
        assert_eq!(traj.latents.len(), 51);
    }
}
