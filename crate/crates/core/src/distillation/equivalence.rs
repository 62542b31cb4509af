use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    pseudo_gt, sds_residual_classic, sds_residual_recon, PseudoGtContext, PseudoGtKind,
    WeightSchedule,
};
use crate::diffusion::{add_noise, AnalyticGmmScore, Component, Condition, NoiseSchedule, ScoreModel};
use crate::error::{Error, Result};
use crate::latent::Latent;

pub const EQUIVALENCE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub trials: usize,
    pub seed: u64,
    pub max_abs_diff: f64,
    pub worst_trial: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Random mixture model over `shape` with 1–3 components.
fn random_model<R: Rng>(sched: &NoiseSchedule, shape: [usize; 3], rng: &mut R) -> Result<AnalyticGmmScore> {
    let data_var = if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..1.5) };
    let mut m = AnalyticGmmScore::new(sched.clone(), data_var)?;
    let k = rng.random_range(1..=3);
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let comps = raw
        .iter()
        .map(|w| Component {
            mean: Latent::randn(shape, rng),
            weight: w / total,
        })
        .collect();
    m.register("y", comps)?;
    Ok(m)
}

/// Compare the classic SDS residual with its reconstruction form over
/// `trials` random draws of (model, z_π, ε, t, ω).
pub fn assert_sds_equivalence(
    trials: usize,
    seed: u64,
    shape: [usize; 3],
    sched: &NoiseSchedule,
) -> Result<EquivalenceReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = Condition::new("y");
    let mut worst = (0.0f64, 0usize);
    for trial in 0..trials {
        let model = random_model(sched, shape, &mut rng)?;
        let z_pi = Latent::randn(shape, &mut rng);
        let eps = Latent::randn(shape, &mut rng);
        let t = rng.random_range(1..=sched.steps());
        let w = if rng.random_bool(0.5) {
            WeightSchedule::StdSquared
        } else {
            WeightSchedule::Constant(rng.random_range(0.1..3.0))
        };
        let diff = residual_gap(&model, &z_pi, &eps, t, &y, w, sched)?;
        if diff > worst.0 || trial == 0 {
            worst = (diff, trial);
        }
    }
    Ok(EquivalenceReport {
        trials,
        seed,
        max_abs_diff: worst.0,
        worst_trial: worst.1,
        tolerance: EQUIVALENCE_TOL,
        passed: worst.0 <= EQUIVALENCE_TOL,
    })
}

/// max |classic − recon| for one draw.
pub fn residual_gap(
    model: &dyn ScoreModel,
    z_pi: &Latent,
    eps: &Latent,
    t: usize,
    y: &Condition,
    w: WeightSchedule,
    sched: &NoiseSchedule,
) -> Result<f64> {
    let z_t = add_noise(sched, z_pi, eps, t)?;
    let eps_pred = model.eps(&z_t, t, y)?;
    let classic = sds_residual_classic(&eps_pred, eps, t, w, sched)?;
    let ctx = PseudoGtContext::new(model);
    let target = pseudo_gt(PseudoGtKind::Sds, &ctx, z_pi, eps, t, y, sched)?;
    let recon = sds_residual_recon(z_pi, &target, t, w, sched)?;
    classic.max_abs_diff(&recon)
}
