use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffusion::{add_noise, ddim_step, Condition, NoiseSchedule, ScoreModel};
use crate::error::{Error, Result};
use crate::latent::Latent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PseudoGtKind {
    /// Score distillation sampling (also score Jacobian chaining).
    Sds,
    /// Variational score distillation.
    Vsd,
    /// Delta denoising score.
    Dds,
    /// Interval score matching.
    Ism,
    /// Noise-free score distillation.
    Nfsd,
}

impl PseudoGtKind {
    pub const ALL: [PseudoGtKind; 5] = [
        PseudoGtKind::Sds,
        PseudoGtKind::Vsd,
        PseudoGtKind::Dds,
        PseudoGtKind::Ism,
        PseudoGtKind::Nfsd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PseudoGtKind::Sds => "sds",
            PseudoGtKind::Vsd => "vsd",
            PseudoGtKind::Dds => "dds",
            PseudoGtKind::Ism => "ism",
            PseudoGtKind::Nfsd => "nfsd",
        }
    }
}

impl fmt::Display for PseudoGtKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PseudoGtKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sds" | "sjc" => Ok(PseudoGtKind::Sds),
            "vsd" => Ok(PseudoGtKind::Vsd),
            "dds" => Ok(PseudoGtKind::Dds),
            "ism" => Ok(PseudoGtKind::Ism),
            "nfsd" => Ok(PseudoGtKind::Nfsd),
            other => Err(Error::InvalidArgument(format!("unknown pseudo-GT kind `{other}`"))),
        }
    }
}

/// Classifier direction δ_C used by NFSD: `(score, z_t, t, y, ∅) -> δ_C`.
pub type ClassifierDirection =
    fn(&dyn ScoreModel, &Latent, usize, &Condition, &Condition) -> Result<Latent>;

/// δ_C = ε(z_t, t, y) − ε(z_t, t, ∅)
pub fn default_classifier_direction(
    score: &dyn ScoreModel,
    z_t: &Latent,
    t: usize,
    y: &Condition,
    null: &Condition,
) -> Result<Latent> {
    score.eps(z_t, t, y)?.sub(&score.eps(z_t, t, null)?)
}

/// Where the ISM inversion latent z_s sits relative to t.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IsmStep {
    /// s = t − gap, floored at 1 (ε is degenerate at s = 0).
    Gap(usize),
    /// Explicit s; must be below t.
    Fixed(usize),
}

impl Default for IsmStep {
    fn default() -> Self {
        IsmStep::Gap(5)
    }
}

#[derive(Clone)]
pub struct IsmContext {
    pub null: Condition,
    pub step: IsmStep,
}

#[derive(Clone)]
pub struct NfsdContext {
    pub negative: Condition,
    pub null: Condition,
    pub guidance: f64,
    pub delta_c: ClassifierDirection,
}

impl NfsdContext {
    pub fn new(negative: Condition, null: Condition, guidance: f64) -> Self {
        NfsdContext {
            negative,
            null,
            guidance,
            delta_c: default_classifier_direction,
        }
    }
}

/// Models and auxiliary inputs each pseudo-GT kind may need.
#[derive(Clone)]
pub struct PseudoGtContext<'a> {
    pub score: &'a dyn ScoreModel,
    /// ε_ϕ, the second model of VSD.
    pub aux_score: Option<&'a dyn ScoreModel>,
    /// DDS reference: a clean latent noised with the shared ε, and its y'.
    pub reference: Option<(&'a Latent, &'a Condition)>,
    pub ism: Option<IsmContext>,
    pub nfsd: Option<NfsdContext>,
}

impl<'a> PseudoGtContext<'a> {
    pub fn new(score: &'a dyn ScoreModel) -> Self {
        PseudoGtContext {
            score,
            aux_score: None,
            reference: None,
            ism: None,
            nfsd: None,
        }
    }

    pub fn with_aux(mut self, aux: &'a dyn ScoreModel) -> Self {
        self.aux_score = Some(aux);
        self
    }

    pub fn with_reference(mut self, latent: &'a Latent, y: &'a Condition) -> Self {
        self.reference = Some((latent, y));
        self
    }

    pub fn with_ism(mut self, ism: IsmContext) -> Self {
        self.ism = Some(ism);
        self
    }

    pub fn with_nfsd(mut self, nfsd: NfsdContext) -> Self {
        self.nfsd = Some(nfsd);
        self
    }
}

/// The bracketed difference Δ of a pseudo-GT kind together with the noisy
/// latent it was evaluated at.
#[derive(Debug, Clone)]
pub struct PseudoGtTerms {
    pub z_t: Latent,
    pub delta: Latent,
}

/// Deterministic DDIM (σ = 0) from `z_t` at `t` down to `s` under condition `y`.
pub fn ddim_invert_to(
    sched: &NoiseSchedule,
    score: &dyn ScoreModel,
    z_t: &Latent,
    t: usize,
    s: usize,
    y: &Condition,
) -> Result<Latent> {
    let zero = Latent::zeros(z_t.channels(), z_t.height(), z_t.width());
    let mut z = z_t.clone();
    for step in ((s + 1)..=t).rev() {
        let e = score.eps(&z, step, y)?;
        z = ddim_step(sched, &z, &e, step, 0.0, &zero)?;
    }
    Ok(z)
}

/// Δ for `kind`, with z_t = add_noise(z_pi, eps, t).
pub fn pseudo_gt_terms(
    kind: PseudoGtKind,
    ctx: &PseudoGtContext<'_>,
    z_pi: &Latent,
    eps: &Latent,
    t: usize,
    y: &Condition,
    sched: &NoiseSchedule,
) -> Result<PseudoGtTerms> {
    if t < 1 || t > sched.steps() {
        return Err(Error::Domain(format!("pseudo-GT needs 1 <= t <= {}", sched.steps())));
    }
    let z_t = add_noise(sched, z_pi, eps, t)?;
    let delta = match kind {
        PseudoGtKind::Sds => eps.sub(&ctx.score.eps(&z_t, t, y)?)?,
        PseudoGtKind::Vsd => {
            let aux = ctx.aux_score.ok_or(Error::MissingContext {
                kind: "vsd",
                field: "aux_score",
            })?;
            aux.eps(&z_t, t, y)?.sub(&ctx.score.eps(&z_t, t, y)?)?
        }
        PseudoGtKind::Dds => {
            let (reference, y_ref) = ctx.reference.ok_or(Error::MissingContext {
                kind: "dds",
                field: "reference",
            })?;
            let z_ref = add_noise(sched, reference, eps, t)?;
            ctx.score
                .eps(&z_ref, t, y_ref)?
                .sub(&ctx.score.eps(&z_t, t, y)?)?
        }
        PseudoGtKind::Ism => {
            let ism = ctx.ism.as_ref().ok_or(Error::MissingContext {
                kind: "ism",
                field: "ism",
            })?;
            let s = match ism.step {
                IsmStep::Gap(0) => t,
                IsmStep::Gap(g) => t.saturating_sub(g).max(1),
                IsmStep::Fixed(s) => s,
            };
            if s >= t {
                return Err(Error::InvalidArgument(format!(
                    "ISM needs s < t, got s = {s}, t = {t}"
                )));
            }
            let z_s = ddim_invert_to(sched, ctx.score, &z_t, t, s, &ism.null)?;
            ctx.score
                .eps(&z_s, s, &ism.null)?
                .sub(&ctx.score.eps(&z_t, t, y)?)?
        }
        PseudoGtKind::Nfsd => {
            let nfsd = ctx.nfsd.as_ref().ok_or(Error::MissingContext {
                kind: "nfsd",
                field: "nfsd",
            })?;
            let e_neg = ctx.score.eps(&z_t, t, &nfsd.negative)?;
            let e_null = ctx.score.eps(&z_t, t, &nfsd.null)?;
            let delta_c = (nfsd.delta_c)(ctx.score, &z_t, t, y, &nfsd.null)?;
            let mut d = e_neg.sub(&e_null)?;
            for (o, c) in d.as_mut_slice().iter_mut().zip(delta_c.as_slice()) {
                *o -= nfsd.guidance * c;
            }
            d
        }
    };
    Ok(PseudoGtTerms { z_t, delta })
}

/// Pseudo-ground-truth z_π + γ_t·Δ(kind).
pub fn pseudo_gt(
    kind: PseudoGtKind,
    ctx: &PseudoGtContext<'_>,
    z_pi: &Latent,
    eps: &Latent,
    t: usize,
    y: &Condition,
    sched: &NoiseSchedule,
) -> Result<Latent> {
    let terms = pseudo_gt_terms(kind, ctx, z_pi, eps, t, y, sched)?;
    z_pi.lincomb(1.0, &terms.delta, sched.gamma(t))
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

    /// Returns the exact noise it is asked about, regardless of z.
    struct Oracle(Latent);

    impl ScoreModel for Oracle {
        fn eps(&self, _z: &Latent, _t: usize, _y: &Condition) -> Result<Latent> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn sds_with_exact_noise_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = Latent::randn([3, 4, 4], &mut rng);
        let e = Latent::randn([3, 4, 4], &mut rng);
        let oracle = Oracle(e.clone());
        let ctx = PseudoGtContext::new(&oracle);
        let y = Condition::new("y");
        let out = pseudo_gt(PseudoGtKind::Sds, &ctx, &z, &e, 20, &y, &sched()).unwrap();
        assert_eq!(out, z);
    }

    #[test]
    fn sds_with_point_mass_recovers_mean() {
        let s = sched();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mu = Latent::randn([3, 4, 4], &mut rng);
        let mut m = AnalyticGmmScore::new(s.clone(), 0.0).unwrap();
        m.register_single("y", mu.clone()).unwrap();
        let ctx = PseudoGtContext::new(&m);
        for t in [1, 10, 49] {
            let z = Latent::randn([3, 4, 4], &mut rng);
            let e = Latent::randn([3, 4, 4], &mut rng);
            let out = pseudo_gt(PseudoGtKind::Sds, &ctx, &z, &e, t, &Condition::new("y"), &s).unwrap();
            assert!(out.max_abs_diff(&mu).unwrap() <= 1e-10, "t = {t}");
        }
    }

    #[test]
    fn dds_with_self_reference_is_identity() {
        let s = sched();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = AnalyticGmmScore::new(s.clone(), 0.2).unwrap();
        m.register_single("y", Latent::randn([1, 4, 4], &mut rng)).unwrap();
        let z = Latent::randn([1, 4, 4], &mut rng);
        let e = Latent::randn([1, 4, 4], &mut rng);
        let y = Condition::new("y");
        let ctx = PseudoGtContext::new(&m).with_reference(&z, &y);
        let out = pseudo_gt(PseudoGtKind::Dds, &ctx, &z, &e, 25, &y, &s).unwrap();
        assert_eq!(out, z);
    }

    #[test]
    fn missing_context_is_named() {
        let s = sched();
        let m = AnalyticGmmScore::new(s.clone(), 0.0).unwrap();
        let ctx = PseudoGtContext::new(&m);
        let z = Latent::zeros(1, 1, 1);
        let y = Condition::new("y");
        for (kind, field) in [
            (PseudoGtKind::Vsd, "aux_score"),
            (PseudoGtKind::Dds, "reference"),
            (PseudoGtKind::Ism, "ism"),
            (PseudoGtKind::Nfsd, "nfsd"),
        ] {
            match pseudo_gt(kind, &ctx, &z, &z, 5, &y, &s) {
                Err(Error::MissingContext { field: f, .. }) => assert_eq!(f, field),
                other => panic!("{kind}: unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn ism_rejects_s_not_below_t() {
        let s = sched();
        let mut m = AnalyticGmmScore::new(s.clone(), 0.0).unwrap();
        m.register_single("y", Latent::zeros(1, 1, 1)).unwrap();
        let y = Condition::new("y");
        let z = Latent::zeros(1, 1, 1);
        for step in [IsmStep::Fixed(7), IsmStep::Fixed(9), IsmStep::Gap(0)] {
            let ctx = PseudoGtContext::new(&m).with_ism(IsmContext { null: y.clone(), step });
            assert!(pseudo_gt(PseudoGtKind::Ism, &ctx, &z, &z, 7, &y, &s).is_err());
        }
    }

    #[test]
    fn kind_parsing() {
        for k in PseudoGtKind::ALL {
            assert_eq!(k.name().parse::<PseudoGtKind>().unwrap(), k);
        }
        assert_eq!("SJC".parse::<PseudoGtKind>().unwrap(), PseudoGtKind::Sds);
        assert!("lds".parse::<PseudoGtKind>().is_err());
    }
}
