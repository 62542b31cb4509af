use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::NoiseSchedule;
use crate::error::{Error, Result};
use crate::latent::Latent;

/// Conditioning label passed to a score model.
///
/// `tokens` are consumed by the tiny denoiser's cross-attention; analytic
/// models only look at `id`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Condition {
    pub id: String,
    pub tokens: Vec<u32>,
}

impl Condition {
    pub fn new(id: impl Into<String>) -> Self {
        Condition {
            id: id.into(),
            tokens: Vec::new(),
        }
    }

    pub fn with_tokens(id: impl Into<String>, tokens: Vec<u32>) -> Self {
        Condition {
            id: id.into(),
            tokens,
        }
    }

    /// Derive a tokenized condition from a prompt string. Token ids are the
    /// byte-sum of each whitespace-separated word, so equal words map to
    /// equal tokens across prompts.
    pub fn from_prompt(prompt: &str) -> Self {
        let tokens = prompt
            .split_whitespace()
            .map(|w| w.bytes().map(u32::from).sum::<u32>())
            .collect();
        Condition {
            id: prompt.to_string(),
            tokens,
        }
    }

    /// The per-view variant of this condition (`id@view`).
    pub fn for_view(&self, view: usize) -> Condition {
        Condition {
            id: format!("{}@{}", self.id, view),
            tokens: self.tokens.clone(),
        }
    }
}

/// ε-prediction contract: deterministic in `(z, t, y)`, output shaped like `z`.
pub trait ScoreModel: Send + Sync {
    fn eps(&self, z: &Latent, t: usize, y: &Condition) -> Result<Latent>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub mean: Latent,
    pub weight: f64,
}

/// Exact ε-prediction for an isotropic Gaussian mixture data distribution.
///
/// Component i of condition y has data mean μ_i and variance `data_var`·I.
/// Its time-t marginal is N(scale(t)·μ_i, (ᾱ_t·data_var + 1 − ᾱ_t)·I), and
/// the prediction is −std(t)·∇_z log q_t(z).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalyticGmmScore {
    schedule: NoiseSchedule,
    data_var: f64,
    conditions: BTreeMap<String, Vec<Component>>,
}

impl AnalyticGmmScore {
    pub fn new(schedule: NoiseSchedule, data_var: f64) -> Result<Self> {
        if !(data_var >= 0.0) || !data_var.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "data variance {data_var} must be finite and non-negative"
            )));
        }
        Ok(AnalyticGmmScore {
            schedule,
            data_var,
            conditions: BTreeMap::new(),
        })
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn data_var(&self) -> f64 {
        self.data_var
    }

    pub fn register(&mut self, id: impl Into<String>, components: Vec<Component>) -> Result<()> {
        let id = id.into();
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidArgument(format!("condition `{id}` has no components")))?;
        let shape = first.mean.shape();
        let mut total = 0.0;
        for c in &components {
            if c.mean.shape() != shape {
                return Err(Error::shape(&shape, &c.mean.shape()));
            }
            if !(c.weight > 0.0 && c.weight <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "component weight {} outside (0, 1]",
                    c.weight
                )));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "weights of `{id}` sum to {total}, expected 1"
            )));
        }
        self.conditions.insert(id, components);
        Ok(())
    }

    pub fn register_single(&mut self, id: impl Into<String>, mean: Latent) -> Result<()> {
        self.register(id, vec![Component { mean, weight: 1.0 }])
    }

    pub fn components(&self, id: &str) -> Result<&[Component]> {
        self.conditions
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownCondition(id.to_string()))
    }

    pub fn has_condition(&self, id: &str) -> bool {
        self.conditions.contains_key(id)
    }

    fn marginal_var(&self, t: usize) -> f64 {
        let ab = self.schedule.alpha_bar(t);
        ab * self.data_var + (1.0 - ab)
    }

    /// Component log-weights plus Gaussian exponent, without the shared
    /// normalizer.
    fn log_terms(&self, comps: &[Component], z: &Latent, t: usize) -> Result<Vec<f64>> {
        let a = self.schedule.scale(t);
        let v = self.marginal_var(t);
        comps
            .iter()
            .map(|c| {
                z.ensure_same_shape(&c.mean)?;
                let sq: f64 = z
                    .as_slice()
                    .iter()
                    .zip(c.mean.as_slice())
                    .map(|(zi, mi)| (zi - a * mi).powi(2))
                    .sum();
                Ok(c.weight.ln() - sq / (2.0 * v))
            })
            .collect()
    }

    /// Closed-form log q_t(z | y).
    pub fn log_density(&self, z: &Latent, t: usize, y: &Condition) -> Result<f64> {
        self.schedule.check_t(t)?;
        let comps = self.components(&y.id)?;
        let v = self.marginal_var(t);
        if v == 0.0 {
            return Err(Error::Domain("degenerate marginal at t = 0 with zero data variance".into()));
        }
        let terms = self.log_terms(comps, z, t)?;
        let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + terms.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        Ok(lse - 0.5 * z.len() as f64 * (2.0 * PI * v).ln())
    }

    /// Posterior responsibilities of each component given z at time t.
    pub fn responsibilities(&self, z: &Latent, t: usize, y: &Condition) -> Result<Vec<f64>> {
        let comps = self.components(&y.id)?;
        if self.marginal_var(t) == 0.0 {
            return Err(Error::Domain("degenerate marginal at t = 0 with zero data variance".into()));
        }
        let terms = self.log_terms(comps, z, t)?;
        let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = terms.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = w.iter().sum();
        Ok(w.into_iter().map(|x| x / s).collect())
    }
}

impl ScoreModel for AnalyticGmmScore {
    fn eps(&self, z: &Latent, t: usize, y: &Condition) -> Result<Latent> {
        self.schedule.check_t(t)?;
        let comps = self.components(&y.id)?;
        let b = self.schedule.std(t);
        let v = self.marginal_var(t);
        if v == 0.0 {
            // std(0) = 0 multiplies a finite score limit.
            z.ensure_same_shape(&comps[0].mean)?;
            return Ok(Latent::zeros(z.channels(), z.height(), z.width()));
        }
        let a = self.schedule.scale(t);
        let r = self.responsibilities(z, t, y)?;
        let mut out = z.scale(b / v);
        let out_s = out.as_mut_slice();
        for (c, ri) in comps.iter().zip(r) {
            if ri == 0.0 {
                continue;
            }
            let k = b * a * ri / v;
            for (o, m) in out_s.iter_mut().zip(c.mean.as_slice()) {
                *o -= k * m;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::diffusion::ScheduleKind;

    fn schedule() -> NoiseSchedule {
        NoiseSchedule::new(ScheduleKind::LinearAlphaBar, 50, 0.01).unwrap()
    }

    #[test]
    fn deterministic_data_gives_exact_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mu = Latent::randn([3, 4, 4], &mut rng);
        let mut m = AnalyticGmmScore::new(schedule(), 0.0).unwrap();
        m.register_single("y", mu.clone()).unwrap();
        let s = schedule();
        for t in [1, 7, 30, 50] {
            let z = Latent::randn([3, 4, 4], &mut rng);
            let eps = m.eps(&z, t, &Condition::new("y")).unwrap();
            let expect = z.lincomb(1.0 / s.std(t), &mu, -s.scale(t) / s.std(t)).unwrap();
            assert!(eps.max_abs_diff(&expect).unwrap() < 1e-12);
        }
    }

    #[test]
    fn symmetric_pair_at_origin_predicts_zero() {
        let mu = Latent::filled(1, 2, 2, 0.7);
        let mut m = AnalyticGmmScore::new(schedule(), 0.3).unwrap();
        m.register(
            "y",
            vec![
                Component { mean: mu.clone(), weight: 0.5 },
                Component { mean: mu.scale(-1.0), weight: 0.5 },
            ],
        )
        .unwrap();
        let eps = m.eps(&Latent::zeros(1, 2, 2), 20, &Condition::new("y")).unwrap();
        assert!(eps.max_abs() < 1e-15);
    }

    #[test]
    fn standard_normal_data_gives_std_times_z() {
        let mut m = AnalyticGmmScore::new(schedule(), 1.0).unwrap();
        m.register_single("y", Latent::zeros(1, 1, 3)).unwrap();
        let z = Latent::from_vec([1, 1, 3], vec![0.3, -1.2, 2.0]).unwrap();
        let t = 17;
        let eps = m.eps(&z, t, &Condition::new("y")).unwrap();
        let expect = z.scale(schedule().std(t));
        assert!(eps.max_abs_diff(&expect).unwrap() < 1e-14);
    }

    #[test]
    fn unknown_condition_is_rejected() {
        let m = AnalyticGmmScore::new(schedule(), 0.0).unwrap();
        let err = m.eps(&Latent::zeros(1, 1, 1), 3, &Condition::new("nope"));
        assert!(matches!(err, Err(Error::UnknownCondition(_))));
    }

    #[test]
    fn weights_must_sum_to_one() {
        let mut m = AnalyticGmmScore::new(schedule(), 0.0).unwrap();
        let c = Component { mean: Latent::zeros(1, 1, 1), weight: 0.4 };
        assert!(m.register("y", vec![c.clone(), c]).is_err());
    }

    #[test]
    fn view_conditions_are_distinct() {
        let y = Condition::from_prompt("a red ball");
        assert_eq!(y.tokens.len(), 3);
        assert_eq!(y.for_view(2).id, "a red ball@2");
        assert_eq!(y.for_view(2).tokens, y.tokens);
    }
}
