use serde::{Deserialize, Serialize};

use super::cloud::{CloudGradients, GaussianCloud};
use crate::error::{Error, Result};

/// Learning-rate multipliers per parameter group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupRates {
    pub position: f64,
    pub log_scale: f64,
    pub color: f64,
    pub opacity: f64,
}

/// Positions move at a tenth of the base rate, the other groups at the base rate.
impl Default for GroupRates {
    fn default() -> Self {
        GroupRates {
            position: 0.1,
            log_scale: 1.0,
            color: 1.0,
            opacity: 1.0,
        }
    }
}

impl GroupRates {
    pub fn uniform() -> Self {
        GroupRates {
            position: 1.0,
            log_scale: 1.0,
            color: 1.0,
            opacity: 1.0,
        }
    }
}

/// One plain gradient-descent step. Colors are kept inside `[0, 1]`.
pub fn apply_grad_step(
    cloud: &GaussianCloud,
    grads: &CloudGradients,
    eta: f64,
    rates: &GroupRates,
) -> Result<GaussianCloud> {
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be finite and non-negative, got {eta}"
        )));
    }
    if grads.len() != cloud.len() {
        return Err(Error::shape(&[cloud.len()], &[grads.len()]));
    }
    for i in 0..cloud.len() {
        let checks: [(&'static str, bool); 4] = [
            ("position", grads.position[i].iter().all(|v| v.is_finite())),
            ("log_scale", grads.log_scale[i].is_finite()),
            ("color", grads.color[i].iter().all(|v| v.is_finite())),
            ("logit_opacity", grads.logit_opacity[i].is_finite()),
        ];
        if let Some((param, _)) = checks.iter().find(|(_, ok)| !ok) {
            return Err(Error::NanGradient { index: i, param });
        }
    }
    let mut out = cloud.clone();
    for (i, g) in out.gaussians.iter_mut().enumerate() {
        for a in 0..3 {
            g.position[a] -= eta * rates.position * grads.position[i][a];
            g.color[a] = (g.color[a] - eta * rates.color * grads.color[i][a]).clamp(0.0, 1.0);
        }
        g.log_scale -= eta * rates.log_scale * grads.log_scale[i];
        g.logit_opacity -= eta * rates.opacity * grads.logit_opacity[i];
    }
    Ok(out)
}
