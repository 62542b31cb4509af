use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters stored per primitive, in flattening order.
pub const PARAMS_PER_GAUSSIAN: usize = 8;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One isotropic 3D Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub position: [f64; 3],
    pub log_scale: f64,
    pub color: [f64; 3],
    pub logit_opacity: f64,
}

impl Gaussian {
    pub fn new(position: [f64; 3], scale: f64, color: [f64; 3], opacity: f64) -> Self {
        Gaussian {
            position,
            log_scale: scale.ln(),
            color,
            logit_opacity: logit(opacity),
        }
    }

    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.logit_opacity)
    }

    fn params(&self) -> [f64; PARAMS_PER_GAUSSIAN] {
        let [x, y, z] = self.position;
        let [r, g, b] = self.color;
        [x, y, z, self.log_scale, r, g, b, self.logit_opacity]
    }

    fn from_params(p: &[f64]) -> Self {
        Gaussian {
            position: [p[0], p[1], p[2]],
            log_scale: p[3],
            color: [p[4], p[5], p[6]],
            logit_opacity: p[7],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GaussianCloud {
    pub gaussians: Vec<Gaussian>,
}

impl GaussianCloud {
    pub fn new(gaussians: Vec<Gaussian>) -> Self {
        GaussianCloud { gaussians }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// Flatten to `[x, y, z, log_scale, r, g, b, logit_opacity]` per primitive.
    pub fn to_params(&self) -> Vec<f64> {
        self.gaussians.iter().flat_map(|g| g.params()).collect()
    }

    pub fn from_params(params: &[f64]) -> Result<Self> {
        if params.len() % PARAMS_PER_GAUSSIAN != 0 {
            return Err(Error::InvalidArgument(format!(
                "parameter vector length {} is not a multiple of {PARAMS_PER_GAUSSIAN}",
                params.len()
            )));
        }
        Ok(GaussianCloud {
            gaussians: params
                .chunks_exact(PARAMS_PER_GAUSSIAN)
                .map(Gaussian::from_params)
                .collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.to_params().iter().all(|v| v.is_finite())
    }

    /// Rotate every position by `r` (row-major 3×3) about the origin.
    pub fn rotated(&self, r: &[[f64; 3]; 3]) -> Self {
        let mut out = self.clone();
        for g in &mut out.gaussians {
            g.position = super::camera::mat_vec(r, &g.position);
        }
        out
    }
}

/// Per-primitive partial derivatives, mirroring [`GaussianCloud`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudGradients {
    pub position: Vec<[f64; 3]>,
    pub log_scale: Vec<f64>,
    pub color: Vec<[f64; 3]>,
    pub logit_opacity: Vec<f64>,
}

impl CloudGradients {
    pub fn zeros(n: usize) -> Self {
        CloudGradients {
            position: vec![[0.0; 3]; n],
            log_scale: vec![0.0; n],
            color: vec![[0.0; 3]; n],
            logit_opacity: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.log_scale.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_scale.is_empty()
    }

    /// Flatten in the same order as [`GaussianCloud::to_params`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * PARAMS_PER_GAUSSIAN);
        for i in 0..self.len() {
            out.extend_from_slice(&self.position[i]);
            out.push(self.log_scale[i]);
            out.extend_from_slice(&self.color[i]);
            out.push(self.logit_opacity[i]);
        }
        out
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() % PARAMS_PER_GAUSSIAN != 0 {
            return Err(Error::InvalidArgument("gradient length mismatch".into()));
        }
        let n = flat.len() / PARAMS_PER_GAUSSIAN;
        let mut g = CloudGradients::zeros(n);
        for (i, p) in flat.chunks_exact(PARAMS_PER_GAUSSIAN).enumerate() {
            g.position[i] = [p[0], p[1], p[2]];
            g.log_scale[i] = p[3];
            g.color[i] = [p[4], p[5], p[6]];
            g.logit_opacity[i] = p[7];
        }
        Ok(g)
    }

    /// `self += k * other`
    pub fn add_scaled(&mut self, other: &CloudGradients, k: f64) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::shape(&[self.len()], &[other.len()]));
        }
        for i in 0..self.len() {
            for a in 0..3 {
                self.position[i][a] += k * other.position[i][a];
                self.color[i][a] += k * other.color[i][a];
            }
            self.log_scale[i] += k * other.log_scale[i];
            self.logit_opacity[i] += k * other.logit_opacity[i];
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.to_flat().iter().map(|v| v.abs()).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_round_trip() {
        let c = GaussianCloud::new(vec![
            Gaussian::new([0.1, 0.2, 0.3], 0.5, [1.0, 0.5, 0.0], 0.7),
            Gaussian::new([-1.0, 2.0, 0.0], 0.1, [0.0, 0.0, 1.0], 0.2),
        ]);
        let p = c.to_params();
        assert_eq!(p.len(), 16);
        assert_eq!(GaussianCloud::from_params(&p).unwrap(), c);
        assert!(GaussianCloud::from_params(&p[..7]).is_err());
    }

    #[test]
    fn derived_quantities() {
        let g = Gaussian::new([0.0; 3], 0.25, [0.0; 3], 0.8);
        assert!((g.scale() - 0.25).abs() < 1e-15);
        assert!((g.opacity() - 0.8).abs() < 1e-15);
        assert!((sigmoid(-800.0)) >= 0.0);
        assert!((sigmoid(800.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gradient_flattening_matches_params_order() {
        let flat: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let g = CloudGradients::from_flat(&flat).unwrap();
        assert_eq!(g.to_flat(), flat);
        assert_eq!(g.log_scale[1], 11.0);
    }
}
