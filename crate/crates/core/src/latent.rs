//! Dense real-valued view tensors.
//!
//! Images and diffusion latents share this type: at desk scale the latent of
//! an image is the image itself (optionally average-pooled).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `(channels, height, width)` tensor stored row-major, channel-first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    shape: [usize; 3],
    data: Vec<f64>,
}

impl Latent {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Latent {
            shape: [channels, height, width],
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_vec(shape: [usize; 3], data: Vec<f64>) -> Result<Self> {
        let n = shape.iter().product::<usize>();
        if n != data.len() {
            return Err(Error::shape(&[n], &[data.len()]));
        }
        Ok(Latent { shape, data })
    }

    /// Standard normal draw of the given shape.
    pub fn randn<R: Rng + ?Sized>(shape: [usize; 3], rng: &mut R) -> Self {
        let n = shape.iter().product::<usize>();
        let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        Latent { shape, data }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape[0]
    }

    pub fn height(&self) -> usize {
        self.shape[1]
    }

    pub fn width(&self) -> usize {
        self.shape[2]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.shape[1] + y) * self.shape[2] + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let i = self.index(c, y, x);
        self.data[i] = v;
    }

    pub fn ensure_same_shape(&self, other: &Latent) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(&self.shape, &other.shape));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Latent {
        Latent {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two equally shaped tensors.
    pub fn zip_with(&self, other: &Latent, f: impl Fn(f64, f64) -> f64) -> Result<Latent> {
        self.ensure_same_shape(other)?;
        Ok(Latent {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Latent) -> Result<Latent> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Latent) -> Result<Latent> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, k: f64) -> Latent {
        self.map(|v| k * v)
    }

    /// `alpha * self + beta * other`
    pub fn lincomb(&self, alpha: f64, other: &Latent, beta: f64) -> Result<Latent> {
        self.zip_with(other, |a, b| alpha * a + beta * b)
    }

    pub fn max_abs_diff(&self, other: &Latent) -> Result<f64> {
        self.ensure_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    pub fn mean_abs_diff(&self, other: &Latent) -> Result<f64> {
        self.ensure_same_shape(other)?;
        let s: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum();
        Ok(s / self.data.len().max(1) as f64)
    }

    pub fn l2_dist(&self, other: &Latent) -> Result<f64> {
        self.ensure_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    pub fn dot(&self, other: &Latent) -> Result<f64> {
        self.ensure_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Average-pool by an integer factor in both spatial dimensions.
    pub fn avg_pool(&self, factor: usize) -> Result<Latent> {
        let [c, h, w] = self.shape;
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(Error::InvalidArgument(format!(
                "pool factor {factor} does not divide {h}x{w}"
            )));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let (oh, ow) = (h / factor, w / factor);
        let inv = 1.0 / (factor * factor) as f64;
        let mut out = Latent::zeros(c, oh, ow);
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for dy in 0..factor {
                        for dx in 0..factor {
                            acc += self.get(ch, oy * factor + dy, ox * factor + dx);
                        }
                    }
                    out.set(ch, oy, ox, acc * inv);
                }
            }
        }
        Ok(out)
    }

    /// Adjoint of [`Latent::avg_pool`]: spreads each pooled gradient evenly
    /// over its source block.
    pub fn avg_pool_backward(&self, factor: usize) -> Latent {
        let [c, oh, ow] = self.shape;
        if factor == 1 {
            return self.clone();
        }
        let inv = 1.0 / (factor * factor) as f64;
        let mut out = Latent::zeros(c, oh * factor, ow * factor);
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = self.get(ch, oy, ox) * inv;
                    for dy in 0..factor {
                        for dx in 0..factor {
                            out.set(ch, oy * factor + dy, ox * factor + dx, g);
                        }
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Latent::from_vec([1, 2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn pool_of_constant_block_is_constant() {
        let l = Latent::filled(3, 4, 4, 0.37);
        let p = l.avg_pool(2).unwrap();
        assert_eq!(p.shape(), [3, 2, 2]);
        assert!(p.as_slice().iter().all(|&v| (v - 0.37).abs() < 1e-15));
    }

    #[test]
    fn pool_backward_is_adjoint() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x = Latent::randn([2, 4, 6], &mut rng);
        let g = Latent::randn([2, 2, 3], &mut rng);
        let lhs = x.avg_pool(2).unwrap().dot(&g).unwrap();
        let rhs = x.dot(&g.avg_pool_backward(2)).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
