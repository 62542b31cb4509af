//! Reconstruction objective terms: L1, a pyramid perceptual proxy and an
//! anchor penalty on the cloud parameters.

use super::cloud::{CloudGradients, GaussianCloud, PARAMS_PER_GAUSSIAN};
use crate::error::{Error, Result};
use crate::latent::Latent;

/// Pyramid depth of the perceptual proxy.
pub const PYRAMID_LEVELS: usize = 3;

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn l1_loss(a: &Latent, b: &Latent) -> Result<f64> {
    a.mean_abs_diff(b)
}

/// L1 value and its (sub)gradient with respect to `a`.
pub fn l1_loss_grad(a: &Latent, b: &Latent) -> Result<(f64, Latent)> {
    smooth_l1_loss_grad(a, b, 0.0)
}

/// Huber penalty: quadratic for `|r| ≤ delta`, `|r| − delta/2` beyond.
/// `delta = 0` is exact L1 with subgradient `sign(0) = 0`.
pub fn huber(r: f64, delta: f64) -> f64 {
    if r.abs() <= delta && delta > 0.0 {
        r * r / (2.0 * delta)
    } else {
        r.abs() - delta / 2.0
    }
}

fn huber_grad(r: f64, delta: f64) -> f64 {
    if r.abs() <= delta && delta > 0.0 {
        r / delta
    } else {
        sign(r)
    }
}

/// Mean Huber-smoothed absolute difference and its gradient w.r.t. `a`.
pub fn smooth_l1_loss_grad(a: &Latent, b: &Latent, delta: f64) -> Result<(f64, Latent)> {
    a.ensure_same_shape(b)?;
    if !(delta >= 0.0) {
        return Err(Error::InvalidArgument(format!("smoothing width must be >= 0, got {delta}")));
    }
    let n = a.len().max(1) as f64;
    let grad = a.zip_with(b, |x, y| huber_grad(x - y, delta) / n)?;
    let value = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| huber(x - y, delta))
        .sum::<f64>()
        / n;
    Ok((value, grad))
}

/// Pool factors `1, 2, 4, ..` used for an image of this shape; a level is
/// kept only while both spatial dims stay divisible.
pub fn pyramid_factors(shape: [usize; 3]) -> Vec<usize> {
    let mut out = vec![1];
    let mut f = 1;
    for _ in 1..PYRAMID_LEVELS {
        f *= 2;
        if shape[1] % f != 0 || shape[2] % f != 0 {
            break;
        }
        out.push(f);
    }
    out
}

pub fn perceptual_loss(a: &Latent, b: &Latent) -> Result<f64> {
    Ok(perceptual_loss_grad(a, b)?.0)
}

pub fn perceptual_loss_grad(a: &Latent, b: &Latent) -> Result<(f64, Latent)> {
    smooth_perceptual_loss_grad(a, b, 0.0)
}

/// Pyramid loss with every level's L1 Huber-smoothed by `delta`.
pub fn smooth_perceptual_loss_grad(a: &Latent, b: &Latent, delta: f64) -> Result<(f64, Latent)> {
    a.ensure_same_shape(b)?;
    let [c, h, w] = a.shape();
    let mut total = 0.0;
    let mut grad = Latent::zeros(c, h, w);
    for f in pyramid_factors(a.shape()) {
        let pa = a.avg_pool(f)?;
        let pb = b.avg_pool(f)?;
        let (v, g) = smooth_l1_loss_grad(&pa, &pb, delta)?;
        total += v;
        grad = grad.add(&g.avg_pool_backward(f))?;
    }
    Ok((total, grad))
}

fn check_counts(cloud: &GaussianCloud, cloud0: &GaussianCloud) -> Result<()> {
    if cloud.len() != cloud0.len() {
        return Err(Error::shape(&[cloud0.len()], &[cloud.len()]));
    }
    Ok(())
}

/// Mean squared deviation over every flattened parameter.
pub fn anchor_loss(cloud: &GaussianCloud, cloud0: &GaussianCloud) -> Result<f64> {
    Ok(anchor_loss_grad(cloud, cloud0)?.0)
}

pub fn anchor_loss_grad(
    cloud: &GaussianCloud,
    cloud0: &GaussianCloud,
) -> Result<(f64, CloudGradients)> {
    check_counts(cloud, cloud0)?;
    if cloud.is_empty() {
        return Ok((0.0, CloudGradients::zeros(0)));
    }
    let p = cloud.to_params();
    let p0 = cloud0.to_params();
    let n = (cloud.len() * PARAMS_PER_GAUSSIAN) as f64;
    let value = p.iter().zip(&p0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
    let grad: Vec<f64> = p.iter().zip(&p0).map(|(a, b)| 2.0 * (a - b) / n).collect();
    Ok((value, CloudGradients::from_flat(&grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splat::cloud::Gaussian;
    use rand::SeedableRng;

    #[test]
    fn equal_inputs_give_zero() {
        let a = Latent::filled(3, 8, 8, 0.3);
        assert_eq!(l1_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(perceptual_loss(&a, &a).unwrap(), 0.0);
        let c = GaussianCloud::new(vec![Gaussian::new([0.0; 3], 0.2, [0.5; 3], 0.5)]);
        assert_eq!(anchor_loss(&c, &c).unwrap(), 0.0);
    }

    #[test]
    fn two_pixel_l1() {
        let a = Latent::from_vec([1, 1, 2], vec![0.0, 1.0]).unwrap();
        let b = Latent::from_vec([1, 1, 2], vec![1.0, 1.0]).unwrap();
        assert_eq!(l1_loss(&a, &b).unwrap(), 0.5);
    }

    #[test]
    fn mismatches_rejected() {
        let a = Latent::zeros(3, 4, 4);
        let b = Latent::zeros(3, 4, 2);
        assert!(l1_loss(&a, &b).is_err());
        assert!(perceptual_loss(&a, &b).is_err());
        let c1 = GaussianCloud::new(vec![Gaussian::new([0.0; 3], 0.2, [0.5; 3], 0.5)]);
        assert!(anchor_loss(&c1, &GaussianCloud::default()).is_err());
    }

    #[test]
    fn pyramid_levels_follow_divisibility() {
        assert_eq!(pyramid_factors([3, 8, 8]), vec![1, 2, 4]);
        assert_eq!(pyramid_factors([3, 6, 6]), vec![1, 2]);
        assert_eq!(pyramid_factors([3, 5, 8]), vec![1]);
    }

    #[test]
    fn anchor_is_mean_square() {
        let c0 = GaussianCloud::new(vec![Gaussian::new([0.0; 3], 1.0, [0.0; 3], 0.5)]);
        let mut c = c0.clone();
        c.gaussians[0].position[0] = 2.0;
        assert!((anchor_loss(&c, &c0).unwrap() - 4.0 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn huber_limits() {
        assert_eq!(huber(0.3, 0.0), 0.3);
        assert!((huber(0.005, 0.01) - 0.00125).abs() < 1e-15);
        assert!((huber(-0.5, 0.01) - 0.495).abs() < 1e-15);
        let a = Latent::from_vec([1, 1, 2], vec![0.0, 1.0]).unwrap();
        let b = Latent::from_vec([1, 1, 2], vec![1.0, 1.0]).unwrap();
        assert!(smooth_l1_loss_grad(&a, &b, -1.0).is_err());
        let (v, g) = smooth_l1_loss_grad(&a, &b, 0.0).unwrap();
        assert_eq!(v, 0.5);
        assert_eq!(g.as_slice(), &[-0.5, 0.0]);
    }

    #[test]
    fn perceptual_gradient_matches_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let a = Latent::randn([2, 4, 4], &mut rng);
        let b = Latent::randn([2, 4, 4], &mut rng);
        let (_, g) = perceptual_loss_grad(&a, &b).unwrap();
        let (_, gs) = smooth_perceptual_loss_grad(&a, &b, 0.5).unwrap();
        let smooth = |x: &Latent| smooth_perceptual_loss_grad(x, &b, 0.5).unwrap().0;
        let h = 1e-6;
        for i in 0..a.len() {
            let mut ap = a.clone();
            ap.as_mut_slice()[i] += h;
            let mut am = a.clone();
            am.as_mut_slice()[i] -= h;
            let fd = (perceptual_loss(&ap, &b).unwrap() - perceptual_loss(&am, &b).unwrap())
                / (2.0 * h);
            assert!((fd - g.as_slice()[i]).abs() < 1e-6, "{i}: {fd} vs {}", g.as_slice()[i]);
            let fd = (smooth(&ap) - smooth(&am)) / (2.0 * h);
            assert!((fd - gs.as_slice()[i]).abs() < 1e-6);
        }
    }
}
