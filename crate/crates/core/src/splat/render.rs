//! Front-to-back alpha compositing of isotropic Gaussians and its exact
//! reverse-mode derivative.
//!
//! Per pixel p (pixel centers at half-integer coordinates), primitives are
//! visited in ascending depth (ties by index) with
//!
//! ```text
//! α_i(p) = min(0.999, o_i · exp(−‖p − μ_i‖² / (2 r_i²)))   if ‖p − μ_i‖ ≤ 4 r_i, else 0
//! C(p)   = Σ_i c_i α_i T_i + background · T_N,   T_i = Π_{j<i} (1 − α_j)
//! ```
//!
//! Rows are processed in parallel; row partial gradients are summed in row
//! order so results do not depend on the thread count.

use rayon::prelude::*;

use super::camera::Camera;
use super::cloud::{CloudGradients, GaussianCloud, PARAMS_PER_GAUSSIAN};
use crate::error::{Error, Result};
use crate::latent::Latent;

pub const ALPHA_MAX: f64 = 0.999;
/// Footprint cutoff in units of the pixel-space radius.
pub const CUTOFF_SIGMAS: f64 = 4.0;

pub type RenderedImage = Latent;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projected {
    /// Pixel coordinates (column, row), continuous.
    pub mean: [f64; 2],
    pub depth: f64,
    /// Pixel-space standard deviation.
    pub radius: f64,
}

pub fn project(cloud: &GaussianCloud, camera: &Camera) -> Vec<Projected> {
    let s = camera.pixel_scale();
    let (cx, cy) = (camera.width as f64 / 2.0, camera.height as f64 / 2.0);
    cloud
        .gaussians
        .iter()
        .map(|g| {
            let p = super::camera::mat_vec(&camera.rotation, &g.position);
            let pc = [
                p[0] + camera.translation[0],
                p[1] + camera.translation[1],
                p[2] + camera.translation[2],
            ];
            Projected {
                mean: [cx + s * pc[0], cy - s * pc[1]],
                depth: pc[2],
                radius: g.log_scale.exp() * s,
            }
        })
        .collect()
}

/// Primitive indices sorted front to back.
fn depth_order(proj: &[Projected]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..proj.len()).collect();
    order.sort_by(|&a, &b| {
        proj[a]
            .depth
            .partial_cmp(&proj[b].depth)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// One primitive's contribution at a pixel.
#[derive(Debug, Clone, Copy)]
struct Fragment {
    index: usize,
    alpha: f64,
    clamped: bool,
    dx: f64,
    dy: f64,
    r2: f64,
}

fn fragments(
    px: f64,
    py: f64,
    order: &[usize],
    proj: &[Projected],
    opacity: &[f64],
    out: &mut Vec<Fragment>,
) {
    out.clear();
    for &i in order {
        let p = &proj[i];
        let dx = px - p.mean[0];
        let dy = py - p.mean[1];
        let d2 = dx * dx + dy * dy;
        let r2 = p.radius * p.radius;
        if d2 > CUTOFF_SIGMAS * CUTOFF_SIGMAS * r2 {
            continue;
        }
        let raw = opacity[i] * (-d2 / (2.0 * r2)).exp();
        let clamped = raw > ALPHA_MAX;
        out.push(Fragment {
            index: i,
            alpha: if clamped { ALPHA_MAX } else { raw },
            clamped,
            dx,
            dy,
            r2,
        });
    }
}

struct Prepared {
    proj: Vec<Projected>,
    order: Vec<usize>,
    opacity: Vec<f64>,
}

fn prepare(cloud: &GaussianCloud, camera: &Camera) -> Prepared {
    let proj = project(cloud, camera);
    let order = depth_order(&proj);
    let opacity = cloud.gaussians.iter().map(|g| g.opacity()).collect();
    Prepared {
        proj,
        order,
        opacity,
    }
}

pub fn render(cloud: &GaussianCloud, camera: &Camera, background: [f64; 3]) -> RenderedImage {
    let (w, h) = (camera.width, camera.height);
    let prep = prepare(cloud, camera);
    let rows: Vec<Vec<[f64; 3]>> = (0..h)
        .into_par_iter()
        .map(|row| {
            let mut frags = Vec::new();
            (0..w)
                .map(|col| {
                    fragments(
                        col as f64 + 0.5,
                        row as f64 + 0.5,
                        &prep.order,
                        &prep.proj,
                        &prep.opacity,
                        &mut frags,
                    );
                    let mut t = 1.0;
                    let mut c = [0.0; 3];
                    for f in &frags {
                        let col = cloud.gaussians[f.index].color;
                        for ch in 0..3 {
                            c[ch] += col[ch] * f.alpha * t;
                        }
                        t *= 1.0 - f.alpha;
                    }
                    for ch in 0..3 {
                        c[ch] += background[ch] * t;
                    }
                    c
                })
                .collect()
        })
        .collect();
    let mut img = Latent::zeros(3, h, w);
    for (row, pixels) in rows.iter().enumerate() {
        for (col, c) in pixels.iter().enumerate() {
            for ch in 0..3 {
                img.set(ch, row, col, c[ch]);
            }
        }
    }
    img
}

/// Gradient of ⟨grad_image, render(cloud, camera)⟩ with respect to every
/// cloud parameter.
pub fn render_backward(
    cloud: &GaussianCloud,
    camera: &Camera,
    background: [f64; 3],
    grad_image: &Latent,
) -> Result<CloudGradients> {
    let (w, h) = (camera.width, camera.height);
    if grad_image.shape() != [3, h, w] {
        return Err(Error::shape(&[3, h, w], &grad_image.shape()));
    }
    let n = cloud.len();
    let prep = prepare(cloud, camera);
    let s = camera.pixel_scale();
    let rot = camera.rotation;

    let partials: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|row| {
            // Per primitive: d/d(mean u), d/d(mean v), d/d(log_scale),
            // d/d(color rgb), d/d(logit_opacity).
            let mut acc = vec![0.0; n * 7];
            let mut frags = Vec::new();
            let mut trans = Vec::new();
            for col in 0..w {
                let g = [
                    grad_image.get(0, row, col),
                    grad_image.get(1, row, col),
                    grad_image.get(2, row, col),
                ];
                if g == [0.0; 3] {
                    continue;
                }
                fragments(
                    col as f64 + 0.5,
                    row as f64 + 0.5,
                    &prep.order,
                    &prep.proj,
                    &prep.opacity,
                    &mut frags,
                );
                trans.clear();
                let mut t = 1.0;
                for f in &frags {
                    trans.push(t);
                    t *= 1.0 - f.alpha;
                }
                // Suffix: colour contributed behind fragment k, background included.
                let mut behind = [background[0] * t, background[1] * t, background[2] * t];
                for k in (0..frags.len()).rev() {
                    let f = frags[k];
                    let ti = trans[k];
                    let c = cloud.gaussians[f.index].color;
                    let base = f.index * 7;
                    let mut d_alpha = 0.0;
                    for ch in 0..3 {
                        acc[base + 3 + ch] += g[ch] * f.alpha * ti;
                        d_alpha += g[ch] * (c[ch] * ti - behind[ch] / (1.0 - f.alpha));
                    }
                    for ch in 0..3 {
                        behind[ch] += c[ch] * f.alpha * ti;
                    }
                    if f.clamped {
                        continue;
                    }
                    let o = prep.opacity[f.index];
                    let gauss = f.alpha / o;
                    let d2 = f.dx * f.dx + f.dy * f.dy;
                    acc[base] += d_alpha * f.alpha * f.dx / f.r2;
                    acc[base + 1] += d_alpha * f.alpha * f.dy / f.r2;
                    acc[base + 2] += d_alpha * f.alpha * d2 / f.r2;
                    acc[base + 6] += d_alpha * gauss * o * (1.0 - o);
                }
            }
            acc
        })
        .collect();

    let mut total = vec![0.0; n * 7];
    for part in &partials {
        for (a, p) in total.iter_mut().zip(part) {
            *a += p;
        }
    }

    let mut grads = CloudGradients::zeros(n);
    for i in 0..n {
        let b = i * 7;
        let (du, dv) = (total[b], total[b + 1]);
        // u = cx + s·(R p)_x,  v = cy − s·(R p)_y
        for a in 0..3 {
            grads.position[i][a] = s * (du * rot[0][a] - dv * rot[1][a]);
        }
        grads.log_scale[i] = total[b + 2];
        grads.color[i] = [total[b + 3], total[b + 4], total[b + 5]];
        grads.logit_opacity[i] = total[b + 6];
    }
    debug_assert_eq!(grads.to_flat().len(), n * PARAMS_PER_GAUSSIAN);
    Ok(grads)
}

/// Average-pooled latent of a rendered image.
pub fn latent_of_image(img: &RenderedImage, pool: usize) -> Result<Latent> {
    img.avg_pool(pool)
}
