use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::latent::Latent;

pub const CSV_HEADER: &str = "n,t,camera,l1,perceptual,anchor,total,pgt_to_source,pgt_to_target,inner_first,inner_last,inner_violations";

/// One row per (outer step, camera). Losses are evaluated on the cloud after
/// the K inner updates; `inner_*` summarize the batched loss across the inner
/// loop and repeat on every camera row of the step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub n: usize,
    pub t: usize,
    pub camera: String,
    pub l1: f64,
    pub perceptual: f64,
    pub anchor: f64,
    pub total: f64,
    pub pgt_to_source: f64,
    pub pgt_to_target: Option<f64>,
    pub inner_first: f64,
    pub inner_last: f64,
    pub inner_violations: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let target = r.pgt_to_target.map(|v| v.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.n,
                r.t,
                r.camera,
                r.l1,
                r.perceptual,
                r.anchor,
                r.total,
                r.pgt_to_source,
                target,
                r.inner_first,
                r.inner_last,
                r.inner_violations
            )
            .unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Inner-loop loss increases over all outer steps.
    pub fn descent_violations(&self) -> usize {
        let mut seen = std::collections::BTreeSet::new();
        self.rows
            .iter()
            .filter(|r| seen.insert(r.n))
            .map(|r| r.inner_violations)
            .sum()
    }
}

/// Peak-1 PSNR in dB.
pub fn psnr(a: &Latent, b: &Latent) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let mse = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    })
}

fn sample_bilinear(img: &Latent, c: usize, x: f64, y: f64) -> f64 {
    // Pixel k is centred at k + 0.5.
    let fx = (x - 0.5).clamp(0.0, (img.width() - 1) as f64);
    let fy = (y - 0.5).clamp(0.0, (img.height() - 1) as f64);
    let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(img.width() - 1), (y0 + 1).min(img.height() - 1));
    let (wx, wy) = (fx - x0 as f64, fy - y0 as f64);
    let top = img.get(c, y0, x0) * (1.0 - wx) + img.get(c, y0, x1) * wx;
    let bot = img.get(c, y1, x0) * (1.0 - wx) + img.get(c, y1, x1) * wx;
    top * (1.0 - wy) + bot * wy
}

/// Square window of side `2·half` centred on `center`, resampled bilinearly.
pub fn edit_window(img: &Latent, center: [f64; 2], half: usize) -> Latent {
    let side = 2 * half;
    let mut out = Latent::zeros(img.channels(), side, side);
    for c in 0..img.channels() {
        for j in 0..side {
            for i in 0..side {
                let x = center[0] - half as f64 + i as f64 + 0.5;
                let y = center[1] - half as f64 + j as f64 + 0.5;
                out.set(c, j, i, sample_bilinear(img, c, x, y));
            }
        }
    }
    out
}

/// Largest mean absolute difference between the edit windows of any two views.
pub fn cross_view_disagreement(views: &[Latent], centers: &[[f64; 2]], half: usize) -> Result<f64> {
    if views.len() != centers.len() {
        return Err(Error::shape(&[views.len()], &[centers.len()]));
    }
    let windows: Vec<Latent> = views
        .iter()
        .zip(centers)
        .map(|(v, c)| edit_window(v, *c, half))
        .collect();
    let mut worst: f64 = 0.0;
    for i in 0..windows.len() {
        for j in i + 1..windows.len() {
            worst = worst.max(windows[i].mean_abs_diff(&windows[j])?);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_values() {
        let a = Latent::filled(3, 2, 2, 0.5);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = Latent::filled(3, 2, 2, 0.6);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn window_on_pixel_grid_is_exact() {
        let data: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let img = Latent::from_vec([1, 4, 4], data).unwrap();
        let w = edit_window(&img, [2.0, 2.0], 1);
        assert_eq!(w.as_slice(), &[5.0, 6.0, 9.0, 10.0]);
    }

    #[test]
    fn disagreement_of_equal_views_is_zero() {
        let a = Latent::filled(3, 8, 8, 0.3);
        let mut b = a.clone();
        assert_eq!(cross_view_disagreement(&[a.clone(), b.clone()], &[[4.0, 4.0]; 2], 2).unwrap(), 0.0);
        b.set(0, 4, 4, 1.0);
        assert!(cross_view_disagreement(&[a, b], &[[4.0, 4.0]; 2], 2).unwrap() > 0.0);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let log = MetricsLog {
            rows: vec![MetricsRow {
                n: 1,
                t: 40,
                camera: "c0".into(),
                l1: 0.1,
                perceptual: 0.2,
                anchor: 0.0,
                total: 0.12,
                pgt_to_source: 0.0,
                pgt_to_target: None,
                inner_first: 1.0,
                inner_last: 0.5,
                inner_violations: 0,
            }],
        };
        let csv = log.to_csv();
        assert!(csv.starts_with(CSV_HEADER));
        assert!(csv.lines().nth(1).unwrap().starts_with("1,40,c0,0.1,0.2,0,0.12,0,,1,0.5,0"));
    }
}
