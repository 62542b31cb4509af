//! Central finite differences for checking analytic gradients.

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a − b| / max(|a|, |b|, floor)`
pub fn rel_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

pub fn compare(analytic: &[f64], numeric: &[f64], floor: f64) -> GradCheck {
    let mut out = GradCheck {
        max_rel_err: 0.0,
        worst_index: 0,
        analytic: analytic.first().copied().unwrap_or(0.0),
        numeric: numeric.first().copied().unwrap_or(0.0),
    };
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let e = rel_error(a, n, floor);
        if e > out.max_rel_err || e.is_nan() {
            out = GradCheck {
                max_rel_err: if e.is_nan() { f64::INFINITY } else { e },
                worst_index: i,
                analytic: a,
                numeric: n,
            };
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let g = central_diff(|x| x[0] * x[0] + 3.0 * x[1], &[2.0, 5.0], 1e-4);
        assert!((g[0] - 4.0).abs() < 1e-8);
        assert!((g[1] - 3.0).abs() < 1e-8);
        let c = compare(&[4.0, 3.0], &g, 1e-3);
        assert!(c.max_rel_err < 1e-8);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(rel_error(0.0, 0.0, 1e-3), 0.0);
        assert!((rel_error(1e-6, 0.0, 1e-3) - 1e-3).abs() < 1e-15);
    }
}
