use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat3 = [[f64; 3]; 3];

pub fn mat_vec(m: &Mat3, v: &[f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn transpose(m: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = m[j][i];
        }
    }
    out
}

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Rotation about the world vertical (y) axis.
pub fn rot_y(deg: f64) -> Mat3 {
    let (s, c) = deg.to_radians().sin_cos();
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

/// Rotation about the world x axis.
pub fn rot_x(deg: f64) -> Mat3 {
    let (s, c) = deg.to_radians().sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

/// Orthographic camera: camera-frame point = rotation·p + translation.
/// Camera x maps to pixel columns (rightward), camera y to rows (upward),
/// camera z is depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub id: String,
    pub rotation: Mat3,
    pub translation: [f64; 3],
    /// World units spanned by the image width.
    pub ortho_extent: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(
        id: impl Into<String>,
        rotation: Mat3,
        translation: [f64; 3],
        ortho_extent: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let cam = Camera {
            id: id.into(),
            rotation,
            translation,
            ortho_extent,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera orbiting the origin: azimuth about the vertical axis, then
    /// elevation about the camera x axis.
    pub fn orbit(
        id: impl Into<String>,
        azimuth_deg: f64,
        elevation_deg: f64,
        ortho_extent: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let r = mat_mul(&rot_x(elevation_deg), &rot_y(azimuth_deg));
        Camera::new(id, r, [0.0; 3], ortho_extent, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument(format!(
                "camera `{}` has empty resolution",
                self.id
            )));
        }
        if !(self.ortho_extent > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "camera `{}` extent must be positive",
                self.id
            )));
        }
        let rtr = mat_mul(&transpose(&self.rotation), &self.rotation);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                if (rtr[i][j] - expect).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(format!(
                        "camera `{}` rotation is not orthonormal",
                        self.id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Pixels per world unit (square pixels).
    pub fn pixel_scale(&self) -> f64 {
        self.width as f64 / self.ortho_extent
    }

    /// World-space unit vector along which the camera looks.
    pub fn view_dir(&self) -> [f64; 3] {
        self.rotation[2]
    }

    /// Angle in degrees between two cameras' viewing directions.
    pub fn angle_to(&self, other: &Camera) -> f64 {
        let a = self.view_dir();
        let b = other.view_dir();
        let d: f64 = (0..3).map(|i| a[i] * b[i]).sum();
        d.clamp(-1.0, 1.0).acos().to_degrees()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orbit_cameras_are_orthonormal() {
        for az in [0.0, 17.0, 90.0, 200.0] {
            Camera::orbit("c", az, 12.0, 2.0, 8, 8).unwrap();
        }
    }

    #[test]
    fn rejects_invalid_cameras() {
        let mut bad = IDENTITY;
        bad[0][0] = 2.0;
        assert!(Camera::new("c", bad, [0.0; 3], 1.0, 4, 4).is_err());
        assert!(Camera::new("c", IDENTITY, [0.0; 3], 1.0, 0, 4).is_err());
        assert!(Camera::new("c", IDENTITY, [0.0; 3], 0.0, 4, 4).is_err());
    }

    #[test]
    fn view_angle_between_orbits() {
        let a = Camera::orbit("a", 0.0, 0.0, 1.0, 4, 4).unwrap();
        let b = Camera::orbit("b", 30.0, 0.0, 1.0, 4, 4).unwrap();
        assert!((a.angle_to(&b) - 30.0).abs() < 1e-9);
        assert!(a.angle_to(&a).abs() < 1e-6);
    }
}
