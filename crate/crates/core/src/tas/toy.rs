//! A small synthetic editing scene: ten Gaussians seen by four orbit
//! cameras, with one primitive recolored and lifted in the edit.

use super::config::TasConfig;
use super::session::{EditSession, TargetMode};
use crate::diffusion::Condition;
use crate::error::Result;
use crate::splat::{Camera, Gaussian, GaussianCloud};

pub const TOY_RESOLUTION: usize = 64;
pub const TOY_AZIMUTHS: [f64; 4] = [0.0, 30.0, 60.0, 90.0];

#[derive(Debug, Clone)]
pub struct ToyScenario {
    pub source: GaussianCloud,
    /// Ground-truth edit: the heavier target mode.
    pub edited: GaussianCloud,
    /// Competing recolor: the lighter target mode.
    pub alternative: GaussianCloud,
    pub cameras: Vec<Camera>,
    pub background: [f64; 3],
    pub edited_index: usize,
    /// Mixture weights of `edited` and `alternative`.
    pub weights: [f64; 2],
}

pub fn toy_scenario() -> ToyScenario {
    // The edited primitive sits on the vertical axis, so every orbit camera
    // sees it at the same image location, well above the rest of the scene.
    let mut gaussians = vec![Gaussian::new([0.0, 0.62, 0.0], 0.11, [0.25, 0.45, 0.85], 0.9)];
    let rest: [([f64; 3], f64, [f64; 3], f64); 9] = [
        ([-0.45, -0.35, 0.10], 0.13, [0.85, 0.80, 0.30], 0.85),
        ([0.40, -0.30, -0.20], 0.12, [0.30, 0.75, 0.40], 0.80),
        ([0.05, -0.55, 0.35], 0.14, [0.70, 0.30, 0.60], 0.90),
        ([-0.20, -0.20, -0.40], 0.10, [0.95, 0.55, 0.20], 0.75),
        ([0.25, -0.65, 0.05], 0.12, [0.40, 0.40, 0.90], 0.85),
        ([-0.35, -0.70, -0.25], 0.11, [0.60, 0.85, 0.75], 0.80),
        ([0.50, -0.55, 0.40], 0.10, [0.90, 0.35, 0.35], 0.70),
        ([-0.05, -0.25, 0.05], 0.13, [0.35, 0.60, 0.30], 0.90),
        ([0.15, -0.80, -0.30], 0.12, [0.80, 0.70, 0.55], 0.85),
    ];
    gaussians.extend(rest.iter().map(|&(p, s, c, o)| Gaussian::new(p, s, c, o)));
    let source = GaussianCloud::new(gaussians);

    let mut edited = source.clone();
    edited.gaussians[0].color = [0.90, 0.30, 0.15];
    edited.gaussians[0].position = [0.0, 0.70, 0.0];
    let mut alternative = edited.clone();
    alternative.gaussians[0].color = [0.15, 0.80, 0.30];

    let cameras = TOY_AZIMUTHS
        .iter()
        .enumerate()
        .map(|(i, &az)| {
            Camera::orbit(format!("cam{i}"), az, 0.0, 2.0, TOY_RESOLUTION, TOY_RESOLUTION)
                .expect("valid toy camera")
        })
        .collect();
    ToyScenario {
        source,
        edited,
        alternative,
        cameras,
        background: [0.05, 0.05, 0.08],
        edited_index: 0,
        weights: [0.6, 0.4],
    }
}

impl ToyScenario {
    /// Source and target prompts of the edit.
    pub const PROMPTS: [&'static str; 2] = ["a blue ball above a garden", "a red ball above a garden"];

    /// The same scene with the reference edit as the only target mode.
    pub fn single_mode(mut self) -> Self {
        self.weights = [1.0, 0.0];
        self
    }

    /// Target modes with nonzero weight.
    pub fn target_modes(&self) -> Vec<TargetMode> {
        [&self.edited, &self.alternative]
            .into_iter()
            .zip(self.weights)
            .filter(|&(_, w)| w > 0.0)
            .map(|(cloud, weight)| TargetMode {
                cloud: cloud.clone(),
                weight,
            })
            .collect()
    }

    pub fn edit_point(&self) -> [f64; 3] {
        self.edited.gaussians[self.edited_index].position
    }

    /// Session editing toward the target modes; with `identical` the
    /// target condition equals the source condition.
    pub fn session(&self, config: TasConfig, identical: bool) -> Result<EditSession> {
        let y_src = Condition::from_prompt(Self::PROMPTS[0]);
        let y_tgt = if identical {
            y_src.clone()
        } else {
            Condition::from_prompt(Self::PROMPTS[1])
        };
        Ok(EditSession::new(
            self.source.clone(),
            self.cameras.clone(),
            self.background,
            y_src,
            y_tgt,
            self.target_modes(),
            config,
        )?
        .with_edit_point(self.edit_point()))
    }
}
