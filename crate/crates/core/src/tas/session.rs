use rayon::prelude::*;

use super::config::{ScoreBackend, TasConfig};
use crate::diffusion::{AnalyticGmmScore, Component, Condition, NoiseSchedule, ScoreModel};
use crate::error::{Error, Result};
use crate::latent::Latent;
use crate::splat::{latent_of_image, project, render, Camera, Gaussian, GaussianCloud};
use crate::vcac::{
    partition_contexts, CrossAttnAlignment, KvPlan, TinyDenoiser, TinyDenoiserConfig, VcacHooks,
};

/// One mode of the analytic target distribution, given as the cloud whose
/// renders are the per-view mode means.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMode {
    pub cloud: GaussianCloud,
    pub weight: f64,
}

#[derive(Debug, Clone)]
enum SessionScore {
    Analytic(AnalyticGmmScore),
    Tiny(TinyDenoiser),
}

/// Everything one editing run needs: source scene, cameras, cached source
/// latents, the two conditions and the score model.
#[derive(Debug, Clone)]
pub struct EditSession {
    pub source: GaussianCloud,
    pub cameras: Vec<Camera>,
    pub background: [f64; 3],
    pub y_src: Condition,
    pub y_tgt: Condition,
    pub config: TasConfig,
    pub target_modes: Vec<TargetMode>,
    /// Per-camera blend masks at latent resolution.
    pub masks: Vec<Option<Latent>>,
    /// World point whose projection anchors the cross-view comparison window.
    pub edit_point: Option<[f64; 3]>,
    z_src0: Vec<Latent>,
    reference: Option<Vec<Latent>>,
    schedule: NoiseSchedule,
    score: SessionScore,
}

impl EditSession {
    pub fn new(
        source: GaussianCloud,
        cameras: Vec<Camera>,
        background: [f64; 3],
        y_src: Condition,
        y_tgt: Condition,
        target_modes: Vec<TargetMode>,
        config: TasConfig,
    ) -> Result<Self> {
        config.validate()?;
        if cameras.is_empty() {
            return Err(Error::InvalidArgument("session needs at least one camera".into()));
        }
        let schedule = config.noise_schedule()?;
        let pool = config.pool;
        let render_all = |cloud: &GaussianCloud| -> Result<Vec<Latent>> {
            cameras
                .par_iter()
                .map(|c| latent_of_image(&render(cloud, c, background), pool))
                .collect()
        };
        let z_src0 = render_all(&source)?;
        let shape = z_src0[0].shape();
        if z_src0.iter().any(|z| z.shape() != shape) {
            return Err(Error::InvalidArgument("all cameras must share one resolution".into()));
        }
        let mut mode_views = Vec::with_capacity(target_modes.len());
        for m in &target_modes {
            if !(m.weight > 0.0) {
                return Err(Error::InvalidArgument("target mode weights must be positive".into()));
            }
            mode_views.push(render_all(&m.cloud)?);
        }
        let reference = target_modes
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.weight.total_cmp(&b.1.weight).then(b.0.cmp(&a.0)))
            .map(|(i, _)| mode_views[i].clone());

        let score = match config.backend {
            ScoreBackend::Analytic => {
                let mut s = AnalyticGmmScore::new(schedule.clone(), 0.0)?;
                for (m, z) in z_src0.iter().enumerate() {
                    s.register_single(y_src.for_view(m).id, z.clone())?;
                }
                if y_tgt.id != y_src.id {
                    if target_modes.is_empty() {
                        return Err(Error::InvalidArgument(
                            "the analytic backend needs at least one target mode when prompts differ"
                                .into(),
                        ));
                    }
                    let total: f64 = target_modes.iter().map(|m| m.weight).sum();
                    for m in 0..cameras.len() {
                        let comps = target_modes
                            .iter()
                            .zip(&mode_views)
                            .map(|(mode, views)| Component {
                                mean: views[m].clone(),
                                weight: mode.weight / total,
                            })
                            .collect();
                        s.register(y_tgt.for_view(m).id, comps)?;
                    }
                }
                SessionScore::Analytic(s)
            }
            ScoreBackend::Tiny => {
                if cameras.len() % config.ctx_len != 0 {
                    return Err(Error::InvalidArgument(format!(
                        "context length {} must divide the camera count {}",
                        config.ctx_len,
                        cameras.len()
                    )));
                }
                SessionScore::Tiny(TinyDenoiser::new(TinyDenoiserConfig {
                    channels: shape[0],
                    max_t: config.schedule_steps,
                    ..config.denoiser
                })?)
            }
        };
        let n = cameras.len();
        Ok(EditSession {
            source,
            cameras,
            background,
            y_src,
            y_tgt,
            config,
            target_modes,
            masks: vec![None; n],
            edit_point: None,
            z_src0,
            reference,
            schedule,
            score,
        })
    }

    pub fn with_mask(mut self, camera: usize, mask: Latent) -> Result<Self> {
        if camera >= self.cameras.len() {
            return Err(Error::InvalidArgument(format!("no camera with index {camera}")));
        }
        let [_, h, w] = self.z_src0[camera].shape();
        if mask.channels() != 1 || mask.height() != h || mask.width() != w {
            return Err(Error::shape(&[1, h, w], &mask.shape()));
        }
        if mask.as_slice().iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(Error::Domain("blend mask entries must lie in [0, 1]".into()));
        }
        self.masks[camera] = Some(mask);
        Ok(self)
    }

    pub fn with_edit_point(mut self, p: [f64; 3]) -> Self {
        self.edit_point = Some(p);
        self
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn source_latents(&self) -> &[Latent] {
        &self.z_src0
    }

    /// Per-view means of the heaviest target mode.
    pub fn reference_latents(&self) -> Option<&[Latent]> {
        self.reference.as_deref()
    }

    pub fn latent_shape(&self) -> [usize; 3] {
        self.z_src0[0].shape()
    }

    /// Latent of `cloud` seen from every camera.
    pub fn render_latents(&self, cloud: &GaussianCloud) -> Result<Vec<Latent>> {
        self.cameras
            .par_iter()
            .map(|c| latent_of_image(&render(cloud, c, self.background), self.config.pool))
            .collect()
    }

    pub fn render_images(&self, cloud: &GaussianCloud) -> Vec<Latent> {
        self.cameras
            .par_iter()
            .map(|c| render(cloud, c, self.background))
            .collect()
    }

    /// Projected edit point per camera, in latent pixel coordinates.
    pub fn edit_centers(&self) -> Option<Vec<[f64; 2]>> {
        let p = self.edit_point?;
        let probe = GaussianCloud::new(vec![Gaussian::new(p, 1.0, [0.0; 3], 0.5)]);
        let pool = self.config.pool as f64;
        Some(
            self.cameras
                .iter()
                .map(|c| {
                    let m = project(&probe, c)[0].mean;
                    [m[0] / pool, m[1] / pool]
                })
                .collect(),
        )
    }

    pub fn hooks(&self, n: usize) -> Result<VcacHooks> {
        if !self.config.vcac || self.config.backend != ScoreBackend::Tiny {
            return Ok(VcacHooks::disabled());
        }
        let dirs: Vec<[f64; 3]> = self.cameras.iter().map(|c| c.view_dir()).collect();
        let (partition, pairing) = partition_contexts(
            self.cameras.len(),
            self.config.ctx_len,
            &dirs,
            self.config.angle_threshold_deg,
        )?;
        Ok(VcacHooks {
            query_injection: true,
            t_q: self.config.t_q,
            step: n,
            kv: Some(KvPlan { partition, pairing }),
            cross_attn: Some(CrossAttnAlignment::from_tokens(
                &self.y_src.tokens,
                &self.y_tgt.tokens,
            )),
        })
    }

    /// Source- and target-branch noise predictions for every camera at
    /// editing step `n`.
    pub fn branch_eps(
        &self,
        z_src_t: &[Latent],
        z_tgt_t: &[Latent],
        t: usize,
        n: usize,
    ) -> Result<(Vec<Latent>, Vec<Latent>)> {
        match &self.score {
            SessionScore::Analytic(s) => {
                let pairs: Vec<(Latent, Latent)> = (0..self.cameras.len())
                    .into_par_iter()
                    .map(|m| {
                        let e_src = s.eps(&z_src_t[m], t, &self.y_src.for_view(m))?;
                        let e_tgt = s.eps(&z_tgt_t[m], t, &self.y_tgt.for_view(m))?;
                        Ok((e_src, e_tgt))
                    })
                    .collect::<Result<_>>()?;
                Ok(pairs.into_iter().unzip())
            }
            SessionScore::Tiny(d) => {
                let hooks = self.hooks(n)?;
                d.edit_pair(z_src_t, z_tgt_t, t, &self.y_src, &self.y_tgt, &hooks)
            }
        }
    }

    pub fn analytic_score(&self) -> Option<&AnalyticGmmScore> {
        match &self.score {
            SessionScore::Analytic(s) => Some(s),
            SessionScore::Tiny(_) => None,
        }
    }
}
