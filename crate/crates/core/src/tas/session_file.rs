//! Session files: everything one editing run needs.
//!
//! ```text
//! scene = source.scene            # Gaussians, cameras and background
//! source_prompt = a blue ball above a garden
//! target_prompt = a red ball above a garden
//! edit_point = 0 0.7 0            # optional, enables the disagreement metric
//!
//! [target_mode]                   # analytic backend: one per mixture mode
//! scene = edited.scene            # only its Gaussians are used
//! weight = 0.6
//!
//! [mask]                          # optional blend mask for one camera
//! camera = cam0
//! image = mask0.pgm
//!
//! [tas]                           # any TasConfig key
//! eta = 0.5
//! seed = 3
//! ```
//!
//! Relative paths are resolved against the session file's directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::TasConfig;
use super::session::{EditSession, TargetMode};
use super::toy::ToyScenario;
use crate::config::{ConfigDoc, SectionReader};
use crate::diffusion::Condition;
use crate::error::{Error, Result};
use crate::imageio::read_mask;
use crate::splat::{load_scene, save_scene, Scene};

const ROOT_KEYS: &[&str] = &["scene", "source_prompt", "target_prompt", "edit_point"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetModeSpec {
    pub scene: PathBuf,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaskSpec {
    pub camera: String,
    pub image: PathBuf,
}

/// Parsed session file with paths resolved.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionSpec {
    pub path: PathBuf,
    pub scene: PathBuf,
    pub source_prompt: String,
    pub target_prompt: String,
    pub edit_point: Option<[f64; 3]>,
    pub target_modes: Vec<TargetModeSpec>,
    pub masks: Vec<MaskSpec>,
    pub config: TasConfig,
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl SessionSpec {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let doc = ConfigDoc::parse(text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        let root = SectionReader::new(&doc, &doc.root);
        root.only(ROOT_KEYS)?;
        let mut spec = SessionSpec {
            path: path.to_path_buf(),
            scene: resolve(base, root.str("scene")?),
            source_prompt: root.str("source_prompt")?.to_string(),
            target_prompt: root.str("target_prompt")?.to_string(),
            edit_point: if root.has("edit_point") {
                Some(root.floats_n::<3>("edit_point")?)
            } else {
                None
            },
            target_modes: Vec::new(),
            masks: Vec::new(),
            config: TasConfig::default(),
        };
        let mut seen_tas = false;
        for s in &doc.sections {
            let r = SectionReader::new(&doc, s);
            match s.name.as_str() {
                "target_mode" => {
                    r.only(&["scene", "weight"])?;
                    spec.target_modes.push(TargetModeSpec {
                        scene: resolve(base, r.str("scene")?),
                        weight: r.parse_or("weight", 1.0)?,
                    });
                }
                "mask" => {
                    r.only(&["camera", "image"])?;
                    spec.masks.push(MaskSpec {
                        camera: r.str("camera")?.to_string(),
                        image: resolve(base, r.str("image")?),
                    });
                }
                "tas" => {
                    if seen_tas {
                        return Err(doc.error(s.line, "more than one [tas] section"));
                    }
                    seen_tas = true;
                    r.only(TasConfig::KEYS)?;
                    spec.config.apply(&r)?;
                }
                other => return Err(doc.error(s.line, format!("unknown section [{other}]"))),
            }
        }
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Read the referenced files and build the session.
    pub fn build(&self) -> Result<(Scene, EditSession)> {
        let scene = load_scene(&self.scene)?;
        let mut modes = Vec::with_capacity(self.target_modes.len());
        for m in &self.target_modes {
            modes.push(TargetMode {
                cloud: load_scene(&m.scene)?.cloud,
                weight: m.weight,
            });
        }
        let mut session = EditSession::new(
            scene.cloud.clone(),
            scene.cameras.clone(),
            scene.background,
            Condition::from_prompt(&self.source_prompt),
            Condition::from_prompt(&self.target_prompt),
            modes,
            self.config.clone(),
        )?;
        for m in &self.masks {
            let idx = scene
                .cameras
                .iter()
                .position(|c| c.id == m.camera)
                .ok_or_else(|| Error::InvalidArgument(format!("mask names unknown camera `{}`", m.camera)))?;
            session = session.with_mask(idx, read_mask(&m.image)?)?;
        }
        if let Some(p) = self.edit_point {
            session = session.with_edit_point(p);
        }
        Ok((scene, session))
    }
}

/// Write the toy scenario as scene files plus a session file into `dir`;
/// returns the session file path.
pub fn write_toy_session(scn: &ToyScenario, dir: &Path, identical: bool) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let scene = |cloud: &crate::splat::GaussianCloud, cameras: bool| Scene {
        cloud: cloud.clone(),
        cameras: if cameras { scn.cameras.clone() } else { Vec::new() },
        background: scn.background,
    };
    save_scene(&scene(&scn.source, true), &dir.join("source.scene"))?;
    save_scene(&scene(&scn.edited, false), &dir.join("edited.scene"))?;
    save_scene(&scene(&scn.alternative, false), &dir.join("alternative.scene"))?;

    let [src_prompt, tgt_prompt] = ToyScenario::PROMPTS;
    let p = scn.edit_point();
    let mut out = String::new();
    writeln!(out, "scene = source.scene").unwrap();
    writeln!(out, "source_prompt = {src_prompt}").unwrap();
    let tgt = if identical { src_prompt } else { tgt_prompt };
    writeln!(out, "target_prompt = {tgt}").unwrap();
    writeln!(out, "edit_point = {} {} {}", p[0], p[1], p[2]).unwrap();
    for (file, w) in [("edited.scene", scn.weights[0]), ("alternative.scene", scn.weights[1])] {
        if w > 0.0 {
            writeln!(out, "\n[target_mode]\nscene = {file}\nweight = {w}").unwrap();
        }
    }
    writeln!(out, "\n[tas]\nseed = 0").unwrap();
    let path = dir.join("session.cfg");
    std::fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
