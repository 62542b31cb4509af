//! Scene files: a `background` key followed by `[gaussian]` and `[camera]`
//! sections.
//!
//! ```text
//! background = 0 0 0
//! [gaussian]
//! position = 0 0 0
//! scale = 0.2            # or: log_scale = ...
//! color = 1 0 0
//! opacity = 0.8          # or: logit_opacity = ...
//! [camera]
//! id = front
//! rotation = 1 0 0 0 1 0 0 0 1
//! translation = 0 0 0
//! extent = 2
//! resolution = 64 64     # width height
//! ```
//!
//! An orbit camera may be given with `azimuth`/`elevation` instead of
//! `rotation`. Written files use `log_scale`/`logit_opacity` so that a
//! write/read round trip is exact.

use std::fmt::Write as _;
use std::path::Path;

use super::camera::Camera;
use super::cloud::{logit, Gaussian, GaussianCloud};
use crate::config::{ConfigDoc, SectionReader};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub cloud: GaussianCloud,
    pub cameras: Vec<Camera>,
    pub background: [f64; 3],
}

impl Scene {
    pub fn camera(&self, id: &str) -> Result<&Camera> {
        self.cameras.iter().find(|c| c.id == id).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "no camera `{id}` (available: {})",
                self.cameras
                    .iter()
                    .map(|c| c.id.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            ))
        })
    }
}

fn gaussian_from(r: &SectionReader) -> Result<Gaussian> {
    r.only(&[
        "position",
        "scale",
        "log_scale",
        "color",
        "opacity",
        "logit_opacity",
    ])?;
    let line = r.section.line;
    let position = r.floats_n::<3>("position")?;
    let log_scale = if r.has("log_scale") {
        r.parse::<f64>("log_scale")?
    } else {
        let s: f64 = r.parse("scale")?;
        if !(s > 0.0) {
            return Err(Error::Parse {
                path: r.path.to_string(),
                line: r.entry("scale").map(|e| e.line).unwrap_or(line),
                msg: format!("scale must be positive, got {s}"),
            });
        }
        s.ln()
    };
    let color = r.floats_n::<3>("color")?;
    let logit_opacity = if r.has("logit_opacity") {
        r.parse::<f64>("logit_opacity")?
    } else {
        let o: f64 = r.parse("opacity")?;
        if !(o > 0.0 && o < 1.0) {
            return Err(Error::Parse {
                path: r.path.to_string(),
                line: r.entry("opacity").map(|e| e.line).unwrap_or(line),
                msg: format!("opacity must lie in (0, 1), got {o}"),
            });
        }
        logit(o)
    };
    let g = Gaussian {
        position,
        log_scale,
        color,
        logit_opacity,
    };
    if !(position.iter().chain(&color).all(|v| v.is_finite())
        && log_scale.is_finite()
        && logit_opacity.is_finite())
    {
        return Err(Error::Parse {
            path: r.path.to_string(),
            line,
            msg: "non-finite primitive parameter".into(),
        });
    }
    Ok(g)
}

fn camera_from(r: &SectionReader, index: usize) -> Result<Camera> {
    r.only(&[
        "id",
        "rotation",
        "azimuth",
        "elevation",
        "translation",
        "extent",
        "resolution",
    ])?;
    let line = r.section.line;
    let id = if r.has("id") {
        r.str("id")?.to_string()
    } else {
        format!("cam{index}")
    };
    let res = r.usizes("resolution")?;
    if res.len() != 2 {
        return Err(Error::Parse {
            path: r.path.to_string(),
            line,
            msg: "resolution needs `width height`".into(),
        });
    }
    let extent: f64 = r.parse("extent")?;
    let translation = if r.has("translation") {
        r.floats_n::<3>("translation")?
    } else {
        [0.0; 3]
    };
    let wrap = |e: Error| match e {
        Error::InvalidArgument(msg) => Error::Parse {
            path: r.path.to_string(),
            line,
            msg,
        },
        other => other,
    };
    let mut cam = if r.has("rotation") {
        let m = r.floats_n::<9>("rotation")?;
        let rot = [[m[0], m[1], m[2]], [m[3], m[4], m[5]], [m[6], m[7], m[8]]];
        Camera::new(id, rot, translation, extent, res[0], res[1]).map_err(wrap)?
    } else {
        let az: f64 = r.parse("azimuth")?;
        let el: f64 = r.parse_or("elevation", 0.0)?;
        Camera::orbit(id, az, el, extent, res[0], res[1]).map_err(wrap)?
    };
    cam.translation = translation;
    Ok(cam)
}

pub fn parse_scene(text: &str, path: &str) -> Result<Scene> {
    let doc = ConfigDoc::parse(text, path)?;
    scene_from_doc(&doc)
}

pub fn scene_from_doc(doc: &ConfigDoc) -> Result<Scene> {
    let root = SectionReader::new(doc, &doc.root);
    root.only(&["background"])?;
    let background = if root.has("background") {
        root.floats_n::<3>("background")?
    } else {
        [0.0; 3]
    };
    let mut gaussians = Vec::new();
    let mut cameras: Vec<Camera> = Vec::new();
    for s in &doc.sections {
        let r = SectionReader::new(doc, s);
        match s.name.as_str() {
            "gaussian" => gaussians.push(gaussian_from(&r)?),
            "camera" => {
                let cam = camera_from(&r, cameras.len())?;
                if cameras.iter().any(|c| c.id == cam.id) {
                    return Err(doc.error(s.line, format!("duplicate camera id `{}`", cam.id)));
                }
                cameras.push(cam);
            }
            other => return Err(doc.error(s.line, format!("unknown section [{other}]"))),
        }
    }
    Ok(Scene {
        cloud: GaussianCloud::new(gaussians),
        cameras,
        background,
    })
}

pub fn load_scene(path: &Path) -> Result<Scene> {
    scene_from_doc(&ConfigDoc::load(path)?)
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn scene_to_string(scene: &Scene) -> String {
    let mut out = String::new();
    writeln!(out, "background = {}", join(&scene.background)).unwrap();
    for g in &scene.cloud.gaussians {
        writeln!(out, "\n[gaussian]").unwrap();
        writeln!(out, "position = {}", join(&g.position)).unwrap();
        writeln!(out, "log_scale = {}", g.log_scale).unwrap();
        writeln!(out, "color = {}", join(&g.color)).unwrap();
        writeln!(out, "logit_opacity = {}", g.logit_opacity).unwrap();
    }
    for c in &scene.cameras {
        writeln!(out, "\n[camera]").unwrap();
        writeln!(out, "id = {}", c.id).unwrap();
        let flat: Vec<f64> = c.rotation.iter().flatten().copied().collect();
        writeln!(out, "rotation = {}", join(&flat)).unwrap();
        writeln!(out, "translation = {}", join(&c.translation)).unwrap();
        writeln!(out, "extent = {}", c.ortho_extent).unwrap();
        writeln!(out, "resolution = {} {}", c.width, c.height).unwrap();
    }
    out
}

pub fn save_scene(scene: &Scene, path: &Path) -> Result<()> {
    std::fs::write(path, scene_to_string(scene)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCENE: &str = "\
background = 0.1 0.1 0.1
[gaussian]
position = 0 0.5 0
scale = 0.2
color = 1 0 0
opacity = 0.8
[camera]
id = side
azimuth = 90
extent = 2
resolution = 16 8
";

    #[test]
    fn parses_and_round_trips() {
        let s = parse_scene(SCENE, "s").unwrap();
        assert_eq!(s.cloud.len(), 1);
        assert!((s.cloud.gaussians[0].opacity() - 0.8).abs() < 1e-15);
        assert_eq!(s.camera("side").unwrap().width, 16);
        let again = parse_scene(&scene_to_string(&s), "s2").unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn reports_bad_lines() {
        let bad = SCENE.replace("opacity = 0.8", "opacity = 1.5");
        match parse_scene(&bad, "s") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("{other:?}"),
        }
        let bad = SCENE.replace("color = 1 0 0", "color = 1 0");
        assert!(matches!(parse_scene(&bad, "s"), Err(Error::Parse { line: 5, .. })));
        let bad = format!("{SCENE}[light]\n");
        assert!(parse_scene(&bad, "s").is_err());
        let bad = SCENE.replace("azimuth = 90", "rotation = 2 0 0 0 1 0 0 0 1");
        assert!(matches!(parse_scene(&bad, "s"), Err(Error::Parse { line: 7, .. })));
    }

    #[test]
    fn unknown_camera() {
        let s = parse_scene(SCENE, "s").unwrap();
        assert!(s.camera("front").is_err());
    }
}
