//! Subcommand implementations behind the `splatedit` binary.
//!
//! Every command writes a `manifest.json` into its output directory before
//! doing any work (status `running`) and rewrites it when done (status `ok`
//! or `failed`). `replay` re-executes the recorded invocation.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use splatedit::config::{ConfigDoc, SectionReader};
use splatedit::distillation::{run_distill_demo, DistillDemoConfig, PseudoGtKind};
use splatedit::imageio::write_image;
use splatedit::splat::{load_scene, render, save_scene, Scene};
use splatedit::tas::{
    cross_view_disagreement, psnr, run_variant, toy_scenario, trajectory_steps, write_toy_session,
    EditSession, MetricsLog, SessionSpec, TasRun, Variant,
};
use splatedit::verify::{run_suite, Suite, SuiteReport};
use splatedit::Latent;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Half-width of the window the disagreement metric compares.
pub const DISAGREEMENT_HALF: usize = 6;

/// A fully resolved invocation; enough to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Invocation {
    Render {
        scene: PathBuf,
        camera: String,
    },
    Verify {
        suites: Vec<String>,
        seed: u64,
    },
    Tas {
        session: PathBuf,
        seed: Option<u64>,
    },
    Ablate {
        session: PathBuf,
        variant: String,
        seed: Option<u64>,
    },
    DistillDemo {
        kind: String,
        config: Option<PathBuf>,
        seed: Option<u64>,
    },
    InitToy {
        single_mode: bool,
        identical: bool,
    },
}

impl Invocation {
    pub fn name(&self) -> &'static str {
        match self {
            Invocation::Render { .. } => "render",
            Invocation::Verify { .. } => "verify",
            Invocation::Tas { .. } => "tas",
            Invocation::Ablate { .. } => "ablate",
            Invocation::DistillDemo { .. } => "distill-demo",
            Invocation::InitToy { .. } => "init-toy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub invocation: Invocation,
    /// Effective seed after overrides, when the command uses one.
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    pub threads: usize,
    /// Resolved configuration snapshot.
    pub config: Value,
    /// Output files relative to the output location.
    pub outputs: Vec<String>,
    pub status: String,
    pub summary: Value,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

/// Outcome of a command: `passed = false` maps to exit status 1.
#[derive(Debug)]
pub struct Outcome {
    pub passed: bool,
    pub manifest: RunManifest,
}

/// Collects written files for the manifest.
struct Outputs {
    root: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn new(root: &Path) -> Self {
        Outputs {
            root: root.to_path_buf(),
            files: Vec::new(),
        }
    }

    fn path(&mut self, rel: &str) -> Result<PathBuf> {
        let p = self.root.join(rel);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        self.files.push(rel.to_string());
        Ok(p)
    }

    fn text(&mut self, rel: &str, text: &str) -> Result<()> {
        let p = self.path(rel)?;
        fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
    }

    fn image(&mut self, rel: &str, img: &Latent) -> Result<()> {
        let p = self.path(rel)?;
        write_image(&p, img).with_context(|| format!("writing {}", p.display()))
    }

    fn json(&mut self, rel: &str, v: &impl Serialize) -> Result<()> {
        self.text(rel, &(serde_json::to_string_pretty(v)? + "\n"))
    }
}

/// Run `inv` with outputs under `out` (an image path for `render`, a
/// directory otherwise).
pub fn execute(inv: &Invocation, out: &Path, threads: usize) -> Result<Outcome> {
    let (dir, manifest_path) = match inv {
        Invocation::Render { .. } => {
            let dir = out.parent().map(Path::to_path_buf).unwrap_or_default();
            let mut name = out.file_name().context("render output needs a file name")?.to_os_string();
            name.push(".manifest.json");
            (dir.clone(), dir.join(name))
        }
        _ => (out.to_path_buf(), out.join(MANIFEST_FILE)),
    };
    if !dir.as_os_str().is_empty() {
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut manifest = RunManifest {
        tool: "splatedit".into(),
        version: TOOL_VERSION.into(),
        invocation: inv.clone(),
        seed: None,
        threads,
        config: Value::Null,
        outputs: Vec::new(),
        status: "running".into(),
        summary: Value::Null,
    };
    manifest.write(&manifest_path)?;

    let mut outputs = Outputs::new(&dir);
    let result = match inv {
        Invocation::Render { scene, camera } => cmd_render(scene, camera, out, &mut manifest),
        Invocation::Verify { suites, seed } => cmd_verify(suites, *seed, &mut outputs, &mut manifest),
        Invocation::Tas { session, seed } => {
            cmd_session_run(session, Variant::Full, *seed, &mut outputs, &mut manifest)
        }
        Invocation::Ablate { session, variant, seed } => {
            let v: Variant = variant.parse()?;
            cmd_session_run(session, v, *seed, &mut outputs, &mut manifest)
        }
        Invocation::DistillDemo { kind, config, seed } => {
            cmd_distill_demo(kind, config.as_deref(), *seed, &mut outputs, &mut manifest)
        }
        Invocation::InitToy { single_mode, identical } => {
            cmd_init_toy(*single_mode, *identical, &mut outputs, &mut manifest)
        }
    };
    if let Invocation::Render { .. } = inv {
        outputs.files.push(out.file_name().unwrap_or_default().to_string_lossy().into_owned());
    }
    manifest.outputs = outputs.files;
    match result {
        Ok(passed) => {
            manifest.status = if passed { "ok" } else { "failed" }.into();
            manifest.write(&manifest_path)?;
            Ok(Outcome { passed, manifest })
        }
        Err(e) => {
            manifest.status = "failed".into();
            manifest.summary = json!({ "error": format!("{e:#}") });
            manifest.write(&manifest_path)?;
            Err(e)
        }
    }
}

/// Re-run the invocation recorded in a manifest.
pub fn replay(manifest: &Path, out: &Path, threads: usize) -> Result<Outcome> {
    let m = RunManifest::load(manifest)?;
    if m.tool != "splatedit" {
        bail!("{} is not a splatedit manifest", manifest.display());
    }
    execute(&m.invocation, out, threads)
}

fn cmd_render(scene_path: &Path, camera: &str, out: &Path, manifest: &mut RunManifest) -> Result<bool> {
    let scene = load_scene(scene_path)?;
    let cam = scene.camera(camera)?;
    let img = render(&scene.cloud, cam, scene.background);
    write_image(out, &img).with_context(|| format!("writing {}", out.display()))?;
    let (lo, hi) = img.min_max();
    println!("{}: {}x{} min {lo} max {hi}", out.display(), cam.width, cam.height);
    manifest.summary = json!({ "min": lo, "max": hi, "width": cam.width, "height": cam.height });
    Ok(true)
}

fn cmd_verify(suites: &[String], seed: u64, out: &mut Outputs, manifest: &mut RunManifest) -> Result<bool> {
    let selected: Vec<Suite> = if suites.iter().any(|s| s == "all") {
        Suite::ALL.to_vec()
    } else {
        suites.iter().map(|s| s.parse()).collect::<Result<_, _>>()?
    };
    manifest.seed = Some(seed);
    let mut reports: Vec<SuiteReport> = Vec::new();
    for s in selected {
        let r = run_suite(s, seed)?;
        for c in &r.checks {
            println!(
                "{} {}/{}: max error {:e} (tolerance {:e})",
                if c.passed { "PASS" } else { "FAIL" },
                s,
                c.name,
                c.max_error,
                c.tolerance
            );
        }
        reports.push(r);
    }
    out.json("report.json", &reports)?;
    let passed = reports.iter().all(|r| r.passed);
    manifest.summary = json!({
        "passed": passed,
        "suites": reports.iter().map(|r| json!({ "suite": r.suite, "passed": r.passed })).collect::<Vec<_>>(),
    });
    Ok(passed)
}

fn load_session(path: &Path, seed: Option<u64>) -> Result<(SessionSpec, Scene, EditSession)> {
    let mut spec = SessionSpec::load(path)?;
    if let Some(s) = seed {
        spec.config.seed = s;
    }
    let (scene, session) = spec.build().with_context(|| format!("building session {}", path.display()))?;
    Ok((spec, scene, session))
}

fn csv_float(v: f64) -> String {
    v.to_string()
}

fn trajectory_dump(session: &EditSession, run: &TasRun, out: &mut Outputs) -> Result<()> {
    for (i, step) in run.pseudo_gts.iter().enumerate() {
        for (cam, pgt) in session.cameras.iter().zip(step) {
            out.image(&format!("trajectory/{}/step_{:03}.png", cam.id, i + 1), pgt)?;
        }
    }
    let d = trajectory_steps(&run.pseudo_gts)?;
    let mut csv = String::from("camera,n,t,d_n\n");
    for (cam, steps) in session.cameras.iter().zip(&d) {
        for (i, v) in steps.iter().enumerate() {
            writeln!(csv, "{},{},{},{}", cam.id, i + 1, run.timesteps[i + 1], csv_float(*v)).unwrap();
        }
    }
    out.text("trajectory/steps.csv", &csv)
}

fn cmd_session_run(
    path: &Path,
    variant: Variant,
    seed: Option<u64>,
    out: &mut Outputs,
    manifest: &mut RunManifest,
) -> Result<bool> {
    let (spec, scene, session) = load_session(path, seed)?;
    manifest.seed = Some(spec.config.seed);
    manifest.config = serde_json::to_value(&spec)?;
    let mut log = MetricsLog::default();
    let result = run_variant(&session, variant, &mut log);
    out.text("metrics.csv", &log.to_csv())?;
    let run = result?;

    for (cam, (before, after)) in session
        .cameras
        .iter()
        .zip(session.render_images(&session.source).iter().zip(session.render_images(&run.cloud)))
    {
        out.image(&format!("views/{}_before.png", cam.id), before)?;
        out.image(&format!("views/{}_after.png", cam.id), &after)?;
    }
    trajectory_dump(&session, &run, out)?;
    let final_scene = Scene {
        cloud: run.cloud.clone(),
        ..scene
    };
    let p = out.path("final.scene")?;
    save_scene(&final_scene, &p)?;

    let psnr_db = match session.reference_latents() {
        Some(refs) => Some(
            run.final_views
                .iter()
                .zip(refs)
                .map(|(a, b)| psnr(a, b))
                .collect::<splatedit::Result<Vec<f64>>>()?,
        ),
        None => None,
    };
    let disagreement = match session.edit_centers() {
        Some(c) => Some(cross_view_disagreement(run.final_edits(), &c, DISAGREEMENT_HALF)?),
        None => None,
    };
    let summary = json!({
        "variant": variant,
        "cameras": session.cameras.iter().map(|c| c.id.clone()).collect::<Vec<_>>(),
        "psnr_db": psnr_db,
        "disagreement": disagreement,
        "descent_violations": log.descent_violations(),
        "inner_steps_total": run.timesteps.len() * session.config.inner_steps,
    });
    out.json("summary.json", &summary)?;
    if let Some(p) = &psnr_db {
        let cells: Vec<String> = p.iter().map(|v| format!("{v:.2}")).collect();
        println!("psnr vs reference (dB): {}", cells.join(" "));
    }
    if let Some(d) = disagreement {
        println!("cross-view disagreement: {d:.6}");
    }
    manifest.summary = summary;
    Ok(true)
}

fn cmd_distill_demo(
    kind: &str,
    config: Option<&Path>,
    seed: Option<u64>,
    out: &mut Outputs,
    manifest: &mut RunManifest,
) -> Result<bool> {
    let mut cfg = DistillDemoConfig {
        kind: kind.parse::<PseudoGtKind>()?,
        ..DistillDemoConfig::default()
    };
    if let Some(p) = config {
        let doc = ConfigDoc::load(p)?;
        cfg.apply(&SectionReader::new(&doc, &doc.root))?;
        cfg.kind = kind.parse()?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    manifest.seed = Some(cfg.seed);
    manifest.config = serde_json::to_value(&cfg)?;
    let r = run_distill_demo(&cfg)?;
    out.image("target.png", &r.target)?;
    out.image("source.png", &r.source)?;
    out.image("fixed_point.png", &r.fixed_point)?;
    out.image("final.png", &r.final_latent)?;
    for (step, frame) in &r.frames {
        out.image(&format!("frames/step_{step:04}.png"), frame)?;
    }
    let mut csv = String::from("step,t,recon_loss,dist_to_target,oracle_gap\n");
    for h in &r.history {
        writeln!(
            csv,
            "{},{},{},{},{}",
            h.step,
            h.t,
            csv_float(h.recon_loss),
            csv_float(h.dist_to_target),
            csv_float(h.oracle_gap)
        )
        .unwrap();
    }
    out.text("loss.csv", &csv)?;
    let summary = json!({
        "kind": cfg.kind,
        "final_distance": r.final_distance(),
        "max_oracle_gap": r.max_oracle_gap(),
    });
    out.json("summary.json", &summary)?;
    println!(
        "{}: distance to fixed point {:e}, max oracle gap {:e}",
        cfg.kind,
        r.final_distance(),
        r.max_oracle_gap()
    );
    manifest.summary = summary;
    Ok(true)
}

fn cmd_init_toy(single_mode: bool, identical: bool, out: &mut Outputs, manifest: &mut RunManifest) -> Result<bool> {
    let mut scn = toy_scenario();
    if single_mode {
        scn = scn.single_mode();
    }
    let path = write_toy_session(&scn, &out.root, identical)?;
    for f in ["source.scene", "edited.scene", "alternative.scene", "session.cfg"] {
        out.files.push(f.into());
    }
    println!("{}", path.display());
    manifest.summary = json!({ "session": path });
    Ok(true)
}
