use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use splatedit::distillation::PseudoGtKind;
use splatedit::tas::Variant;
use splatedit::verify::Suite;
use splatedit_cli::{execute, replay, Invocation};

/// Multi-view Gaussian splat editing laboratory.
#[derive(Parser)]
#[command(name = "splatedit", version)]
struct Cli {
    /// Override the seed of the run's configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (results do not depend on this).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    /// Output location; defaults to `$SPLATEDIT_OUT/<command>`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render one camera of a scene file to a PPM/PNG image.
    Render {
        scene: PathBuf,
        camera: String,
    },
    /// Run property suites; exit status 0 iff every check passes.
    Verify {
        /// Suite names, or `all`.
        #[arg(default_value = "all", value_parser = parse_suite)]
        suites: Vec<String>,
    },
    /// Run the editing loop described by a session file.
    Tas {
        session: PathBuf,
    },
    /// Run an ablated variant of the editing loop.
    Ablate {
        session: PathBuf,
        /// `no-tas` or `no-vcac`.
        #[arg(value_parser = parse_variant)]
        variant: String,
    },
    /// Annealed pseudo-ground-truth reconstruction of a single 2D latent.
    DistillDemo {
        /// `sds`, `vsd`, `dds`, `ism` or `nfsd`.
        #[arg(value_parser = parse_kind)]
        kind: String,
        /// Optional `key = value` file overriding demo settings.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write the toy editing scenario as scene and session files.
    InitToy {
        /// Use only the reference edit as target mode.
        #[arg(long)]
        single_mode: bool,
        /// Use the source prompt as target prompt.
        #[arg(long)]
        identical: bool,
    },
    /// Re-run the invocation recorded in a manifest.
    Replay {
        manifest: PathBuf,
    },
}

fn parse_suite(s: &str) -> Result<String, String> {
    if s == "all" {
        return Ok(s.into());
    }
    s.parse::<Suite>().map(|_| s.to_string()).map_err(|e| e.to_string())
}

fn parse_variant(s: &str) -> Result<String, String> {
    match s.parse::<Variant>() {
        Ok(Variant::Full) => Err("ablation variant must be `no-tas` or `no-vcac`".into()),
        Ok(_) => Ok(s.into()),
        Err(e) => Err(e.to_string()),
    }
}

fn parse_kind(s: &str) -> Result<String, String> {
    s.parse::<PseudoGtKind>().map(|_| s.to_string()).map_err(|e| e.to_string())
}

fn default_out(name: &str) -> PathBuf {
    let root = std::env::var_os("SPLATEDIT_OUT").map_or_else(|| PathBuf::from("runs"), PathBuf::from);
    root.join(name)
}

fn absolute(p: PathBuf) -> PathBuf {
    std::path::absolute(&p).unwrap_or(p)
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let threads = cli.threads;
    if let Command::Replay { manifest } = &cli.command {
        let out = cli.out.clone().unwrap_or_else(|| default_out("replay"));
        return Ok(replay(manifest, &out, threads)?.passed);
    }
    let inv = match cli.command {
        Command::Render { scene, camera } => Invocation::Render {
            scene: absolute(scene),
            camera,
        },
        Command::Verify { suites } => Invocation::Verify {
            suites,
            seed: cli.seed.unwrap_or(0),
        },
        Command::Tas { session } => Invocation::Tas {
            session: absolute(session),
            seed: cli.seed,
        },
        Command::Ablate { session, variant } => Invocation::Ablate {
            session: absolute(session),
            variant,
            seed: cli.seed,
        },
        Command::DistillDemo { kind, config } => Invocation::DistillDemo {
            kind,
            config: config.map(absolute),
            seed: cli.seed,
        },
        Command::InitToy { single_mode, identical } => Invocation::InitToy { single_mode, identical },
        Command::Replay { .. } => unreachable!(),
    };
    let out = match (&cli.out, &inv) {
        (Some(o), _) => o.clone(),
        (None, Invocation::Render { camera, .. }) => default_out("render").join(format!("{camera}.png")),
        (None, i) => default_out(i.name()),
    };
    Ok(execute(&inv, Path::new(&out), threads)?.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(2);
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    match pool.install(|| run(cli)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
