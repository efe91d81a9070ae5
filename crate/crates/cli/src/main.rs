//! `splatgen`: image- or text-to-3D with Gaussian splatting, mesh extraction and texture refinement.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::CliError;
use config::{parse_entries, RunConfig};

#[derive(Parser)]
#[command(name = "splatgen", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Stage 1: optimize a Gaussian cloud and write cloud.ply, trace.csv and manifest.txt.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        /// zero | oracle:<scene.ply> | remote:<url>
        #[arg(long)]
        guidance: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Extract a mesh (mesh.obj) from a cloud's density isosurface.
    ExtractMesh {
        cloud: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Density level of the isosurface [default: 1].
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Stage 2: bake the cloud into a UV texture on the mesh and refine it.
    RefineTexture {
        cloud: PathBuf,
        mesh: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        guidance: Option<String>,
        /// Refinement steps [default: 50].
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Render a cloud (.ply) or textured mesh (.obj) from evenly spaced azimuths.
    Render {
        asset: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common, mut flags: Vec<(&'static str, String)>) -> Result<RunConfig, CliError> {
    let entries = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Validation(vec![format!("config {}: {e}", path.display())]))?;
            parse_entries(&text).map_err(CliError::Validation)?
        }
        None => Vec::new(),
    };
    if let Some(out) = &common.out {
        flags.push(("out", out.display().to_string()));
    }
    RunConfig::resolve(&entries, &flags).map_err(CliError::Validation)
}

fn flag<T: ToString>(key: &'static str, v: &Option<T>) -> Option<(&'static str, String)> {
    v.as_ref().map(|v| (key, v.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate { common, seed, guidance, steps } => {
            let flags = [flag("seed", &seed), flag("guidance", &guidance), flag("steps", &steps)];
            commands::generate(&load_config(&common, flags.into_iter().flatten().collect())?)
        }
        Command::ExtractMesh { cloud, common, threshold } => {
            let cfg = load_config(&common, flag("threshold", &threshold).into_iter().collect())?;
            commands::extract_mesh(&cfg, &cloud)
        }
        Command::RefineTexture { cloud, mesh, common, seed, guidance, steps } => {
            let flags = [flag("seed", &seed), flag("guidance", &guidance), flag("refine_steps", &steps)];
            commands::refine(&load_config(&common, flags.into_iter().flatten().collect())?, &cloud, &mesh)
        }
        Command::Render { asset, common } => commands::render_views(&load_config(&common, Vec::new())?, &asset),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
