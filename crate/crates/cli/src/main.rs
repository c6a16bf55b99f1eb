use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use voroperc::experiment::{self, ExperimentSpec, PRESETS};
use voroperc::{selftest, Error};

#[derive(Parser)]
#[command(name = "voroperc", version, about = "Poisson-Voronoi percolation experiments")]
struct Cli {
    /// Master seed; overrides the seed in the spec.
    #[arg(long, global = true, env = "VOROPERC_SEED")]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory for `run`, output file for `plot`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment spec and write a result bundle.
    Run {
        /// JSON spec file.
        spec: Option<PathBuf>,
        /// Start from a named preset instead of a file.
        #[arg(long, conflicts_with = "spec")]
        preset: Option<String>,
        /// Override the replica count.
        #[arg(long)]
        replicas: Option<usize>,
    },
    /// Render one curve of a bundle as SVG.
    Plot {
        bundle: PathBuf,
        curve: String,
        /// Further bundles drawn on the same axes.
        #[arg(long)]
        overlay: Vec<PathBuf>,
    },
    /// Geometry, Mecke and oracle checks.
    Selftest,
    /// List presets and curve ids.
    List,
}

enum Failure {
    Validation(String),
    Selftest,
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<Error>() {
            Some(Error::Validation(_) | Error::InvalidInput(_) | Error::Json(_)) => Failure::Validation(format!("{e:#}")),
            _ => Failure::Other(e),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::new(e).into()
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Run { spec, preset, replicas } => {
            let mut s = match (spec, preset) {
                (Some(path), None) => {
                    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    ExperimentSpec::from_json(&text)?
                }
                (None, Some(name)) => ExperimentSpec::preset(&name)?,
                _ => return Err(Failure::Validation("give a spec file or --preset".into())),
            };
            if let Some(seed) = cli.seed {
                s.seed = seed;
            }
            if let Some(n) = replicas {
                s.replicas = n;
            }
            let out = cli
                .out
                .or_else(|| s.out.clone())
                .unwrap_or_else(|| PathBuf::from("results").join(&s.name));
            let manifest = experiment::run(&s, &out)?;
            print!("{}", experiment::summary(&manifest));
            println!("bundle written to {}", out.display());
            if !manifest.complete {
                return Err(Failure::Other(anyhow::anyhow!("bundle incomplete")));
            }
        }
        Command::Plot { bundle, curve, overlay } => {
            let svg = experiment::plot(&bundle, &curve, &overlay)?;
            let out = cli.out.unwrap_or_else(|| bundle.join(format!("{curve}.svg")));
            fs::write(&out, svg).with_context(|| format!("writing {}", out.display()))?;
            println!("{}", out.display());
        }
        Command::Selftest => {
            let checks = selftest::run_all(cli.seed.unwrap_or(0))?;
            for c in &checks {
                println!("{}", c.line());
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            println!("{} checks, {failed} failed", checks.len());
            if failed > 0 {
                return Err(Failure::Selftest);
            }
        }
        Command::List => {
            println!("presets: {}", PRESETS.join(", "));
            println!("curves: {}", experiment::CURVES.join(", "));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Selftest) => ExitCode::from(3),
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
