//! Command implementations behind the `gravinv` binary: configuration
//! loading, the five subcommands and their output files.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use config::RunConfig;
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "gravinv", version, about = "Rest-shape and material inversion from gravity-loaded observations")]
pub struct Cli {
    /// Flat `section.key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (overrides run.threads).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory (overrides paths.output).
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Random seed for noise and probes (overrides run.seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Static equilibrium of the configured mesh under gravity.
    Forward {
        /// Gravity direction `gx,gy,gz` (overrides forward.direction).
        #[arg(long, allow_hyphen_values = true)]
        direction: Option<String>,
    },
    /// Generate the synthetic benchmark and its observations.
    Synth {
        /// True cluster moduli (overrides synth.young).
        #[arg(long)]
        young: Option<String>,
        /// Number of training poses (overrides synth.poses).
        #[arg(long)]
        poses: Option<usize>,
        /// Rotation plane: xy, xz or yz (overrides synth.plane).
        #[arg(long)]
        plane: Option<String>,
        /// Noise standard deviation in meters (overrides synth.noise_std).
        #[arg(long)]
        noise_std: Option<f64>,
    },
    /// Recover the rest shape and cluster moduli.
    Invert,
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        /// Probes per gradient block (overrides gradcheck.probes).
        #[arg(long)]
        probes: Option<usize>,
    },
    /// Score an inversion on held-out poses against the naive baseline.
    Validate {
        /// Held-out poses file (overrides paths.heldout).
        #[arg(long)]
        heldout: Option<PathBuf>,
    },
}

fn set(cfg: &mut RunConfig, key: &str, value: &str) -> Result<(), CliError> {
    let cwd = std::env::current_dir().map_err(CliError::io("."))?;
    cfg.set(key, value, &cwd)
        .map_err(|m| CliError::Config(format!("{key}: {m}")))
}

/// Builds the effective configuration: file (or defaults), then
/// command-line overrides, then checks.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(t) = cli.threads {
        cfg.run.threads = Some(t);
    }
    if let Some(o) = &cli.output {
        cfg.paths.output = o.clone();
    }
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
    }
    match &cli.command {
        Command::Forward { direction: Some(d) } => set(&mut cfg, "forward.direction", d)?,
        Command::Synth {
            young,
            poses,
            plane,
            noise_std,
        } => {
            if let Some(y) = young {
                set(&mut cfg, "synth.young", y)?;
            }
            if let Some(n) = poses {
                cfg.synth.poses = *n;
            }
            if let Some(p) = plane {
                set(&mut cfg, "synth.plane", p)?;
            }
            if let Some(s) = noise_std {
                cfg.synth.noise_std = *s;
            }
        }
        Command::Gradcheck { probes: Some(n) } => cfg.gradcheck.probes = *n,
        Command::Validate { heldout: Some(h) } => set(&mut cfg, "paths.heldout", &h.display().to_string())?,
        _ => {}
    }
    cfg.check()?;
    Ok(cfg)
}

/// Runs one parsed invocation.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve_config(cli)?;
    if let Some(n) = cfg.run.threads {
        // Fails only if a global pool already exists, as in repeated
        // in-process calls; the existing pool is then kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Forward { .. } => commands::cmd_forward(&cfg),
        Command::Synth { .. } => commands::cmd_synth(&cfg),
        Command::Invert => commands::cmd_invert(&cfg),
        Command::Gradcheck { .. } => commands::cmd_gradcheck(&cfg),
        Command::Validate { .. } => commands::cmd_validate(&cfg),
    }
}
