use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use epcfg::io::{run_rescale, run_simulate, run_transform, ExperimentConfig};
use epcfg::report::emit_svg;
use epcfg::{GuidanceMode, GuidanceParams, RobustWindow};

#[derive(Parser)]
#[command(
    name = "epcfg",
    version,
    about = "Energy-preserving classifier-free guidance tools"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply one guidance step to a pair of EPL1 latents.
    Transform {
        #[arg(long)]
        cond: PathBuf,
        #[arg(long)]
        uncond: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "lambda")]
        strength: f64,
        #[arg(long, value_parser = parse_mode)]
        mode: GuidanceMode,
        #[arg(long, default_value_t = 45.0)]
        l: f64,
        #[arg(long, default_value_t = 55.0)]
        h: f64,
        #[arg(long, default_value_t = 0.7)]
        phi: f64,
    },
    /// Rescale an already guided latent to the robust energy of the conditional one.
    Rescale {
        #[arg(long)]
        cfg: PathBuf,
        #[arg(long)]
        cond: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 45.0)]
        l: f64,
        #[arg(long, default_value_t = 55.0)]
        h: f64,
    },
    /// Run the toy diffusion experiment described by a config file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Plot mean_ratio per step from one or more trace CSVs.
    Plot {
        #[arg(long = "in", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_mode(s: &str) -> Result<GuidanceMode, String> {
    s.parse()
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Transform {
            cond,
            uncond,
            out,
            strength,
            mode,
            l,
            h,
            phi,
        } => {
            let params = GuidanceParams::new(strength, mode)?
                .with_window(RobustWindow::new(l, h)?)
                .with_phi(phi)?;
            let report = run_transform(&cond, &uncond, &params, &out)?;
            print_json(&report)?;
        }
        Command::Rescale {
            cfg,
            cond,
            out,
            l,
            h,
        } => {
            let report = run_rescale(&cfg, &cond, RobustWindow::new(l, h)?, &out)?;
            print_json(&report)?;
        }
        Command::Simulate { config } => {
            let text = std::fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let mut config = ExperimentConfig::parse(&text)
                .with_context(|| format!("parsing {}", config.display()))?;
            if let Ok(seed) = std::env::var("EPCFG_SEED") {
                config.seed = seed
                    .trim()
                    .parse()
                    .with_context(|| format!("EPCFG_SEED={seed:?} is not an unsigned integer"))?;
            }
            for output in run_simulate(&config)? {
                eprintln!("wrote {}", output.dir.display());
                print_json(&output.summary)?;
            }
        }
        Command::Plot { inputs, out } => emit_svg(&inputs, &out)?,
    }
    Ok(())
}
