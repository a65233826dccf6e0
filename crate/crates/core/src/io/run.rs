use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::guidance::{ep_cfg, ep_rescale, EnergyReport, GuidanceParams};
use crate::io::config::ExperimentConfig;
use crate::io::latent_file::{read_latent, write_latent};
use crate::io::trace_csv::{samples_csv, trace_csv};
use crate::latent::RobustWindow;
use crate::metrics::{energy_distance, moment_stats, trace_summary};
use crate::toy::sample_batch;

/// One guidance step on latents exported from an external pipeline.
pub fn run_transform(
    cond_path: impl AsRef<Path>,
    uncond_path: impl AsRef<Path>,
    params: &GuidanceParams,
    out_path: impl AsRef<Path>,
) -> Result<EnergyReport> {
    let x_c = read_latent(cond_path)?;
    let x_u = read_latent(uncond_path)?;
    let (out, report) = ep_cfg(&x_c, &x_u, params)?;
    write_latent(out_path, &out)?;
    Ok(report)
}

/// Energy-preserving rescale of an already guided latent.
pub fn run_rescale(
    cfg_path: impl AsRef<Path>,
    cond_path: impl AsRef<Path>,
    window: RobustWindow,
    out_path: impl AsRef<Path>,
) -> Result<EnergyReport> {
    let x_cfg = read_latent(cfg_path)?;
    let x_c = read_latent(cond_path)?;
    let (out, report) = ep_rescale(&x_cfg, &x_c, window)?;
    write_latent(out_path, &out)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub lambda: f64,
    pub mode: &'static str,
    pub guidance_space: &'static str,
    pub batch: usize,
    pub seed: u64,
    pub steps: usize,
    pub mean_ratio: f64,
    pub max_ratio: f64,
    pub fallback_frac: f64,
    pub terminal_mean: Vec<f64>,
    pub terminal_moment: f64,
    /// Energy distance between terminal samples and fresh draws from the
    /// conditional mixture.
    pub energy_distance: f64,
}

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub dir: PathBuf,
    pub summary: SimulationSummary,
}

/// Directory name used for the outputs of one guidance strength.
pub fn lambda_dir_name(lambda: f64) -> String {
    format!("lambda_{lambda}")
}

/// Runs the batch once per configured strength and writes
/// `trace.csv`, `samples.csv` and `summary.json` under `lambda_<value>/`.
pub fn run_simulate(config: &ExperimentConfig) -> Result<Vec<SimulationOutput>> {
    let mut outputs = Vec::with_capacity(config.lambdas.len());
    for &lambda in &config.lambdas {
        let params = config.params(lambda)?;
        let runs = sample_batch(
            &config.cond,
            &config.uncond,
            &config.schedule,
            &params,
            config.guidance_space,
            config.seed,
            config.batch,
        )?;
        let (samples, logs): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
        let trace = trace_summary(&logs)?;
        let (terminal_mean, terminal_moment) = moment_stats(&samples)?;
        let reference = config.cond.sample_n(config.batch, config.seed);
        let summary = SimulationSummary {
            lambda,
            mode: config.mode.as_str(),
            guidance_space: config.guidance_space.as_str(),
            batch: config.batch,
            seed: config.seed,
            steps: config.schedule.steps(),
            mean_ratio: trace.overall_mean_ratio(),
            max_ratio: trace.overall_max_ratio(),
            fallback_frac: trace.overall_fallback_frac(),
            terminal_mean,
            terminal_moment,
            energy_distance: energy_distance(&samples, &reference)?,
        };

        let dir = config.output_dir.join(lambda_dir_name(lambda));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_text(&dir.join("trace.csv"), &trace_csv(&trace))?;
        write_text(&dir.join("samples.csv"), &samples_csv(&samples))?;
        let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
        write_text(&dir.join("summary.json"), &(json + "\n"))?;
        outputs.push(SimulationOutput { dir, summary });
    }
    Ok(outputs)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
