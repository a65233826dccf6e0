//! On-disk formats and the drivers behind the CLI.

pub mod config;
pub mod latent_file;
pub mod run;
pub mod trace_csv;

pub use config::ExperimentConfig;
pub use latent_file::{decode_latent, encode_latent, read_latent, write_latent};
pub use run::{
    lambda_dir_name, run_rescale, run_simulate, run_transform, SimulationOutput, SimulationSummary,
};
pub use trace_csv::{parse_trace_csv, samples_csv, trace_csv};
