//! Plain-text experiment configuration.
//!
//! One `key = value` pair per line; `#` starts a comment. Unknown and
//! repeated keys are errors. Mixtures are written as `;`-separated
//! components of the form `weight:mean:std`, where `mean` is a
//! comma-separated vector:
//!
//! ```text
//! lambda = 1, 5, 9, 12
//! mode = ep
//! cond = 1.0:2.0:0.5
//! uncond = 0.5:2.0:0.5; 0.5:-2.0:0.5
//! ```

use std::collections::HashMap;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::guidance::{GuidanceMode, GuidanceParams, DEFAULT_PHI};
use crate::latent::RobustWindow;
use crate::toy::{vp_schedule, DiffusionSchedule, GuidanceSpace, MixtureModel};

const KEYS: &[&str] = &[
    "lambda",
    "mode",
    "l",
    "h",
    "phi",
    "steps",
    "beta_min",
    "beta_max",
    "cond",
    "uncond",
    "batch",
    "seed",
    "guidance_space",
    "output_dir",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// One simulation per guidance strength.
    pub lambdas: Vec<f64>,
    pub mode: GuidanceMode,
    pub window: RobustWindow,
    pub phi: f64,
    pub schedule: DiffusionSchedule,
    pub cond: MixtureModel,
    pub uncond: MixtureModel,
    pub batch: usize,
    pub seed: u64,
    pub guidance_space: GuidanceSpace,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: HashMap<&str, (usize, &str)> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: line_no,
                message: format!("expected key = value, got {line:?}"),
            })?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(Error::Config {
                    line: line_no,
                    message: format!("unknown key {key:?}"),
                });
            }
            if entries.insert(key, (line_no, value.trim())).is_some() {
                return Err(Error::Config {
                    line: line_no,
                    message: format!("duplicate key {key:?}"),
                });
            }
        }

        let fields = Fields { entries };
        let lambdas = fields.required("lambda", |v| {
            let list = v
                .split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|e| e.to_string()))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            for &l in &list {
                GuidanceParams::new(l, GuidanceMode::Plain).map_err(|e| e.to_string())?;
            }
            Ok(list)
        })?;
        let mode = fields.optional("mode", GuidanceMode::EnergyPreserving, |v| v.parse())?;
        let l = fields.optional("l", RobustWindow::default().low(), parse_f64)?;
        let h = fields.optional("h", RobustWindow::default().high(), parse_f64)?;
        let window = RobustWindow::new(l, h).map_err(|e| Error::Config {
            line: fields.line("h").or(fields.line("l")).unwrap_or(0),
            message: e.to_string(),
        })?;
        let phi = fields.optional("phi", DEFAULT_PHI, |v| {
            let phi = parse_f64(v)?;
            if !(0.0..=1.0).contains(&phi) {
                return Err(format!("phi {phi} outside [0, 1]"));
            }
            Ok(phi)
        })?;
        let steps = fields.optional("steps", 50usize, |v| v.parse().map_err(|e| format!("{e}")))?;
        let beta_min = fields.optional("beta_min", 1e-4, parse_f64)?;
        let beta_max = fields.optional("beta_max", 0.2, parse_f64)?;
        let schedule = vp_schedule(steps, beta_min, beta_max).map_err(|e| Error::Config {
            line: fields
                .line("steps")
                .or(fields.line("beta_max"))
                .unwrap_or(0),
            message: e.to_string(),
        })?;
        let cond = fields.required("cond", parse_mixture)?;
        let uncond = fields.required("uncond", parse_mixture)?;
        if cond.dim() != uncond.dim() {
            return Err(Error::Config {
                line: fields.line("uncond").unwrap_or(0),
                message: format!(
                    "cond is {}-dimensional but uncond is {}-dimensional",
                    cond.dim(),
                    uncond.dim()
                ),
            });
        }
        let batch = fields.optional("batch", 1024usize, |v| match v.parse::<usize>() {
            Ok(0) => Err("batch must be >= 1".to_string()),
            Ok(b) => Ok(b),
            Err(e) => Err(e.to_string()),
        })?;
        let seed = fields.optional("seed", 0u64, |v| v.parse().map_err(|e| format!("{e}")))?;
        let guidance_space =
            fields.optional("guidance_space", GuidanceSpace::Epsilon, |v| v.parse())?;
        let output_dir = fields.optional("output_dir", PathBuf::from("out"), |v| {
            if v.is_empty() {
                return Err("empty output_dir".to_string());
            }
            Ok(PathBuf::from(v))
        })?;

        Ok(Self {
            lambdas,
            mode,
            window,
            phi,
            schedule,
            cond,
            uncond,
            batch,
            seed,
            guidance_space,
            output_dir,
        })
    }

    pub fn params(&self, lambda: f64) -> Result<GuidanceParams> {
        GuidanceParams::new(lambda, self.mode)?
            .with_window(self.window)
            .with_phi(self.phi)
    }
}

struct Fields<'a> {
    entries: HashMap<&'a str, (usize, &'a str)>,
}

impl Fields<'_> {
    fn line(&self, key: &str) -> Option<usize> {
        self.entries.get(key).map(|(line, _)| *line)
    }

    fn optional<T>(
        &self,
        key: &str,
        default: T,
        parse: impl Fn(&str) -> std::result::Result<T, String>,
    ) -> Result<T> {
        if self.entries.contains_key(key) {
            self.required(key, parse)
        } else {
            Ok(default)
        }
    }

    fn required<T>(
        &self,
        key: &str,
        parse: impl Fn(&str) -> std::result::Result<T, String>,
    ) -> Result<T> {
        let &(line, value) = self.entries.get(key).ok_or_else(|| Error::Config {
            line: 0,
            message: format!("missing required key {key:?}"),
        })?;
        parse(value).map_err(|message| Error::Config {
            line,
            message: format!("{key}: {message}"),
        })
    }
}

fn parse_f64(v: &str) -> std::result::Result<f64, String> {
    let x: f64 = v.parse().map_err(|e| format!("{v:?}: {e}"))?;
    if !x.is_finite() {
        return Err(format!("{v:?} is not finite"));
    }
    Ok(x)
}

fn parse_mixture(v: &str) -> std::result::Result<MixtureModel, String> {
    let mut weights = Vec::new();
    let mut means = Vec::new();
    let mut stds = Vec::new();
    for component in v.split(';').map(str::trim).filter(|c| !c.is_empty()) {
        let parts: Vec<&str> = component.split(':').collect();
        let [w, mean, std] = parts[..] else {
            return Err(format!("component {component:?} is not weight:mean:std"));
        };
        weights.push(parse_f64(w.trim())?);
        means.push(
            mean.split(',')
                .map(|m| parse_f64(m.trim()))
                .collect::<std::result::Result<Vec<_>, _>>()?,
        );
        stds.push(parse_f64(std.trim())?);
    }
    MixtureModel::new(weights, means, stds).map_err(|e| e.to_string())
}
