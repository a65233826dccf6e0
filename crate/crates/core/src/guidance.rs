//! Guidance kernels: plain CFG, the energy-preserving rescale, and the
//! standard-deviation rescale baseline.
//!
//! All kernels are agnostic to what the predictions parameterize (noise,
//! clean sample or velocity); they only see two same-shaped tensors.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::latent::{exact_sum, robust_energy, LatentTensor, RobustEnergyResult, RobustWindow};

/// Energies at or below this are treated as zero; the rescale is skipped.
pub const EPS_ZERO: f64 = 1e-30;

/// Default interpolation weight of the std-rescale baseline.
pub const DEFAULT_PHI: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceMode {
    /// Classifier-free guidance without correction.
    Plain,
    /// CFG rescaled to the conditional prediction's robust energy.
    EnergyPreserving,
    /// Comparison arm: std-matched rescale interpolated with plain CFG.
    StdRescale,
}

impl GuidanceMode {
    /// Short name used on the command line and in configs.
    pub fn as_str(&self) -> &'static str {
        match self {
            GuidanceMode::Plain => "plain",
            GuidanceMode::EnergyPreserving => "ep",
            GuidanceMode::StdRescale => "std",
        }
    }
}

impl std::str::FromStr for GuidanceMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "plain" => Ok(GuidanceMode::Plain),
            "ep" => Ok(GuidanceMode::EnergyPreserving),
            "std" => Ok(GuidanceMode::StdRescale),
            other => Err(format!(
                "unknown guidance mode {other:?} (expected plain, ep or std)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceParams {
    strength: f64,
    mode: GuidanceMode,
    window: RobustWindow,
    phi: f64,
}

impl GuidanceParams {
    /// Parameters with the default window (45, 55) and phi = 0.7.
    pub fn new(strength: f64, mode: GuidanceMode) -> Result<Self> {
        check_strength(strength)?;
        Ok(Self {
            strength,
            mode,
            window: RobustWindow::default(),
            phi: DEFAULT_PHI,
        })
    }

    pub fn with_window(mut self, window: RobustWindow) -> Self {
        self.window = window;
        self
    }

    pub fn with_phi(mut self, phi: f64) -> Result<Self> {
        check_phi(phi)?;
        self.phi = phi;
        Ok(self)
    }

    pub fn strength(&self) -> f64 {
        self.strength
    }

    pub fn mode(&self) -> GuidanceMode {
        self.mode
    }

    pub fn window(&self) -> RobustWindow {
        self.window
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }
}

fn check_strength(strength: f64) -> Result<()> {
    // Also rejects NaN.
    if !(strength >= 1.0 && strength.is_finite()) {
        return Err(Error::InvalidStrength(strength));
    }
    Ok(())
}

fn check_phi(phi: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&phi) {
        return Err(Error::InvalidPhi(phi));
    }
    Ok(())
}

/// Robust energies of the conditional and guided predictions and the factor
/// applied to the guided one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyReport {
    pub e_c: f64,
    pub e_cfg: f64,
    pub scale: f64,
    pub window_c: (f64, f64),
    pub window_cfg: (f64, f64),
    pub fallback_used: bool,
}

impl EnergyReport {
    fn new(
        c: &RobustEnergyResult,
        cfg: &RobustEnergyResult,
        scale: f64,
        fallback_used: bool,
    ) -> Self {
        Self {
            e_c: c.energy,
            e_cfg: cfg.energy,
            scale,
            window_c: (c.p_low, c.p_high),
            window_cfg: (cfg.p_low, cfg.p_high),
            fallback_used,
        }
    }
}

/// `x_c + (strength - 1) * (x_c - x_u)`.
pub fn cfg_combine(x_c: &LatentTensor, x_u: &LatentTensor, strength: f64) -> Result<LatentTensor> {
    x_c.same_shape(x_u)?;
    check_strength(strength)?;
    if strength == 1.0 {
        return Ok(x_c.clone());
    }
    let gain = strength - 1.0;
    x_c.zip_checked(x_u, |c, u| c + gain * (c - u))
}

/// Rescales `x_cfg` so its robust energy matches that of `x_c`.
///
/// Returns `x_cfg` untouched with `fallback_used` set when either energy is
/// at or below [`EPS_ZERO`] or the ratio is not a finite positive number.
pub fn ep_rescale(
    x_cfg: &LatentTensor,
    x_c: &LatentTensor,
    window: RobustWindow,
) -> Result<(LatentTensor, EnergyReport)> {
    x_cfg.same_shape(x_c)?;
    let c = robust_energy(x_c, window);
    let cfg = robust_energy(x_cfg, window);

    let scale = (c.energy / cfg.energy).sqrt();
    if cfg.energy <= EPS_ZERO || c.energy <= EPS_ZERO || !(scale.is_finite() && scale > 0.0) {
        return Ok((x_cfg.clone(), EnergyReport::new(&c, &cfg, 1.0, true)));
    }
    let report = EnergyReport::new(&c, &cfg, scale, false);
    if scale == 1.0 {
        return Ok((x_cfg.clone(), report));
    }
    Ok((x_cfg.scaled(scale)?, report))
}

/// Population standard deviation over all elements.
fn population_std(x: &LatentTensor) -> f64 {
    let n = x.len() as f64;
    let mean = exact_sum(x.data().iter().copied()) / n;
    (exact_sum(x.data().iter().map(|v| (v - mean) * (v - mean))) / n).sqrt()
}

/// `sigma_c / sigma_cfg`, or `None` when the guided prediction has no spread.
fn std_ratio(x_cfg: &LatentTensor, x_c: &LatentTensor) -> Option<f64> {
    let sigma_cfg = population_std(x_cfg);
    if sigma_cfg <= EPS_ZERO {
        return None;
    }
    Some(population_std(x_c) / sigma_cfg)
}

/// Baseline: rescale `x_cfg` to the std of `x_c`, then blend with `x_cfg`
/// using weight `phi` on the rescaled term.
pub fn std_rescale_baseline(
    x_cfg: &LatentTensor,
    x_c: &LatentTensor,
    phi: f64,
) -> Result<LatentTensor> {
    x_cfg.same_shape(x_c)?;
    check_phi(phi)?;
    let ratio = match std_ratio(x_cfg, x_c) {
        Some(r) if phi > 0.0 && r != 1.0 => r,
        _ => return Ok(x_cfg.clone()),
    };
    x_cfg.map_checked(|v| phi * (ratio * v) + (1.0 - phi) * v)
}

/// Plain CFG followed by the correction selected in `params`.
pub fn ep_cfg(
    x_c: &LatentTensor,
    x_u: &LatentTensor,
    params: &GuidanceParams,
) -> Result<(LatentTensor, EnergyReport)> {
    let x_cfg = cfg_combine(x_c, x_u, params.strength)?;
    match params.mode {
        GuidanceMode::EnergyPreserving => ep_rescale(&x_cfg, x_c, params.window),
        GuidanceMode::Plain => {
            let c = robust_energy(x_c, params.window);
            let cfg = robust_energy(&x_cfg, params.window);
            Ok((x_cfg, EnergyReport::new(&c, &cfg, 1.0, false)))
        }
        GuidanceMode::StdRescale => {
            let c = robust_energy(x_c, params.window);
            let cfg = robust_energy(&x_cfg, params.window);
            let out = std_rescale_baseline(&x_cfg, x_c, params.phi)?;
            let report = match std_ratio(&x_cfg, x_c) {
                Some(r) => EnergyReport::new(&c, &cfg, params.phi * r + (1.0 - params.phi), false),
                None => EnergyReport::new(&c, &cfg, 1.0, true),
            };
            Ok((out, report))
        }
    }
}
