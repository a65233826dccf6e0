//! Toy diffusion with closed-form denoisers.
//!
//! Data distributions are isotropic Gaussian mixtures, so the posterior mean
//! `E[x0 | x_t]` under the variance-preserving forward process
//! `x_t = sqrt(ab) * x0 + sqrt(1 - ab) * eps` is available exactly. Guidance
//! is applied between a conditional and an unconditional mixture and the
//! sampler logs the energies seen at every step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::guidance::{ep_cfg, EnergyReport, GuidanceParams};
use crate::latent::{energy, robust_energy, LatentTensor};

/// Weighted mixture of isotropic Gaussians in `dim` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    stds: Vec<f64>,
    dim: usize,
}

impl MixtureModel {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, stds: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidMixture("no components".into()));
        }
        if means.len() != weights.len() || stds.len() != weights.len() {
            return Err(Error::InvalidMixture(format!(
                "{} weights, {} means, {} stds",
                weights.len(),
                means.len(),
                stds.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidMixture("weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMixture(format!(
                "weights sum to {total}, not 1"
            )));
        }
        if stds.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidMixture("stds must be positive".into()));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::InvalidMixture("zero-dimensional means".into()));
        }
        if means.iter().any(|m| m.len() != dim) {
            return Err(Error::InvalidMixture("means differ in dimension".into()));
        }
        if means.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMixture("non-finite mean".into()));
        }
        Ok(Self {
            weights,
            means,
            stds,
            dim,
        })
    }

    /// Single isotropic Gaussian `N(mean, std^2 I)`.
    pub fn gaussian(mean: Vec<f64>, std: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![std])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn stds(&self) -> &[f64] {
        &self.stds
    }

    /// One draw from the mixture.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.gen();
        let mut k = self.weights.len() - 1;
        let mut acc = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        self.means[k]
            .iter()
            .map(|m| m + self.stds[k] * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// `n` seeded draws, on a random stream separate from the sampler's.
    pub fn sample_n(&self, n: usize, seed: u64) -> Vec<LatentTensor> {
        let mut rng = trajectory_rng(seed, u64::MAX);
        (0..n)
            .map(|_| LatentTensor::new(vec![self.dim], self.sample(&mut rng)).expect("finite draw"))
            .collect()
    }
}

/// Cumulative signal levels `alpha_bar[0..=T]` of a variance-preserving schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    alpha_bar: Vec<f64>,
}

impl DiffusionSchedule {
    /// Requires `alpha_bar[0] == 1`, non-increasing values and a positive tail.
    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.len() < 2 {
            return Err(Error::InvalidRange(
                "schedule needs at least one step".into(),
            ));
        }
        if alpha_bar[0] != 1.0 {
            return Err(Error::InvalidRange(format!(
                "alpha_bar[0] = {}, expected 1",
                alpha_bar[0]
            )));
        }
        if alpha_bar.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidRange("non-finite alpha_bar".into()));
        }
        if alpha_bar.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidRange(
                "alpha_bar must be non-increasing".into(),
            ));
        }
        let last = alpha_bar[alpha_bar.len() - 1];
        if last <= 0.0 {
            return Err(Error::InvalidRange(format!(
                "final alpha_bar {last} is not positive"
            )));
        }
        Ok(Self { alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self) -> &[f64] {
        &self.alpha_bar
    }
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        vp_schedule(50, 1e-4, 0.2).expect("default schedule is valid")
    }
}

/// Linear-beta schedule: `T` betas evenly spaced over `[beta_min, beta_max]`.
pub fn vp_schedule(steps: usize, beta_min: f64, beta_max: f64) -> Result<DiffusionSchedule> {
    if steps == 0 {
        return Err(Error::InvalidRange("steps must be >= 1".into()));
    }
    if !(0.0 <= beta_min && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::InvalidRange(format!(
            "need 0 <= beta_min <= beta_max < 1, got {beta_min}, {beta_max}"
        )));
    }
    let mut alpha_bar = Vec::with_capacity(steps + 1);
    alpha_bar.push(1.0);
    let mut acc = 1.0;
    for i in 0..steps {
        let beta = if steps == 1 {
            beta_min
        } else {
            beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64
        };
        acc *= 1.0 - beta;
        alpha_bar.push(acc);
    }
    DiffusionSchedule::from_alpha_bar(alpha_bar)
}

fn check_alpha(alpha_bar: f64) -> Result<()> {
    if !(alpha_bar > 0.0 && alpha_bar <= 1.0) {
        return Err(Error::InvalidRange(format!(
            "alpha_bar {alpha_bar} outside (0, 1]"
        )));
    }
    Ok(())
}

/// Posterior component weights `p(k | x_t)`.
pub fn responsibilities(m: &MixtureModel, x_t: &LatentTensor, alpha_bar: f64) -> Result<Vec<f64>> {
    if x_t.len() != m.dim {
        return Err(Error::ShapeMismatch(format!(
            "state has {} elements, mixture is {}-dimensional",
            x_t.len(),
            m.dim
        )));
    }
    check_alpha(alpha_bar)?;
    let sqrt_ab = alpha_bar.sqrt();
    let d = m.dim as f64;
    let log_dens: Vec<f64> = (0..m.weights.len())
        .map(|k| {
            let var = alpha_bar * m.stds[k] * m.stds[k] + (1.0 - alpha_bar);
            let dist2: f64 = x_t
                .data()
                .iter()
                .zip(&m.means[k])
                .map(|(x, mu)| (x - sqrt_ab * mu).powi(2))
                .sum();
            m.weights[k].ln()
                - 0.5 * d * (2.0 * std::f64::consts::PI * var).ln()
                - 0.5 * dist2 / var
        })
        .collect();
    let max = log_dens.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = log_dens.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = unnorm.iter().sum();
    Ok(unnorm.into_iter().map(|u| u / total).collect())
}

/// Exact posterior mean `E[x0 | x_t]` for a mixture prior.
pub fn analytic_x0(m: &MixtureModel, x_t: &LatentTensor, alpha_bar: f64) -> Result<LatentTensor> {
    let resp = responsibilities(m, x_t, alpha_bar)?;
    if alpha_bar == 1.0 {
        return Ok(x_t.clone());
    }
    let sqrt_ab = alpha_bar.sqrt();
    let mut out = vec![0.0; m.dim];
    for (k, r) in resp.iter().enumerate() {
        let s2 = m.stds[k] * m.stds[k];
        let gain = sqrt_ab * s2 / (alpha_bar * s2 + (1.0 - alpha_bar));
        for ((o, x), mu) in out.iter_mut().zip(x_t.data()).zip(&m.means[k]) {
            *o += r * (mu + gain * (x - sqrt_ab * mu));
        }
    }
    LatentTensor::new(x_t.shape().to_vec(), out)
}

/// Noise implied by a clean-sample prediction: `(x_t - sqrt(ab) x0) / sqrt(1 - ab)`.
pub fn eps_from_x0(x_t: &LatentTensor, x0: &LatentTensor, alpha_bar: f64) -> Result<LatentTensor> {
    check_alpha(alpha_bar)?;
    if alpha_bar == 1.0 {
        return Err(Error::DegenerateAlpha(alpha_bar));
    }
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    x_t.zip_checked(x0, |x, x0| (x - a * x0) / b)
}

/// Clean-sample prediction implied by a noise prediction.
pub fn x0_from_eps(x_t: &LatentTensor, eps: &LatentTensor, alpha_bar: f64) -> Result<LatentTensor> {
    check_alpha(alpha_bar)?;
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    x_t.zip_checked(eps, |x, e| (x - b * e) / a)
}

/// Deterministic DDIM update from step `t` to `t - 1`.
pub fn ddim_step(
    x_t: &LatentTensor,
    x0_pred: &LatentTensor,
    sched: &DiffusionSchedule,
    t: usize,
) -> Result<LatentTensor> {
    if t == 0 || t > sched.steps() {
        return Err(Error::IndexOutOfRange {
            t,
            steps: sched.steps(),
        });
    }
    x_t.same_shape(x0_pred)?;
    let (ab_t, ab_prev) = (sched.alpha_bar[t], sched.alpha_bar[t - 1]);
    if ab_prev == ab_t {
        return Ok(x_t.clone());
    }
    if ab_prev == 1.0 {
        return Ok(x0_pred.clone());
    }
    let eps = eps_from_x0(x_t, x0_pred, ab_t)?;
    let (a, b) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
    x0_pred.zip_checked(&eps, |x0, e| a * x0 + b * e)
}

/// Which prediction the guidance kernels see.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GuidanceSpace {
    #[default]
    Epsilon,
    X0,
}

impl GuidanceSpace {
    pub fn as_str(&self) -> &'static str {
        match self {
            GuidanceSpace::Epsilon => "epsilon",
            GuidanceSpace::X0 => "x0",
        }
    }
}

impl std::str::FromStr for GuidanceSpace {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "epsilon" | "eps" => Ok(GuidanceSpace::Epsilon),
            "x0" => Ok(GuidanceSpace::X0),
            other => Err(format!(
                "unknown guidance space {other:?} (expected epsilon or x0)"
            )),
        }
    }
}

/// One denoising step as seen by the guidance kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// Schedule index `t` the step started from (`T` first, `1` last).
    pub step: usize,
    /// Robust energy of the conditional prediction.
    pub e_c: f64,
    /// Robust energy of the guided prediction actually used for the update.
    pub e_cfg: f64,
    /// Robust energy of the guided prediction before any correction.
    pub e_cfg_raw: f64,
    pub scale: f64,
    pub fallback_used: bool,
    /// `||x||^2 / d` of the state after the step.
    pub moment: f64,
}

impl StepRecord {
    /// `e_cfg / e_c`, taken as 1 when both energies vanish.
    pub fn ratio(&self) -> f64 {
        if self.e_c == 0.0 && self.e_cfg == 0.0 {
            1.0
        } else {
            self.e_cfg / self.e_c
        }
    }
}

pub type TrajectoryLog = Vec<StepRecord>;

/// Random source for trajectory `stream` of a batch seeded with `seed`.
///
/// Streams are independent, so a batch can be generated in any order.
pub fn trajectory_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs one guided DDIM trajectory from `x_T ~ N(0, I)`.
pub fn sample_trajectory(
    cond: &MixtureModel,
    uncond: &MixtureModel,
    sched: &DiffusionSchedule,
    params: &GuidanceParams,
    space: GuidanceSpace,
    seed: u64,
) -> Result<(LatentTensor, TrajectoryLog)> {
    sample_trajectory_with_rng(
        cond,
        uncond,
        sched,
        params,
        space,
        &mut trajectory_rng(seed, 0),
    )
}

pub fn sample_trajectory_with_rng<R: Rng + ?Sized>(
    cond: &MixtureModel,
    uncond: &MixtureModel,
    sched: &DiffusionSchedule,
    params: &GuidanceParams,
    space: GuidanceSpace,
    rng: &mut R,
) -> Result<(LatentTensor, TrajectoryLog)> {
    if cond.dim != uncond.dim {
        return Err(Error::ShapeMismatch(format!(
            "conditional mixture is {}-dimensional, unconditional is {}-dimensional",
            cond.dim, uncond.dim
        )));
    }
    let d = cond.dim;
    let init: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let mut x = LatentTensor::new(vec![d], init)?;
    let mut log = Vec::with_capacity(sched.steps());

    for t in (1..=sched.steps()).rev() {
        let ab = sched.alpha_bar[t];
        let x0_c = analytic_x0(cond, &x, ab)?;
        let x0_u = analytic_x0(uncond, &x, ab)?;
        let (guided, report, x0_pred) = match space {
            GuidanceSpace::X0 => {
                let (g, report) = ep_cfg(&x0_c, &x0_u, params)?;
                (g.clone(), report, g)
            }
            GuidanceSpace::Epsilon => {
                let eps_c = eps_from_x0(&x, &x0_c, ab)?;
                let eps_u = eps_from_x0(&x, &x0_u, ab)?;
                let (g, report) = ep_cfg(&eps_c, &eps_u, params)?;
                let x0 = x0_from_eps(&x, &g, ab)?;
                (g, report, x0)
            }
        };
        x = ddim_step(&x, &x0_pred, sched, t)?;
        log.push(record(t, &report, &guided, params, energy(&x) / d as f64));
    }
    Ok((x, log))
}

fn record(
    step: usize,
    report: &EnergyReport,
    guided: &LatentTensor,
    params: &GuidanceParams,
    moment: f64,
) -> StepRecord {
    StepRecord {
        step,
        e_c: report.e_c,
        e_cfg: robust_energy(guided, params.window()).energy,
        e_cfg_raw: report.e_cfg,
        scale: report.scale,
        fallback_used: report.fallback_used,
        moment,
    }
}

/// `batch` trajectories; trajectory `i` uses stream `i` of `seed`.
///
/// Runs in parallel; the result is independent of scheduling.
pub fn sample_batch(
    cond: &MixtureModel,
    uncond: &MixtureModel,
    sched: &DiffusionSchedule,
    params: &GuidanceParams,
    space: GuidanceSpace,
    seed: u64,
    batch: usize,
) -> Result<Vec<(LatentTensor, TrajectoryLog)>> {
    (0..batch as u64)
        .into_par_iter()
        .map(|i| {
            sample_trajectory_with_rng(
                cond,
                uncond,
                sched,
                params,
                space,
                &mut trajectory_rng(seed, i),
            )
        })
        .collect()
}
