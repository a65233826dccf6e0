//! Energy-preserving classifier-free guidance.
//!
//! The guidance kernels live in [`guidance`]; [`latent`] supplies the
//! tensor type and the robust (percentile-windowed) energy they rely on.
//! [`toy`] is a small diffusion sampler with closed-form Gaussian-mixture
//! denoisers, used together with [`metrics`] to measure how guidance
//! inflates latent energy. [`io`] and [`report`] hold the on-disk formats
//! and the CLI drivers.

pub mod error;
pub mod guidance;
pub mod io;
pub mod latent;
pub mod metrics;
pub mod report;
pub mod toy;

pub use error::{Error, Result};
pub use guidance::{
    cfg_combine, ep_cfg, ep_rescale, std_rescale_baseline, EnergyReport, GuidanceMode,
    GuidanceParams, EPS_ZERO,
};
pub use latent::{
    energy, percentile, robust_energy, LatentTensor, RobustEnergyResult, RobustWindow,
};
