//! Decoupled inpainting guidance (DInG) and competing zero-shot posterior
//! sampling transitions, evaluated over analytic priors whose denoisers,
//! samplers and inpainting posteriors are all available in closed form.
//!
//! The crate is organised bottom-up:
//!
//! - [`schedule`]: interpolation schedules `(alpha_t, sigma_t)`, time grids and
//!   DDIM standard-deviation schedules `eta`.
//! - [`prior`]: Gaussian and Gaussian-mixture priors with exact denoisers.
//! - [`task`]: inpainting problems, pixel-to-latent mask downsampling and cPSNR.
//! - [`guidance`]: the reverse transitions of every method and the sampler driver.
//! - [`oracle`]: closed-form Gaussian transition moments and bias analysis.
//! - [`metrics`]: sliced-Wasserstein and moment errors against reference samples.

pub mod error;
pub mod guidance;
pub mod linalg;
pub mod metrics;
pub mod oracle;
pub mod prior;
pub mod schedule;
pub mod task;

pub use error::{Error, Result};
pub use guidance::{run_sampler, ChainState, MethodKind, MethodSpec, SamplerOutput, StepContext};
pub use prior::{AnalyticPrior, DenoiserOutput, GaussianPrior, GmmPrior};
pub use schedule::{make_grid, EtaSchedule, NoiseSchedule, TimeGrid};
pub use task::{InpaintingTask, LatentMask, PixelMask};

/// Dense column vector used throughout the crate.
pub type Vector = nalgebra::DVector<f64>;
/// Dense matrix used throughout the crate.
pub type Matrix = nalgebra::DMatrix<f64>;
