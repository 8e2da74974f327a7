//! Spectral mixture (SM) kernel learning for Gaussian-process regression.
//!
//! The SM kernel is approximated with random Fourier features whose spectral
//! points are drawn from a variational distribution. Training maximizes a
//! Monte-Carlo ELBO through the reparameterization path, optionally with a
//! variance-optimal allocation of spectral points across mixture components
//! and a log-domain approximate natural gradient.
//!
//! Module map:
//! - [`kernel`]: exact SM kernel, gram matrices, random feature maps.
//! - [`sampling`]: spectral-point allocation policies and reparameterized draws.
//! - [`inference`]: marginal likelihood, KL, gradients, natural gradient, training loop.
//! - [`regression`]: sparse-spectrum and exact predictive distributions, metrics.
//! - [`data`]: CSV ingestion, standardization, splitting, synthetic data.
//! - [`bench`]: gram-approximation benchmark used by `svss approx-bench`.

pub mod bench;
pub mod data;
pub mod error;
pub mod hexfloat;
pub mod inference;
pub mod kernel;
pub mod linalg;
pub mod regression;
pub mod rng;
pub mod sampling;

pub use error::{Error, Result};
pub use kernel::{FeatureMatrix, SmParams, SpectralSample};
pub use rng::SplitRng;
pub use sampling::Allocation;
