//! Adaptive hyperparameter search under differential privacy.
//!
//! The crate covers the stopping-time law ([`distributions`]), privacy
//! accounting and exact auditing ([`accountant`]), projection of sampling
//! densities into a band around a prior ([`projection`]), a Gaussian-process
//! strategy ([`surrogate`]), the tuning loop ([`framework`]) and gridded score
//! landscapes ([`landscape`]). [`config`], [`bench`] and [`cli`] drive
//! searches and benchmark sweeps from configuration files.

pub mod accountant;
pub mod bench;
pub mod cli;
pub mod config;
pub mod distributions;
pub mod error;
pub mod framework;
pub mod landscape;
pub mod projection;
pub mod surrogate;

pub use accountant::{AdaptivityBounds, RdpCurve, RdpPoint};
pub use distributions::NegBinParams;
pub use error::{Error, Result};
pub use framework::{GpStrategy, Oracle, RunOptions, RunStream, Strategy, Transcript, Trial, UniformStrategy};
pub use landscape::{Direction, Generator, GridSpec, Landscape, LandscapeOracle};
pub use projection::{DiscreteDensity, Prior};
pub use surrogate::GpConfig;
