//! Joint identification of errors-in-variables ARX models: order, delay,
//! noise variances, and difference-equation coefficients, estimated from
//! noisy input-output data by iteratively rescaled principal component
//! analysis of lagged measurements.
//!
//! The crate also ships the data generators (PRBS excitation, ARX-noise
//! corruption), reference estimators for comparison (unscaled PCA,
//! diagonal rescaling, least squares), and a seeded Monte Carlo harness.

pub mod acvf;
pub mod baselines;
pub mod constraint;
pub mod eigen;
pub mod error;
pub mod lagged;
pub mod mc;
pub mod model;
mod optim;
pub mod order;
pub mod pipeline;
pub mod signal;
pub mod stats;
pub mod variance;

pub use error::{EivarxError, Result};
pub use model::{DifferenceEquation, NoiseSpec, ThetaVector};
pub use pipeline::{identify, IdentificationReport, PipelineConfig};
pub use signal::TimeSeriesPair;
