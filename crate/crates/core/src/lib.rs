//! Uplink cell-free massive MIMO with broadband users and spread-spectrum
//! machine-type devices sharing one time-frequency grid.
//!
//! The pipeline is: [`scenario`] (geometry, LSF, association) →
//! [`sequences`] (pilots, PN codes) → [`channel`] (Rayleigh draws, MMSE
//! estimation) → [`moments`] (closed-form and Monte Carlo rate-bound
//! statistics) → [`powercontrol`] (max-min power allocation) →
//! [`experiment`] (sweeps and oracle reports).

pub mod channel;
pub mod config;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod moments;
pub mod powercontrol;
pub mod rng;
pub mod scenario;
pub mod sequences;

pub use config::{derive_tau, FadingModel, SystemConfig};
pub use error::{Error, Result};
