//! Simulation and inference for a thermally driven transmon–cavity system.
//!
//! The forward model is the thermal Lindblad master equation of a
//! multi-level transmon coupled to one cavity mode. On top of it sit
//! linear-response transmission spectra, vacuum Rabi sequences and
//! single-parameter thermometry fits.

pub mod constants;
pub mod device;
pub mod dynamics;
pub mod error;
pub mod linsolve;
pub mod optimize;
pub mod qspace;
pub mod response;
pub mod sparse;
pub mod synthetic;
pub mod thermo;

pub use device::{DeviceConfig, DeviceParams};
pub use dynamics::{Liouvillian, Trajectory};
pub use error::{Error, Result};
pub use qspace::{DensityMatrix, Operator, SpaceDims};
pub use response::SpectrumResult;
pub use sparse::{CscMatrix, C64};
pub use thermo::{ThermalFit, ThermalPoint};
