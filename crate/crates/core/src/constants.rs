//! Physical constants (exact SI values since the 2019 redefinition) and unit
//! conversions. Compute code takes every constant from here.

use std::f64::consts::{PI, TAU};

/// Planck constant, J s.
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Reduced Planck constant, J s.
pub const HBAR: f64 = PLANCK / TAU;
/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Elementary charge, C.
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// Superconducting flux quantum h/2e, Wb.
pub const FLUX_QUANTUM: f64 = PLANCK / (2.0 * ELEMENTARY_CHARGE);

pub const GHZ: f64 = 1e9;
pub const MHZ: f64 = 1e6;
pub const NS: f64 = 1e-9;

/// Ordinary frequency in GHz to angular frequency in rad/s.
#[inline]
pub fn ghz_to_angular(f_ghz: f64) -> f64 {
    TAU * f_ghz * GHZ
}

/// Rate quoted as `x/2π` in MHz to angular rate in rad/s.
#[inline]
pub fn mhz_to_angular(f_mhz: f64) -> f64 {
    TAU * f_mhz * MHZ
}

#[inline]
pub fn angular_to_ghz(omega: f64) -> f64 {
    omega / (TAU * GHZ)
}

#[inline]
pub fn angular_to_mhz(omega: f64) -> f64 {
    omega / (TAU * MHZ)
}

/// Power spectral density in dBm/Hz to W/Hz.
#[inline]
pub fn dbm_per_hz_to_watts_per_hz(s_dbm_hz: f64) -> f64 {
    10f64.powf((s_dbm_hz - 30.0) / 10.0)
}

/// Half-angle used by the flux dependence of the Josephson energy.
#[inline]
pub(crate) fn flux_phase(flux: f64) -> f64 {
    PI * flux
}
