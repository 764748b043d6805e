//! Shared fixtures for the engine benchmarks in `benches/`.

use cqed_core::response::FrequencyGrid;
use cqed_core::{DeviceConfig, DeviceParams, SpaceDims};

/// The reference sample, with transmon dephasing when `dephasing` is set.
pub fn device(dephasing: bool) -> DeviceParams {
    let mut c = DeviceConfig::reference_sample();
    if dephasing {
        c.gamma_phi_mhz = Some(0.3);
    }
    c.resolve().expect("reference sample resolves")
}

pub fn dims(n_cavity: usize, n_transmon: usize) -> SpaceDims {
    SpaceDims::new(n_cavity, n_transmon).expect("valid truncation")
}

/// `points` frequencies spanning ±100 MHz around the cavity.
pub fn cavity_grid(params: &DeviceParams, points: usize) -> Vec<f64> {
    let nu = cqed_core::constants::angular_to_ghz(params.cavity_frequency);
    FrequencyGrid {
        center_ghz: None,
        half_span_mhz: 100.0,
        points,
    }
    .frequencies(nu)
    .expect("valid grid")
}
