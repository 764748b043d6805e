//! Run configuration: one TOML file per run, unknown keys rejected.

use std::path::PathBuf;

use cqed_core::dynamics::{EvolveOptions, InitialQubit, DEFAULT_PARKED_DETUNING_GHZ};
use cqed_core::linsolve::SolverOptions;
use cqed_core::response::{FrequencyGrid, SpectrumMethod};
use cqed_core::DeviceConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub device: DeviceConfig,
    #[serde(default)]
    pub truncation: Truncation,
    pub experiment: Experiment,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default)]
    pub output: Output,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Truncation {
    /// Fixed cavity truncation; chosen per thermal point when absent.
    pub n_cavity: Option<usize>,
    pub n_transmon: usize,
    /// Discarded thermal weight used to size the cavity when `n_cavity` is
    /// absent; `None` uses the basic safety rule.
    pub tail: Option<f64>,
}

impl Default for Truncation {
    fn default() -> Self {
        Self {
            n_cavity: None,
            n_transmon: 3,
            tail: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    Multiplicative,
    Additive,
}

/// Seeded Gaussian noise added to generated data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticNoise {
    #[serde(default)]
    pub kind: NoiseKind,
    /// Relative (multiplicative) or absolute (additive) standard deviation.
    pub sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauGrid {
    #[serde(default)]
    pub start_ns: f64,
    pub stop_ns: f64,
    pub points: usize,
}

impl TauGrid {
    pub fn values_ns(&self) -> Vec<f64> {
        let n = self.points.max(2) - 1;
        (0..=n)
            .map(|k| self.start_ns + (self.stop_ns - self.start_ns) * k as f64 / n as f64)
            .collect()
    }
}

/// Row appended to a calibration table after a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationAppend {
    pub table: PathBuf,
    /// Applied noise at the device for this data set.
    pub s_n_dbm_per_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSweep {
    /// Noise spectral densities at the device.
    pub s_n_dbm_per_hz: Vec<f64>,
    /// Background occupation added to the applied noise.
    pub n0: f64,
    /// Line attenuation, only reported; `s_n_dbm_per_hz` is already at the device.
    #[serde(default)]
    pub attenuation_db: f64,
}

fn default_probe() -> f64 {
    0.05
}
fn default_initial() -> Vec<InitialQubit> {
    vec![InitialQubit::Ground]
}
fn default_parked() -> f64 {
    DEFAULT_PARKED_DETUNING_GHZ * 1e3
}
fn default_tail() -> f64 {
    1e-6
}
fn default_method() -> SpectrumMethod {
    SpectrumMethod::Resolvent
}
fn default_n_max() -> f64 {
    2.0
}
fn default_x_tol() -> f64 {
    1e-7
}
fn default_max_iter() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitBlock {
    #[serde(default = "default_n_max")]
    pub n_max: f64,
    #[serde(default = "default_x_tol")]
    pub x_tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

impl Default for FitBlock {
    fn default() -> Self {
        Self {
            n_max: default_n_max(),
            x_tol: default_x_tol(),
            max_iter: default_max_iter(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    Spectrum {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n_th: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        temperature_mk: Option<Vec<f64>>,
        #[serde(default)]
        grid: FrequencyGrid,
        #[serde(default = "default_method")]
        method: SpectrumMethod,
        /// Weak-drive probe amplitude in units of κ.
        #[serde(default = "default_probe")]
        probe_amplitude_kappa: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        noise: Option<SyntheticNoise>,
    },
    Sweep {
        noise_source: NoiseSweep,
        #[serde(default)]
        grid: FrequencyGrid,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        noise: Option<SyntheticNoise>,
    },
    Rabi {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n_th: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        temperature_mk: Option<Vec<f64>>,
        tau: TauGrid,
        #[serde(default = "default_initial")]
        initial: Vec<InitialQubit>,
        #[serde(default = "default_parked")]
        parked_detuning_mhz: f64,
        #[serde(default)]
        ramp_time_ns: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        noise: Option<SyntheticNoise>,
    },
    FitSpectrum {
        data: PathBuf,
        #[serde(default)]
        fit: FitBlock,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        calibration: Option<CalibrationAppend>,
    },
    FitRabi {
        data: PathBuf,
        #[serde(default)]
        fit: FitBlock,
        #[serde(default = "default_fit_initial")]
        initial: InitialQubit,
        #[serde(default)]
        min_tau_ns: f64,
        #[serde(default = "default_parked")]
        parked_detuning_mhz: f64,
        #[serde(default)]
        ramp_time_ns: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        calibration: Option<CalibrationAppend>,
    },
    Crossover {
        n_th: Vec<f64>,
        #[serde(default = "crossover_grid")]
        grid: FrequencyGrid,
        /// Discarded thermal weight used to size the cavity at each point.
        #[serde(default = "default_tail")]
        tail: f64,
    },
}

fn default_fit_initial() -> InitialQubit {
    InitialQubit::Ground
}

fn crossover_grid() -> FrequencyGrid {
    FrequencyGrid {
        center_ghz: None,
        half_span_mhz: 20.0,
        points: 401,
    }
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Spectrum { .. } => "spectrum",
            Experiment::Sweep { .. } => "sweep",
            Experiment::Rabi { .. } => "rabi",
            Experiment::FitSpectrum { .. } => "fit_spectrum",
            Experiment::FitRabi { .. } => "fit_rabi",
            Experiment::Crossover { .. } => "crossover",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Numerics {
    pub solver: SolverOptions,
    pub evolve: EvolveOptions,
    /// Admit transmon dephasing in spectra (outside the reference model).
    pub spectrum_dephasing: bool,
    /// Frequency points sharing one preconditioner on the iterative path.
    pub chunk: usize,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            evolve: EvolveOptions {
                store_states: false,
                check_positivity: false,
                ..EvolveOptions::default()
            },
            spectrum_dephasing: false,
            chunk: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Output {
    pub dir: PathBuf,
    /// File name prefix; the experiment kind when absent.
    pub prefix: Option<String>,
}

impl Default for Output {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("."),
            prefix: None,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }
}
