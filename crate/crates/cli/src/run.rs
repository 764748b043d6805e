//! Experiment orchestration: resolve a config, compute, write tables and a
//! manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use cqed_core::constants::mhz_to_angular;
use cqed_core::dynamics::{rabi_sequence, InitialQubit, RabiOptions};
use cqed_core::qspace::{min_cavity_levels, tail_cavity_levels};
use cqed_core::response::{
    classicality_report, fit_spectrum_lorentzian, model_spectrum, normalize, reference_spectrum,
    transmission_weak_drive, ClassicalityReport, ResponseOptions, SpectrumMethod, SpectrumResult,
};
use cqed_core::synthetic::{additive_gaussian, multiplicative_gaussian};
use cqed_core::thermo::{
    calibration_line, fit_nth_rabi, fit_nth_spectrum, CalibrationPoint, FitConfig, MeasuredRabi,
    MeasuredSpectrum, NoiseCalibration, RabiFitConfig, ThermalPoint, ThermalSource,
};
use cqed_core::{DeviceParams, SpaceDims, ThermalFit};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{
    CalibrationAppend, Experiment, FitBlock, NoiseKind, RunConfig, SyntheticNoise, Truncation,
};
use crate::error::CliError;
use crate::table::{append_json_line, num, read_columns, write_csv, write_json};

pub const SPECTRUM_COLUMNS: [&str; 4] = ["freq_GHz", "re_amp", "im_amp", "power_normalized"];
pub const RABI_COLUMNS: [&str; 2] = ["tau_ns", "P_e"];
pub const CROSSOVER_COLUMNS: [&str; 5] = [
    "n_th",
    "lorentzian_r2",
    "fitted_width_MHz",
    "classical_flag",
    "threshold",
];

/// A config checked against the model: device resolved, thermal points and
/// grids evaluated.
pub struct Resolved {
    pub config: RunConfig,
    pub params: DeviceParams,
    pub nu_ghz: f64,
}

pub fn resolve(config: RunConfig) -> Result<Resolved, CliError> {
    let params = config.device.resolve()?;
    let nu_ghz = config.device.nu_r_ghz;
    let r = Resolved {
        config,
        params,
        nu_ghz,
    };
    r.check()?;
    Ok(r)
}

impl Resolved {
    fn check(&self) -> Result<(), CliError> {
        let t = &self.config.truncation;
        SpaceDims::new(t.n_cavity.unwrap_or(2), t.n_transmon)?;
        if let Some(tail) = t.tail {
            if !(tail > 0.0 && tail < 1.0) {
                return Err(CliError::Config(format!(
                    "truncation.tail must lie in (0, 1), got {tail}"
                )));
            }
        }
        match &self.config.experiment {
            Experiment::Spectrum {
                grid,
                method,
                probe_amplitude_kappa,
                noise,
                ..
            } => {
                self.thermal_points()?;
                grid.frequencies(self.nu_ghz)?;
                if *method == SpectrumMethod::WeakDrive && !(*probe_amplitude_kappa > 0.0) {
                    return Err(CliError::Config(
                        "probe_amplitude_kappa must be positive".into(),
                    ));
                }
                check_noise(noise)?;
            }
            Experiment::Sweep { grid, noise, .. } => {
                self.thermal_points()?;
                grid.frequencies(self.nu_ghz)?;
                check_noise(noise)?;
            }
            Experiment::Rabi {
                tau,
                initial,
                ramp_time_ns,
                noise,
                ..
            } => {
                self.thermal_points()?;
                if self.params.gamma_phi.is_none() {
                    return Err(CliError::Config(
                        "rabi experiments need device.gamma_phi_mhz (it has no default)".into(),
                    ));
                }
                if tau.points < 2 || !(tau.stop_ns > tau.start_ns) || tau.start_ns < 0.0 {
                    return Err(CliError::Config(
                        "tau needs points ≥ 2 and 0 ≤ start_ns < stop_ns".into(),
                    ));
                }
                if initial.is_empty() {
                    return Err(CliError::Config("initial lists no preparation".into()));
                }
                if !(*ramp_time_ns >= 0.0) {
                    return Err(CliError::Config("ramp_time_ns must be non-negative".into()));
                }
                check_noise(noise)?;
            }
            Experiment::FitSpectrum { fit, .. } => check_fit(fit)?,
            Experiment::FitRabi { fit, .. } => {
                check_fit(fit)?;
                if self.params.gamma_phi.is_none() {
                    return Err(CliError::Config(
                        "Rabi fits need device.gamma_phi_mhz (it has no default)".into(),
                    ));
                }
            }
            Experiment::Crossover { n_th, grid, tail } => {
                if n_th.is_empty() || n_th.iter().any(|n| !(*n >= 0.0 && n.is_finite())) {
                    return Err(CliError::Config(
                        "crossover needs a non-empty list of n_th ≥ 0".into(),
                    ));
                }
                if !(*tail > 0.0 && *tail < 1.0) {
                    return Err(CliError::Config(format!(
                        "tail must lie in (0, 1), got {tail}"
                    )));
                }
                grid.frequencies(self.nu_ghz)?;
            }
        }
        Ok(())
    }

    pub fn thermal_points(&self) -> Result<Vec<ThermalPoint>, CliError> {
        let nu = self.nu_ghz;
        let points: Vec<ThermalPoint> = match &self.config.experiment {
            Experiment::Spectrum {
                n_th,
                temperature_mk,
                ..
            }
            | Experiment::Rabi {
                n_th,
                temperature_mk,
                ..
            } => match (n_th, temperature_mk) {
                (Some(n), None) => n
                    .iter()
                    .map(|&n| ThermalPoint::from_nth(n, nu, ThermalSource::AppliedNoise))
                    .collect::<Result<_, _>>()?,
                (None, Some(t)) => t
                    .iter()
                    .map(|&t| {
                        ThermalPoint::from_temperature(t * 1e-3, nu, ThermalSource::AppliedNoise)
                    })
                    .collect::<Result<_, _>>()?,
                _ => {
                    return Err(CliError::Config(
                        "give exactly one of `n_th` and `temperature_mk`".into(),
                    ))
                }
            },
            Experiment::Sweep { noise_source, .. } => noise_source
                .s_n_dbm_per_hz
                .iter()
                .map(|&s| {
                    NoiseCalibration::new(s, noise_source.n0, noise_source.attenuation_db)?
                        .point(nu)
                })
                .collect::<Result<_, _>>()?,
            Experiment::Crossover { n_th, .. } => n_th
                .iter()
                .map(|&n| ThermalPoint::from_nth(n, nu, ThermalSource::AppliedNoise))
                .collect::<Result<_, _>>()?,
            _ => Vec::new(),
        };
        if matches!(
            self.config.experiment,
            Experiment::Spectrum { .. } | Experiment::Rabi { .. } | Experiment::Sweep { .. }
        ) && points.is_empty()
        {
            return Err(CliError::Config("the thermal sweep is empty".into()));
        }
        Ok(points)
    }

    fn dims(&self, n_th: f64) -> Result<SpaceDims, CliError> {
        Ok(dims_for(&self.config.truncation, n_th, None)?)
    }

    fn response_options(&self) -> ResponseOptions {
        let n = &self.config.numerics;
        ResponseOptions {
            solver: n.solver,
            include_dephasing: n.spectrum_dephasing,
            chunk: n.chunk,
        }
    }

    fn prefix(&self) -> String {
        self.config
            .output
            .prefix
            .clone()
            .unwrap_or_else(|| self.config.experiment.kind().to_string())
    }

    fn out_path(&self, name: &str) -> PathBuf {
        self.config.output.dir.join(name)
    }
}

fn check_noise(noise: &Option<SyntheticNoise>) -> Result<(), CliError> {
    match noise {
        Some(n) if !(n.sigma >= 0.0 && n.sigma.is_finite()) => Err(CliError::Config(format!(
            "noise.sigma must be non-negative, got {}",
            n.sigma
        ))),
        _ => Ok(()),
    }
}

fn check_fit(fit: &FitBlock) -> Result<(), CliError> {
    if !(fit.n_max > 0.0 && fit.n_max.is_finite()) {
        return Err(CliError::Config(format!(
            "fit.n_max must be positive, got {}",
            fit.n_max
        )));
    }
    Ok(())
}

fn dims_for(t: &Truncation, n_th: f64, tail: Option<f64>) -> cqed_core::Result<SpaceDims> {
    let nc = match (t.n_cavity, tail.or(t.tail)) {
        (Some(nc), _) => nc,
        (None, Some(tail)) => tail_cavity_levels(n_th, tail),
        (None, None) => min_cavity_levels(n_th),
    };
    SpaceDims::new(nc, t.n_transmon)
}

fn apply_noise(
    values: &[f64],
    noise: &Option<SyntheticNoise>,
    index: usize,
) -> Result<Vec<f64>, CliError> {
    Ok(match noise {
        None => values.to_vec(),
        Some(n) => {
            let seed = n.seed.wrapping_add(index as u64);
            match n.kind {
                NoiseKind::Multiplicative => multiplicative_gaussian(values, n.sigma, seed)?,
                NoiseKind::Additive => additive_gaussian(values, n.sigma, seed)?,
            }
        }
    })
}

#[derive(Debug, Serialize)]
pub struct PointRecord {
    pub index: usize,
    pub thermal: ThermalPoint,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialQubit>,
    pub n_cavity: usize,
    pub n_transmon: usize,
    pub file: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classicality: Option<ClassicalityReport>,
    pub warnings: Vec<String>,
    pub seconds: f64,
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub experiment: &'static str,
    pub config: &'a RunConfig,
    pub device_params: &'a DeviceParams,
    pub threads: usize,
    pub points: Vec<PointRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<ThermalFit>,
    pub files: Vec<String>,
    pub total_seconds: f64,
}

/// Files written by one run.
pub struct Outcome {
    pub files: Vec<PathBuf>,
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn finish(
    r: &Resolved,
    command: &str,
    start: Instant,
    points: Vec<PointRecord>,
    fit: Option<ThermalFit>,
    mut files: Vec<PathBuf>,
) -> Result<Outcome, CliError> {
    let manifest_path = r.out_path(&format!("{}_manifest.json", r.prefix()));
    let manifest = Manifest {
        tool: "cqed",
        version: env!("CARGO_PKG_VERSION"),
        command,
        experiment: r.config.experiment.kind(),
        config: &r.config,
        device_params: &r.params,
        threads: rayon::current_num_threads(),
        points,
        fit,
        files: files.iter().map(|f| file_name(f)).collect(),
        total_seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&manifest_path, &manifest)?;
    files.push(manifest_path);
    Ok(Outcome { files })
}

fn ensure_dir(r: &Resolved) -> Result<(), CliError> {
    let dir = &r.config.output.dir;
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn nth_tag(n: f64) -> String {
    format!("{n:.4}")
}

fn spectrum_rows(s: &SpectrumResult, power: &[f64]) -> Vec<Vec<String>> {
    s.freqs_ghz
        .iter()
        .zip(&s.amplitude)
        .zip(power)
        .map(|((f, a), p)| vec![num(*f), num(a.re), num(a.im), num(*p)])
        .collect()
}

pub fn run_spectrum(r: &Resolved, command: &str) -> Result<Outcome, CliError> {
    let start = Instant::now();
    let (grid, method, probe, noise) = match &r.config.experiment {
        Experiment::Spectrum {
            grid,
            method,
            probe_amplitude_kappa,
            noise,
            ..
        } => (grid, *method, *probe_amplitude_kappa, noise),
        Experiment::Sweep { grid, noise, .. } => (grid, SpectrumMethod::Resolvent, 0.0, noise),
        other => return Err(wrong_kind(other, command)),
    };
    ensure_dir(r)?;
    let freqs = grid.frequencies(r.nu_ghz)?;
    let opts = r.response_options();
    let points = r.thermal_points()?;
    let prefix = r.prefix();
    let results: Vec<(PointRecord, PathBuf)> = points
        .par_iter()
        .enumerate()
        .map(|(k, point)| -> Result<_, CliError> {
            let t0 = Instant::now();
            let dims = r.dims(point.n_th)?;
            let s = match method {
                SpectrumMethod::Resolvent => {
                    model_spectrum(&r.params, point.n_th, dims, &freqs, &opts)?
                }
                SpectrumMethod::WeakDrive => transmission_weak_drive(
                    &r.params,
                    point.n_th,
                    dims,
                    &freqs,
                    probe * r.params.kappa,
                    &opts,
                )?,
            };
            let reference = reference_spectrum(&r.params, dims, &freqs, &opts)?;
            let s = normalize(&s, &reference)?;
            let power = apply_noise(&s.power_normalized, noise, k)?;
            let path = r.out_path(&format!("{prefix}_{k:02}_nth_{}.csv", nth_tag(point.n_th)));
            write_csv(&path, &SPECTRUM_COLUMNS, spectrum_rows(&s, &power))?;
            let record = PointRecord {
                index: k,
                thermal: *point,
                initial: None,
                n_cavity: dims.n_cavity,
                n_transmon: dims.n_transmon,
                file: file_name(&path),
                classicality: Some(classicality_report(&r.params, point.n_th)),
                warnings: s.warnings.clone(),
                seconds: t0.elapsed().as_secs_f64(),
            };
            Ok((record, path))
        })
        .collect::<Result<_, _>>()?;
    let (records, files) = results.into_iter().unzip();
    finish(r, command, start, records, None, files)
}

pub fn run_rabi(r: &Resolved, command: &str) -> Result<Outcome, CliError> {
    let start = Instant::now();
    let Experiment::Rabi {
        tau,
        initial,
        parked_detuning_mhz,
        ramp_time_ns,
        noise,
        ..
    } = &r.config.experiment
    else {
        return Err(wrong_kind(&r.config.experiment, command));
    };
    ensure_dir(r)?;
    let tau_ns = tau.values_ns();
    let tau_s: Vec<f64> = tau_ns.iter().map(|t| t * 1e-9).collect();
    let opts = RabiOptions {
        parked_detuning: mhz_to_angular(*parked_detuning_mhz),
        ramp_time: ramp_time_ns * 1e-9,
        evolve: r.config.numerics.evolve.clone(),
    };
    let prefix = r.prefix();
    let jobs: Vec<(ThermalPoint, InitialQubit)> = r
        .thermal_points()?
        .into_iter()
        .flat_map(|p| initial.iter().map(move |i| (p, *i)))
        .collect();
    let results: Vec<(PointRecord, PathBuf)> = jobs
        .par_iter()
        .enumerate()
        .map(|(k, (point, init))| -> Result<_, CliError> {
            let t0 = Instant::now();
            let dims = r.dims(point.n_th)?;
            let trace = rabi_sequence(&r.params, point.n_th, dims, &tau_s, *init, &opts)?;
            let p_e = apply_noise(trace.p_e(), noise, k)?;
            let label = match init {
                InitialQubit::Ground => "ground",
                InitialQubit::PiPulse => "pi_pulse",
            };
            let path = r.out_path(&format!(
                "{prefix}_{k:02}_{label}_nth_{}.csv",
                nth_tag(point.n_th)
            ));
            let rows = tau_ns.iter().zip(&p_e).map(|(t, p)| vec![num(*t), num(*p)]);
            write_csv(&path, &RABI_COLUMNS, rows)?;
            let record = PointRecord {
                index: k,
                thermal: *point,
                initial: Some(*init),
                n_cavity: dims.n_cavity,
                n_transmon: dims.n_transmon,
                file: file_name(&path),
                classicality: None,
                warnings: trace.warnings,
                seconds: t0.elapsed().as_secs_f64(),
            };
            Ok((record, path))
        })
        .collect::<Result<_, _>>()?;
    let (records, files) = results.into_iter().unzip();
    finish(r, command, start, records, None, files)
}

fn fit_config(b: &FitBlock) -> FitConfig {
    FitConfig {
        n_max: b.n_max,
        x_tol: b.x_tol,
        max_iter: b.max_iter,
    }
}

/// Data paths in a config are relative to the config file.
pub fn data_path(config_dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        config_dir.join(p)
    }
}

pub fn run_fit(r: &Resolved, command: &str, config_dir: &Path) -> Result<Outcome, CliError> {
    let start = Instant::now();
    let (fit, calibration) = match &r.config.experiment {
        Experiment::FitSpectrum {
            data,
            fit,
            calibration,
        } => {
            let cols = read_columns(
                &data_path(config_dir, data),
                &["freq_GHz", "power_normalized"],
            )?;
            let measured = MeasuredSpectrum {
                freqs_ghz: cols[0].clone(),
                power_normalized: cols[1].clone(),
            };
            let cfg = fit_config(fit);
            let dims = r.dims(cfg.n_max)?;
            (
                fit_nth_spectrum(&measured, &r.params, dims, &cfg, &r.response_options())?,
                calibration,
            )
        }
        Experiment::FitRabi {
            data,
            fit,
            initial,
            min_tau_ns,
            parked_detuning_mhz,
            ramp_time_ns,
            calibration,
        } => {
            let cols = read_columns(&data_path(config_dir, data), &RABI_COLUMNS)?;
            let measured = MeasuredRabi {
                tau_ns: cols[0].clone(),
                p_e: cols[1].clone(),
            };
            let cfg = RabiFitConfig {
                fit: fit_config(fit),
                initial: *initial,
                min_tau_ns: *min_tau_ns,
                rabi: RabiOptions {
                    parked_detuning: mhz_to_angular(*parked_detuning_mhz),
                    ramp_time: ramp_time_ns * 1e-9,
                    evolve: r.config.numerics.evolve.clone(),
                },
            };
            let dims = r.dims(cfg.fit.n_max)?;
            (fit_nth_rabi(&measured, &r.params, dims, &cfg)?, calibration)
        }
        other => return Err(wrong_kind(other, command)),
    };
    ensure_dir(r)?;
    let path = r.out_path(&format!("{}_fit.json", r.prefix()));
    write_json(&path, &fit)?;
    let mut files = vec![path];
    if let Some(CalibrationAppend {
        table,
        s_n_dbm_per_hz,
    }) = calibration
    {
        let table = data_path(config_dir, table);
        append_json_line(
            &table,
            &CalibrationPoint {
                s_n_dbm_per_hz: *s_n_dbm_per_hz,
                fit: fit.clone(),
            },
        )?;
        files.push(table);
    }
    finish(r, command, start, Vec::new(), Some(fit), files)
}

pub fn run_crossover(r: &Resolved, command: &str) -> Result<Outcome, CliError> {
    let start = Instant::now();
    let Experiment::Crossover { grid, tail, .. } = &r.config.experiment else {
        return Err(wrong_kind(&r.config.experiment, command));
    };
    ensure_dir(r)?;
    let freqs = grid.frequencies(r.nu_ghz)?;
    let opts = r.response_options();
    let points = r.thermal_points()?;
    let rows: Vec<(PointRecord, Vec<String>)> = points
        .par_iter()
        .enumerate()
        .map(|(k, point)| -> Result<_, CliError> {
            let t0 = Instant::now();
            let dims = dims_for(&r.config.truncation, point.n_th, Some(*tail))?;
            let s = model_spectrum(&r.params, point.n_th, dims, &freqs, &opts)?;
            let s = normalize(&s, &reference_spectrum(&r.params, dims, &freqs, &opts)?)?;
            let fit = fit_spectrum_lorentzian(&s)?;
            let report = classicality_report(&r.params, point.n_th);
            let row = vec![
                num(point.n_th),
                num(fit.r_squared),
                num(fit.fwhm_mhz),
                report.classical.to_string(),
                num(report.threshold),
            ];
            let record = PointRecord {
                index: k,
                thermal: *point,
                initial: None,
                n_cavity: dims.n_cavity,
                n_transmon: dims.n_transmon,
                file: String::new(),
                classicality: Some(report),
                warnings: s.warnings,
                seconds: t0.elapsed().as_secs_f64(),
            };
            Ok((record, row))
        })
        .collect::<Result<_, _>>()?;
    let path = r.out_path(&format!("{}.csv", r.prefix()));
    let (mut records, rows): (Vec<PointRecord>, Vec<Vec<String>>) = rows.into_iter().unzip();
    write_csv(&path, &CROSSOVER_COLUMNS, rows)?;
    for rec in &mut records {
        rec.file = file_name(&path);
    }
    finish(r, command, start, records, None, vec![path])
}

/// Fits the calibration line through a table of appended fits.
pub fn run_calibrate(table: &Path) -> Result<cqed_core::thermo::CalibrationLine, CliError> {
    let text = std::fs::read_to_string(table)
        .map_err(|e| CliError::Io(format!("{}: {e}", table.display())))?;
    let points: Vec<CalibrationPoint> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| CliError::Config(format!("{} line {}: {e}", table.display(), i + 1)))
        })
        .collect::<Result<_, _>>()?;
    let nu = points.first().map(|p| p.fit.nu_ghz).ok_or_else(|| {
        CliError::Config(format!("{}: calibration table is empty", table.display()))
    })?;
    if points.iter().any(|p| p.fit.nu_ghz != nu) {
        return Err(CliError::Config(
            "calibration points were fitted at different cavity frequencies".into(),
        ));
    }
    Ok(calibration_line(&points, nu)?)
}

fn wrong_kind(e: &Experiment, command: &str) -> CliError {
    let hint = match e {
        Experiment::Spectrum { .. } | Experiment::Sweep { .. } => "spectrum",
        Experiment::Rabi { .. } => "rabi",
        Experiment::FitSpectrum { .. } | Experiment::FitRabi { .. } => "fit",
        Experiment::Crossover { .. } => "crossover",
    };
    CliError::Config(format!(
        "`cqed {command}` cannot run a `{}` experiment; use `cqed {hint}`",
        e.kind()
    ))
}
