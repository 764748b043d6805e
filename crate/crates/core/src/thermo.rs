//! Thermometry: Bose–Einstein conversions, noise calibration and
//! single-parameter fits of the thermal photon number to spectra and Rabi
//! traces.

use serde::{Deserialize, Serialize};

use crate::constants::{dbm_per_hz_to_watts_per_hz, BOLTZMANN, GHZ, NS, PLANCK};
use crate::device::DeviceParams;
use crate::dynamics::{rabi_sequence, InitialQubit, RabiOptions};
use crate::error::{Error, Result};
use crate::optimize::{brent, linear_lstsq};
use crate::qspace::{truncation_warning, SpaceDims};
use crate::response::{model_spectrum, normalize, reference_spectrum, ResponseOptions};

fn check_frequency(nu_ghz: f64) -> Result<()> {
    if !(nu_ghz > 0.0 && nu_ghz.is_finite()) {
        return Err(Error::Domain(format!(
            "frequency must be positive, got {nu_ghz} GHz"
        )));
    }
    Ok(())
}

/// `hν/k_B` in kelvin.
pub fn photon_temperature(nu_ghz: f64) -> f64 {
    PLANCK * nu_ghz * GHZ / BOLTZMANN
}

/// `n = 1/(e^{hν/k_B T} − 1)`.
pub fn nth_from_temperature(t_kelvin: f64, nu_ghz: f64) -> Result<f64> {
    check_frequency(nu_ghz)?;
    if !(t_kelvin > 0.0 && t_kelvin.is_finite()) {
        return Err(Error::Domain(format!(
            "temperature must be positive, got {t_kelvin} K"
        )));
    }
    Ok(1.0 / (photon_temperature(nu_ghz) / t_kelvin).exp_m1())
}

/// `T = (hν/k_B) / ln(1 + 1/n)`.
pub fn temperature_from_nth(n_th: f64, nu_ghz: f64) -> Result<f64> {
    check_frequency(nu_ghz)?;
    if n_th == 0.0 {
        return Err(Error::NoFiniteTemperature);
    }
    if !(n_th > 0.0 && n_th.is_finite()) {
        return Err(Error::Domain(format!("n_th must be positive, got {n_th}")));
    }
    Ok(photon_temperature(nu_ghz) / (1.0 / n_th).ln_1p())
}

/// Occupation `S/(hν)` of a white noise density `S` given in dBm/Hz.
pub fn noise_occupation(s_dbm_per_hz: f64, nu_ghz: f64) -> Result<f64> {
    check_frequency(nu_ghz)?;
    if s_dbm_per_hz.is_nan() || s_dbm_per_hz == f64::INFINITY {
        return Err(Error::Domain(format!(
            "invalid noise density {s_dbm_per_hz} dBm/Hz"
        )));
    }
    Ok(dbm_per_hz_to_watts_per_hz(s_dbm_per_hz) / (PLANCK * nu_ghz * GHZ))
}

/// `n_th = S/(hν) + n₀`; `S = −∞` means no applied noise.
pub fn nth_from_noise(s_dbm_per_hz: f64, nu_ghz: f64, n0: f64) -> Result<f64> {
    if !(n0 >= 0.0 && n0.is_finite()) {
        return Err(Error::Domain(format!(
            "background occupation must be non-negative, got {n0}"
        )));
    }
    Ok(noise_occupation(s_dbm_per_hz, nu_ghz)? + n0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThermalSource {
    AppliedNoise,
    FittedSpectrum,
    FittedRabi,
}

/// A thermal occupation with its equivalent field temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalPoint {
    pub n_th: f64,
    /// `None` for n_th = 0.
    pub t_c_kelvin: Option<f64>,
    pub nu_ghz: f64,
    pub source: ThermalSource,
}

impl ThermalPoint {
    pub fn from_nth(n_th: f64, nu_ghz: f64, source: ThermalSource) -> Result<Self> {
        let t_c_kelvin = match temperature_from_nth(n_th, nu_ghz) {
            Ok(t) => Some(t),
            Err(Error::NoFiniteTemperature) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            n_th,
            t_c_kelvin,
            nu_ghz,
            source,
        })
    }

    pub fn from_temperature(t_kelvin: f64, nu_ghz: f64, source: ThermalSource) -> Result<Self> {
        Ok(Self {
            n_th: nth_from_temperature(t_kelvin, nu_ghz)?,
            t_c_kelvin: Some(t_kelvin),
            nu_ghz,
            source,
        })
    }
}

/// Applied noise at the cavity input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseCalibration {
    /// Density at the cavity, attenuation already applied, dBm/Hz.
    pub s_n_dbm_per_hz: f64,
    /// Background occupation without applied noise.
    pub n0: f64,
    /// Line attenuation between source and cavity, dB.
    pub attenuation_db: f64,
}

impl NoiseCalibration {
    pub fn new(s_n_dbm_per_hz: f64, n0: f64, attenuation_db: f64) -> Result<Self> {
        if !(n0 >= 0.0 && n0.is_finite()) {
            return Err(Error::Domain(format!(
                "background occupation must be non-negative, got {n0}"
            )));
        }
        Ok(Self {
            s_n_dbm_per_hz,
            n0,
            attenuation_db,
        })
    }

    /// Density at the source, before the attenuation.
    pub fn source_dbm_per_hz(&self) -> f64 {
        self.s_n_dbm_per_hz + self.attenuation_db
    }

    pub fn point(&self, nu_ghz: f64) -> Result<ThermalPoint> {
        ThermalPoint::from_nth(
            nth_from_noise(self.s_n_dbm_per_hz, nu_ghz, self.n0)?,
            nu_ghz,
            ThermalSource::AppliedNoise,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    /// Upper end of the search interval `[0, n_max]`.
    pub n_max: f64,
    pub x_tol: f64,
    pub max_iter: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_max: 2.0,
            x_tol: 1e-7,
            max_iter: 200,
        }
    }
}

impl FitConfig {
    fn validate(&self) -> Result<()> {
        if !(self.n_max > 0.0 && self.n_max.is_finite()) {
            return Err(Error::Config(format!(
                "n_max must be positive, got {}",
                self.n_max
            )));
        }
        if !(self.x_tol > 0.0) {
            return Err(Error::Config("x_tol must be positive".into()));
        }
        Ok(())
    }
}

/// Result of a one-parameter thermal fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalFit {
    pub n_th: f64,
    /// `None` when the fit sits at n_th = 0.
    pub t_c_kelvin: Option<f64>,
    pub nu_ghz: f64,
    /// Root-mean-square misfit at the optimum.
    pub residual_norm: f64,
    pub rss: f64,
    /// One-standard-deviation uncertainty (sandwich estimate).
    pub sigma: f64,
    /// `[n_th − σ, n_th + σ]`, clipped at zero.
    pub interval: [f64; 2],
    /// The lower end of the interval is the boundary n_th = 0.
    pub one_sided: bool,
    /// The misfit barely depends on n_th; the interval is the search range.
    pub insensitive: bool,
    pub method: ThermalSource,
    pub iterations: usize,
    pub evaluations: usize,
    pub points_used: usize,
    pub warnings: Vec<String>,
}

impl ThermalFit {
    /// `[n − kσ, n + kσ]` clipped at zero.
    pub fn interval_with(&self, k: f64) -> [f64; 2] {
        [
            (self.n_th - k * self.sigma).max(0.0),
            self.n_th + k * self.sigma,
        ]
    }

    pub fn covers(&self, n: f64, k: f64) -> bool {
        let [lo, hi] = self.interval_with(k);
        lo <= n && n <= hi
    }
}

/// Least-squares fit of `model(n)` to `data` on `[0, n_max]`. The
/// uncertainty is the leverage-corrected sandwich estimate
/// `Σ J²r²/(1 − h)² / (Σ J²)²`, which stays valid when the noise level
/// varies from point to point.
fn fit_profile<F>(
    mut model: F,
    data: &[f64],
    cfg: &FitConfig,
    nu_ghz: f64,
    method: ThermalSource,
    warnings: Vec<String>,
) -> Result<ThermalFit>
where
    F: FnMut(f64) -> Result<Vec<f64>>,
{
    let points = data.len();
    if points < 2 {
        return Err(Error::DegenerateData(format!(
            "{points} data points; need at least 2"
        )));
    }
    let mut evaluations = 0usize;
    let mut eval = |n: f64| -> Result<Vec<f64>> {
        evaluations += 1;
        let m = model(n)?;
        if m.len() != points {
            return Err(Error::Dimension(format!(
                "model has {} points, data {points}",
                m.len()
            )));
        }
        Ok(m)
    };
    let rss_of = |m: &[f64]| -> f64 { m.iter().zip(data).map(|(a, b)| (a - b).powi(2)).sum() };
    let best = brent(
        &mut |n| eval(n).map(|m| rss_of(&m)),
        0.0,
        cfg.n_max,
        cfg.x_tol,
        cfg.max_iter,
    )?;
    let x = best.x;
    let center = eval(x)?;
    let f0 = rss_of(&center);
    // Jacobian by central differences; one-sided next to either end
    let h = (0.02 * x).max(1e-3 * cfg.n_max);
    let (lo, hi) = if x - h >= 0.0 && x + h <= cfg.n_max {
        (x - h, x + h)
    } else if x + h <= cfg.n_max {
        (x, x + h)
    } else {
        (x - h, x)
    };
    let m_lo = if lo == x { center.clone() } else { eval(lo)? };
    let m_hi = if hi == x { center.clone() } else { eval(hi)? };
    let jac: Vec<f64> = m_hi
        .iter()
        .zip(&m_lo)
        .map(|(a, b)| (a - b) / (hi - lo))
        .collect();
    let jj: f64 = jac.iter().map(|j| j * j).sum();
    // leverage-corrected residuals r/(1 − h), h = J²/ΣJ²
    let meat: f64 = jac
        .iter()
        .zip(&center)
        .zip(data)
        .map(|((j, m), d)| (j * (d - m) / (1.0 - j * j / jj).max(1e-3)).powi(2))
        .sum();
    let sigma = meat.sqrt() / jj;
    let insensitive = !(jj > 0.0 && sigma.is_finite() && sigma < cfg.n_max);
    let (sigma, interval) = if insensitive {
        (cfg.n_max, [0.0, cfg.n_max])
    } else {
        (sigma, [(x - sigma).max(0.0), x + sigma])
    };
    let point = ThermalPoint::from_nth(x, nu_ghz, method)?;
    Ok(ThermalFit {
        n_th: x,
        t_c_kelvin: point.t_c_kelvin,
        nu_ghz,
        residual_norm: (f0 / points as f64).sqrt(),
        rss: f0,
        sigma,
        interval,
        one_sided: interval[0] == 0.0,
        insensitive,
        method,
        iterations: best.iterations,
        evaluations,
        points_used: points,
        warnings,
    })
}

/// Normalized transmission data, `power_normalized` relative to the
/// empty-cavity peak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredSpectrum {
    pub freqs_ghz: Vec<f64>,
    pub power_normalized: Vec<f64>,
}

/// Fits n_th as the only free parameter of the normalized resolvent
/// spectrum.
pub fn fit_nth_spectrum(
    measured: &MeasuredSpectrum,
    params: &DeviceParams,
    dims: SpaceDims,
    cfg: &FitConfig,
    opts: &ResponseOptions,
) -> Result<ThermalFit> {
    cfg.validate()?;
    let n = measured.freqs_ghz.len();
    if measured.power_normalized.len() != n {
        return Err(Error::Dimension(
            "frequency and power columns differ in length".into(),
        ));
    }
    let mut warnings: Vec<String> = truncation_warning(dims, cfg.n_max).into_iter().collect();
    warnings.extend(params.spectrum_warning());
    let reference = reference_spectrum(params, dims, &measured.freqs_ghz, opts)?;
    let model = |n_th: f64| -> Result<Vec<f64>> {
        let model = model_spectrum(params, n_th, dims, &measured.freqs_ghz, opts)?;
        Ok(normalize(&model, &reference)?.power_normalized)
    };
    let nu = crate::constants::angular_to_ghz(params.cavity_frequency);
    fit_profile(
        model,
        &measured.power_normalized,
        cfg,
        nu,
        ThermalSource::FittedSpectrum,
        warnings,
    )
}

/// Excited-state population against interaction time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredRabi {
    pub tau_ns: Vec<f64>,
    pub p_e: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RabiFitConfig {
    pub fit: FitConfig,
    pub initial: InitialQubit,
    /// Samples with τ below this (ns) are ignored.
    pub min_tau_ns: f64,
    pub rabi: RabiOptions,
}

impl Default for RabiFitConfig {
    fn default() -> Self {
        Self {
            fit: FitConfig::default(),
            initial: InitialQubit::Ground,
            min_tau_ns: 0.0,
            rabi: RabiOptions::default(),
        }
    }
}

/// Fits n_th as the only free parameter of the Rabi sequence.
pub fn fit_nth_rabi(
    measured: &MeasuredRabi,
    params: &DeviceParams,
    dims: SpaceDims,
    cfg: &RabiFitConfig,
) -> Result<ThermalFit> {
    cfg.fit.validate()?;
    if measured.tau_ns.len() != measured.p_e.len() {
        return Err(Error::Dimension(
            "tau and P_e columns differ in length".into(),
        ));
    }
    if params.gamma_phi.is_none() {
        return Err(Error::Config(
            "Rabi fits need gamma_phi (it has no default)".into(),
        ));
    }
    let kept: Vec<(f64, f64)> = measured
        .tau_ns
        .iter()
        .zip(&measured.p_e)
        .filter(|(t, _)| **t >= cfg.min_tau_ns)
        .map(|(t, p)| (*t, *p))
        .collect();
    if kept.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::Domain(
            "tau values must be strictly increasing".into(),
        ));
    }
    let tau: Vec<f64> = kept.iter().map(|(t, _)| t * NS).collect();
    let data: Vec<f64> = kept.iter().map(|(_, p)| *p).collect();
    let mut warnings: Vec<String> = truncation_warning(dims, cfg.fit.n_max)
        .into_iter()
        .collect();
    if let Some(&last) = tau.last() {
        let period = std::f64::consts::PI / params.coupling;
        if last < 3.0 * period {
            warnings.push(format!(
                "τ grid spans {:.2} vacuum Rabi periods; at least 3 are recommended",
                last / period
            ));
        }
    }
    let model = |n_th: f64| -> Result<Vec<f64>> {
        Ok(
            rabi_sequence(params, n_th, dims, &tau, cfg.initial, &cfg.rabi)?
                .p_e()
                .to_vec(),
        )
    };
    let nu = crate::constants::angular_to_ghz(params.cavity_frequency);
    fit_profile(
        model,
        &data,
        &cfg.fit,
        nu,
        ThermalSource::FittedRabi,
        warnings,
    )
}

/// One noise setting and the occupation fitted there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub s_n_dbm_per_hz: f64,
    pub fit: ThermalFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationLine {
    /// Background occupation n₀.
    pub intercept: f64,
    pub intercept_sigma: f64,
    /// Expected to be 1 once the attenuation is folded into S_n.
    pub slope: f64,
    pub slope_sigma: f64,
    /// `n_fit − (intercept + slope x)`, in input order.
    pub residuals: Vec<f64>,
    /// Inverse-variance weights were used (all fits had σ > 0).
    pub weighted: bool,
}

/// Weighted least-squares line of fitted n_th against the applied noise
/// occupation `S_n/(hν)`.
pub fn calibration_line(points: &[CalibrationPoint], nu_ghz: f64) -> Result<CalibrationLine> {
    if points.len() < 3 {
        return Err(Error::RankDeficient(format!(
            "{} calibration points; need at least 3",
            points.len()
        )));
    }
    let x: Vec<f64> = points
        .iter()
        .map(|p| noise_occupation(p.s_n_dbm_per_hz, nu_ghz))
        .collect::<Result<_>>()?;
    let y: Vec<f64> = points.iter().map(|p| p.fit.n_th).collect();
    let (xmin, xmax) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(*v), b.max(*v))
        });
    if !(xmax - xmin > 1e-12 * xmax.abs().max(1e-300)) {
        return Err(Error::RankDeficient(
            "all points share one noise setting".into(),
        ));
    }
    let weighted = points
        .iter()
        .all(|p| p.fit.sigma > 0.0 && p.fit.sigma.is_finite());
    let w: Option<Vec<f64>> =
        weighted.then(|| points.iter().map(|p| p.fit.sigma.powi(-2)).collect());
    let fit = linear_lstsq(&[vec![1.0; x.len()], x.clone()], &y, w.as_deref())?;
    let dof = (points.len() - 2) as f64;
    let scale = if dof > 0.0 { fit.rss / dof } else { 0.0 };
    let residuals = x
        .iter()
        .zip(&y)
        .map(|(xi, yi)| yi - fit.coef[0] - fit.coef[1] * xi)
        .collect();
    Ok(CalibrationLine {
        intercept: fit.coef[0],
        intercept_sigma: (fit.unscaled_covariance[0] * scale).sqrt(),
        slope: fit.coef[1],
        slope_sigma: (fit.unscaled_covariance[3] * scale).sqrt(),
        residuals,
        weighted,
    })
}
