//! Linear-response transmission spectra, normalization, Lorentzian fits and
//! classicality diagnostics.
//!
//! The transmitted amplitude at probe frequency ω is the cavity
//! susceptibility
//!
//! ```text
//! t(ω) = Tr[ a (−iΔω − L)⁻¹ [a†, ρ_ss] ],   Δω = ω − ω_frame,
//! ```
//!
//! the Fourier transform of the retarded correlator `⟨[a(τ), a†(0)]⟩`
//! propagated with the quantum regression theorem. An empty cavity gives
//! `t = 1/(κ/2 − iΔω)`. The same quantity is obtained from an explicit weak
//! drive `ε(a + a†)` as `i⟨a⟩/ε`, which [`transmission_weak_drive`] computes
//! as an independent check.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::ghz_to_angular;
use crate::device::{DeviceParams, CHANNEL_DEPHASING};
use crate::dynamics::{
    hamiltonian_superop, steady_state_with, thermal_liouvillian, Liouvillian, Subspace,
};
use crate::error::{Error, Result};
use crate::linsolve::{ShiftedSystem, SolverOptions};
use crate::qspace::{
    annihilation, excitation_number, DensityMatrix, Operator, OperatorUnit, SpaceDims,
};
use crate::sparse::{CscMatrix, C64, ONE, ZERO};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumMethod {
    Resolvent,
    WeakDrive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Normalization {
    /// `|A|² / max |A|²` of the spectrum itself.
    SelfPeak,
    /// `|A|² / max |A_ref|²` against an empty-cavity reference.
    Reference { reference_peak_power: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumResult {
    pub freqs_ghz: Vec<f64>,
    /// Susceptibility in seconds (arbitrary overall scale).
    pub amplitude: Vec<C64>,
    pub power_normalized: Vec<f64>,
    pub method: SpectrumMethod,
    pub params: Option<DeviceParams>,
    pub n_th: Option<f64>,
    pub normalization: Normalization,
    /// False when a dephasing channel was admitted through the override.
    pub reference_model: bool,
    pub warnings: Vec<String>,
}

impl SpectrumResult {
    fn from_amplitudes(freqs_ghz: Vec<f64>, amplitude: Vec<C64>, method: SpectrumMethod) -> Self {
        let peak = amplitude.iter().map(|a| a.norm_sqr()).fold(0.0, f64::max);
        let power_normalized = amplitude
            .iter()
            .map(|a| if peak > 0.0 { a.norm_sqr() / peak } else { 0.0 })
            .collect();
        Self {
            freqs_ghz,
            amplitude,
            power_normalized,
            method,
            params: None,
            n_th: None,
            normalization: Normalization::SelfPeak,
            reference_model: true,
            warnings: Vec::new(),
        }
    }

    pub fn power(&self) -> Vec<f64> {
        self.amplitude.iter().map(|a| a.norm_sqr()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResponseOptions {
    pub solver: SolverOptions,
    /// Admit a transmon dephasing channel in spectroscopy. The result is
    /// then marked as outside the reference model.
    pub include_dephasing: bool,
    /// Frequency points sharing one preconditioner on the iterative path.
    pub chunk: usize,
}

impl Default for ResponseOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            include_dephasing: false,
            chunk: 32,
        }
    }
}

/// Probe frequencies: `points` values evenly spread over
/// `center ± half_span`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrequencyGrid {
    /// GHz; `None` centres the grid on the cavity.
    pub center_ghz: Option<f64>,
    pub half_span_mhz: f64,
    pub points: usize,
}

impl Default for FrequencyGrid {
    fn default() -> Self {
        Self {
            center_ghz: None,
            half_span_mhz: 150.0,
            points: 801,
        }
    }
}

impl FrequencyGrid {
    pub fn frequencies(&self, cavity_ghz: f64) -> Result<Vec<f64>> {
        if self.points < 2 {
            return Err(Error::Config(
                "a frequency grid needs at least 2 points".into(),
            ));
        }
        if !(self.half_span_mhz > 0.0 && self.half_span_mhz.is_finite()) {
            return Err(Error::Config("half_span_mhz must be positive".into()));
        }
        let c = self.center_ghz.unwrap_or(cavity_ghz);
        let h = self.half_span_mhz * 1e-3;
        let n = self.points - 1;
        Ok((0..=n)
            .map(|i| c + h * (2.0 * i as f64 - n as f64) / n as f64)
            .collect())
    }
}

fn check_grid(freqs: &[f64]) -> Result<()> {
    if freqs.is_empty() {
        return Err(Error::Domain("empty frequency grid".into()));
    }
    if freqs.iter().any(|f| !f.is_finite()) || freqs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain(
            "frequencies must be finite and strictly increasing".into(),
        ));
    }
    Ok(())
}

/// `vec(A ρ − ρ A)` for sparse `A`.
fn commutator_vec(a: &CscMatrix, rho: &DensityMatrix) -> Vec<C64> {
    let d = rho.dim();
    let r = rho.as_vec();
    let mut out = vec![ZERO; d * d];
    for (i, k, v) in a.iter() {
        for j in 0..d {
            out[i + j * d] += v * r[k + j * d];
        }
    }
    for (k, j, v) in a.iter() {
        for i in 0..d {
            out[i + j * d] -= r[i + k * d] * v;
        }
    }
    out
}

/// Resolvent transmission amplitude of `L` on the grid `freqs_ghz`.
pub fn transmission_resolvent(
    l: &Liouvillian,
    a: &Operator,
    rho_ss: &DensityMatrix,
    freqs_ghz: &[f64],
    opts: &ResponseOptions,
) -> Result<SpectrumResult> {
    check_grid(freqs_ghz)?;
    let dims = l.dims();
    if a.dims() != dims || rho_ss.dims() != dims {
        return Err(Error::Dimension(
            "operator, state and Liouvillian dimensions differ".into(),
        ));
    }
    let dephased = l.has_channel(CHANNEL_DEPHASING);
    if dephased && !opts.include_dephasing {
        return Err(Error::Config(
            "spectroscopy excludes transmon dephasing; set include_dephasing to override".into(),
        ));
    }
    let d = dims.total();
    let b_full = commutator_vec(a.adjoint().matrix(), rho_ss);
    let sub = Subspace::new(
        l.superop(),
        b_full
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != ZERO)
            .map(|(i, _)| i),
    );
    let b = sub.gather(&b_full);
    // Tr[a X] = Σ a_rc X_cr
    let readout: Vec<(usize, C64)> = a
        .matrix()
        .iter()
        .filter_map(|(r, c, v)| {
            let k = sub.local[c + r * d];
            (k != usize::MAX).then_some((k, v))
        })
        .collect();
    let read = |x: &[C64]| -> C64 { readout.iter().map(|&(k, v)| v * x[k]).sum() };
    let frame = l.frame();
    let shift = |nu: f64| C64::new(0.0, -(ghz_to_angular(nu) - frame));
    let sys = ShiftedSystem::new(&sub.matrix);
    let tag = |nu: f64, e: Error| match e {
        Error::LinearSolve(m) => Error::LinearSolve(format!("at {nu:.9} GHz: {m}")),
        Error::NonConvergence(m) => Error::NonConvergence(format!("at {nu:.9} GHz: {m}")),
        other => other,
    };

    let amplitude: Vec<C64> = if opts.solver.use_direct(sys.dim()) {
        freqs_ghz
            .par_iter()
            .map(|&nu| {
                sys.solve_direct(shift(nu), &b)
                    .map(|x| read(&x))
                    .map_err(|e| tag(nu, e))
            })
            .collect::<Result<_>>()?
    } else {
        let chunk = opts.chunk.max(1);
        let parts: Vec<Vec<C64>> = freqs_ghz
            .par_chunks(chunk)
            .map(|nus| -> Result<Vec<C64>> {
                let centre = nus[nus.len() / 2];
                let pre = sys
                    .preconditioner(shift(centre))
                    .map_err(|e| tag(centre, e))?;
                let mut prev: Option<Vec<C64>> = None;
                let mut out = Vec::with_capacity(nus.len());
                for &nu in nus {
                    let x = sys
                        .solve_iterative(shift(nu), &b, prev.as_deref(), &pre, &opts.solver)
                        .map_err(|e| tag(nu, e))?;
                    out.push(read(&x));
                    prev = Some(x);
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        parts.into_iter().flatten().collect()
    };
    if let Some(k) = amplitude
        .iter()
        .position(|v| !(v.re.is_finite() && v.im.is_finite()))
    {
        return Err(Error::NonConvergence(format!(
            "non-finite amplitude at {:.9} GHz",
            freqs_ghz[k]
        )));
    }
    let mut result =
        SpectrumResult::from_amplitudes(freqs_ghz.to_vec(), amplitude, SpectrumMethod::Resolvent);
    result.reference_model = !dephased;
    Ok(result)
}

/// Resolvent spectrum of the device at `n_th`, self-normalized.
pub fn model_spectrum(
    params: &DeviceParams,
    n_th: f64,
    dims: SpaceDims,
    freqs_ghz: &[f64],
    opts: &ResponseOptions,
) -> Result<SpectrumResult> {
    let model = thermal_liouvillian(
        params,
        n_th,
        dims,
        opts.include_dephasing,
        params.cavity_frequency,
    )?;
    let rho = steady_state_with(&model.liouvillian, &opts.solver)?;
    let a = annihilation(dims)?;
    let mut s = transmission_resolvent(&model.liouvillian, &a, &rho, freqs_ghz, opts)?;
    s.params = Some(params.clone());
    s.n_th = Some(n_th);
    s.warnings = model.warnings;
    Ok(s)
}

/// The same device with the qubit removed from the cavity (g = 0), the
/// limit of a maximally detuned qubit. The bare cavity response does not
/// depend on n_th, so it is evaluated at n_th = 0, where the truncated
/// ladder reproduces it exactly.
pub fn reference_spectrum(
    params: &DeviceParams,
    dims: SpaceDims,
    freqs_ghz: &[f64],
    opts: &ResponseOptions,
) -> Result<SpectrumResult> {
    let uncoupled = DeviceParams {
        coupling: 0.0,
        ..params.clone()
    };
    model_spectrum(&uncoupled, 0.0, dims, freqs_ghz, opts)
}

/// Model spectrum normalized against its own empty-cavity reference.
pub fn normalized_model_spectrum(
    params: &DeviceParams,
    n_th: f64,
    dims: SpaceDims,
    freqs_ghz: &[f64],
    opts: &ResponseOptions,
) -> Result<SpectrumResult> {
    let s = model_spectrum(params, n_th, dims, freqs_ghz, opts)?;
    let r = reference_spectrum(params, dims, freqs_ghz, opts)?;
    normalize(&s, &r)
}

/// `power_normalized = |A|² / max |A_ref|²`.
pub fn normalize(spectrum: &SpectrumResult, reference: &SpectrumResult) -> Result<SpectrumResult> {
    if spectrum.freqs_ghz != reference.freqs_ghz {
        return Err(Error::Dimension(
            "spectrum and reference grids differ".into(),
        ));
    }
    let peak = reference
        .amplitude
        .iter()
        .map(|a| a.norm_sqr())
        .fold(0.0, f64::max);
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::DegenerateData(
            "reference spectrum has no power".into(),
        ));
    }
    let mut out = spectrum.clone();
    out.power_normalized = spectrum
        .amplitude
        .iter()
        .map(|a| a.norm_sqr() / peak)
        .collect();
    out.normalization = Normalization::Reference {
        reference_peak_power: peak,
    };
    Ok(out)
}

/// Drive strength that puts about 0.01 photons in an empty resonant cavity.
pub fn default_probe_amplitude(params: &DeviceParams) -> f64 {
    0.05 * params.kappa
}

/// Largest steady-state probe field `|⟨a⟩|²` tolerated before the spectrum is
/// flagged as outside linear response.
pub const MAX_PROBE_PHOTONS: f64 = 0.1;

/// Transmission from the steady state under an explicit probe `ε(a + a†)`
/// (rad/s), amplitude `i⟨a⟩/ε`, one steady state per frequency.
pub fn transmission_weak_drive(
    params: &DeviceParams,
    n_th: f64,
    dims: SpaceDims,
    freqs_ghz: &[f64],
    epsilon: f64,
    opts: &ResponseOptions,
) -> Result<SpectrumResult> {
    check_grid(freqs_ghz)?;
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Config(format!(
            "probe amplitude must be positive, got {epsilon}"
        )));
    }
    let frame = params.cavity_frequency;
    let model = thermal_liouvillian(params, n_th, dims, opts.include_dephasing, frame)?;
    let a = annihilation(dims)?;
    let drive = a
        .add(&a.adjoint())?
        .scale(epsilon)
        .with_unit(OperatorUnit::AngularFrequency);
    let base = model
        .liouvillian
        .superop()
        .add(&hamiltonian_superop(&drive)?)?;
    // H − ω_p N = (H − ω_r N) − (ω_p − ω_r) N
    let number =
        hamiltonian_superop(&excitation_number(dims)?.with_unit(OperatorUnit::AngularFrequency))?;
    let states: Vec<(C64, f64)> = freqs_ghz
        .par_iter()
        .map(|&nu| -> Result<(C64, f64)> {
            let delta = ghz_to_angular(nu) - frame;
            let m = base.add_scaled(ONE, &number, C64::new(-delta, 0.0))?;
            let l = model.liouvillian.with_superop(m);
            let rho = steady_state_with(&l, &opts.solver).map_err(|e| match e {
                Error::LinearSolve(m) => Error::LinearSolve(format!("at {nu:.9} GHz: {m}")),
                other => other,
            })?;
            let field = rho.expectation(&a)?;
            Ok((C64::new(0.0, 1.0) * field / epsilon, field.norm_sqr()))
        })
        .collect::<Result<_>>()?;
    let (amplitude, probe): (Vec<C64>, Vec<f64>) = states.into_iter().unzip();
    let mut s =
        SpectrumResult::from_amplitudes(freqs_ghz.to_vec(), amplitude, SpectrumMethod::WeakDrive);
    let worst = probe.iter().copied().fold(0.0, f64::max);
    s.warnings = model.warnings;
    if worst > MAX_PROBE_PHOTONS {
        s.warnings.push(format!(
            "probe field reaches |⟨a⟩|² = {worst:.3} > {MAX_PROBE_PHOTONS}; the spectrum is not in linear response"
        ));
    }
    s.params = Some(params.clone());
    s.n_th = Some(n_th);
    s.reference_model = !opts.include_dephasing;
    Ok(s)
}

/// Local maxima `(frequency GHz, value)` above `min_value`, in grid order.
pub fn local_maxima(freqs_ghz: &[f64], values: &[f64], min_value: f64) -> Vec<(f64, f64)> {
    let n = values.len().min(freqs_ghz.len());
    (1..n.saturating_sub(1))
        .filter(|&i| {
            values[i] > values[i - 1] && values[i] >= values[i + 1] && values[i] > min_value
        })
        .map(|i| (freqs_ghz[i], values[i]))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzianFit {
    pub center_ghz: f64,
    pub fwhm_mhz: f64,
    pub amplitude: f64,
    pub baseline: f64,
    /// `√RSS`
    pub residual_norm: f64,
    pub r_squared: f64,
    pub iterations: usize,
    /// `r² ≥ 0.9`.
    pub is_lorentzian: bool,
}

/// Smallest r² still reported as a Lorentzian line.
pub const LORENTZIAN_R2_THRESHOLD: f64 = 0.9;
const LM_MAX_ITER: usize = 500;

pub fn fit_spectrum_lorentzian(spectrum: &SpectrumResult) -> Result<LorentzianFit> {
    fit_lorentzian(&spectrum.freqs_ghz, &spectrum.power_normalized)
}

/// Levenberg–Marquardt fit of `A (w/2)² / ((ν − ν₀)² + (w/2)²) + B`,
/// started from the peak location and half-maximum crossings.
pub fn fit_lorentzian(freqs_ghz: &[f64], y: &[f64]) -> Result<LorentzianFit> {
    let n = freqs_ghz.len();
    if y.len() != n {
        return Err(Error::Dimension(
            "frequency and power columns differ in length".into(),
        ));
    }
    if n < 10 {
        return Err(Error::DegenerateData(format!(
            "{n} points; a Lorentzian fit needs at least 10"
        )));
    }
    check_grid(freqs_ghz)?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateData("non-finite samples".into()));
    }
    let origin = freqs_ghz[0];
    let x: Vec<f64> = freqs_ghz.iter().map(|f| (f - origin) * 1e3).collect();
    let span = x[n - 1] - x[0];

    let (ipk, &ymax) = y
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    let ymin = y.iter().copied().fold(f64::INFINITY, f64::min);
    let a0 = ymax - ymin;
    if !(a0 > 1e-12 * ymax.abs().max(ymin.abs())) || a0 == 0.0 {
        return Err(Error::DegenerateData("flat data: no peak to fit".into()));
    }
    let half = ymin + 0.5 * a0;
    let cross = |range: &mut dyn Iterator<Item = usize>| -> Option<f64> {
        let mut prev = ipk;
        for i in range {
            if y[i] <= half {
                let t = (y[prev] - half) / (y[prev] - y[i]);
                return Some(x[prev] + t * (x[i] - x[prev]));
            }
            prev = i;
        }
        None
    };
    let left = cross(&mut (0..ipk).rev());
    let right = cross(&mut (ipk + 1..n));
    let w0 = match (left, right) {
        (Some(l), Some(r)) => r - l,
        (Some(l), None) => 2.0 * (x[ipk] - l),
        (None, Some(r)) => 2.0 * (r - x[ipk]),
        (None, None) => span / 4.0,
    }
    .max(1e-6 * span);
    if span < 3.0 * w0 {
        return Err(Error::DegenerateData(format!(
            "grid spans {span:.4} MHz, less than three linewidths of {w0:.4} MHz"
        )));
    }

    let model = |p: &[f64; 4], xi: f64| -> (f64, [f64; 4]) {
        let h = 0.5 * p[1];
        let dx = xi - p[0];
        let den = dx * dx + h * h;
        let shape = h * h / den;
        let j = [
            p[2] * h * h * 2.0 * dx / (den * den),
            p[2] * h * dx * dx / (den * den),
            shape,
            1.0,
        ];
        (p[2] * shape + p[3], j)
    };
    let rss_of = |p: &[f64; 4]| -> f64 {
        x.iter()
            .zip(y)
            .map(|(xi, yi)| (yi - model(p, *xi).0).powi(2))
            .sum()
    };

    let mut p = [x[ipk], w0, a0, ymin];
    let mut rss = rss_of(&p);
    let mut mu = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < LM_MAX_ITER {
        iterations += 1;
        let mut jtj = [[0.0; 4]; 4];
        let mut jtr = [0.0; 4];
        for (xi, yi) in x.iter().zip(y) {
            let (m, j) = model(&p, *xi);
            let r = yi - m;
            for a in 0..4 {
                jtr[a] += j[a] * r;
                for b in 0..4 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        let mut improved = false;
        while mu < 1e16 {
            let mut m = jtj;
            for (a, row) in m.iter_mut().enumerate() {
                row[a] += mu * jtj[a][a].max(1e-300);
            }
            let Some(step) = solve4(m, jtr) else {
                mu *= 10.0;
                continue;
            };
            let trial = [
                p[0] + step[0],
                p[1] + step[1],
                p[2] + step[2],
                p[3] + step[3],
            ];
            let trial_rss = rss_of(&trial);
            if trial_rss.is_finite() && trial_rss <= rss {
                let small = step
                    .iter()
                    .zip(&trial)
                    .all(|(s, v)| s.abs() <= 1e-13 * v.abs().max(1e-12 * span));
                let stalled = rss - trial_rss <= 1e-15 * rss;
                p = trial;
                rss = trial_rss;
                mu = (mu / 3.0).max(1e-12);
                improved = true;
                if small || stalled {
                    converged = true;
                }
                break;
            }
            mu *= 4.0;
        }
        if !improved || converged {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence(format!(
            "Lorentzian fit did not converge in {LM_MAX_ITER} iterations"
        )));
    }
    let mean = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let r_squared = 1.0 - rss / tss;
    Ok(LorentzianFit {
        center_ghz: origin + p[0] * 1e-3,
        fwhm_mhz: p[1].abs(),
        amplitude: p[2],
        baseline: p[3],
        residual_norm: rss.sqrt(),
        r_squared,
        iterations,
        is_lorentzian: r_squared >= LORENTZIAN_R2_THRESHOLD,
    })
}

fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for c in 0..4 {
        let piv = (c..4).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[piv][c].abs() < 1e-300 {
            return None;
        }
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..4 {
            let f = a[r][c] / a[c][c];
            for k in c..4 {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = [0.0; 4];
    for r in (0..4).rev() {
        let s: f64 = (r + 1..4).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Where the device sits between the dressed-state (quantum) and the
/// single-Lorentzian (classical) regime at a given thermal occupation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalityReport {
    pub n_th: f64,
    /// `(g/κ)²`
    pub threshold: f64,
    /// `threshold` to two significant figures.
    pub threshold_rounded: f64,
    /// `n_th > (g/κ)²`
    pub classical: bool,
    /// `√n g / (n κ)` at n = n_th; absent at n_th = 0.
    pub dissipation_ratio: Option<f64>,
    /// `2g(√(n+1) − √n)/κ` at n = n_th.
    pub nonlinearity_ratio: f64,
    pub note: String,
}

pub fn classicality_report(params: &DeviceParams, n_th: f64) -> ClassicalityReport {
    let (g, kappa) = (params.coupling, params.kappa);
    let threshold = if kappa > 0.0 {
        (g / kappa).powi(2)
    } else {
        f64::INFINITY
    };
    let threshold_rounded = round_significant(threshold, 2);
    let n = n_th.max(0.0);
    ClassicalityReport {
        n_th,
        threshold,
        threshold_rounded,
        classical: n_th > threshold,
        dissipation_ratio: (n > 0.0).then(|| n.sqrt() * g / (n * kappa)),
        nonlinearity_ratio: 2.0 * g * ((n + 1.0).sqrt() - n.sqrt()) / kappa,
        note:
            "dissipation dominates the √n spacing when √n g < n κ, and the ladder nonlinearity is \
               unresolved when 2g(√(n+1) − √n) < κ; for large n both reduce to n > (g/κ)²"
                .into(),
    }
}

fn round_significant(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let scale = 10f64.powi(digits - 1 - x.abs().log10().floor() as i32);
    (x * scale).round() / scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::DeviceConfig;

    fn reference() -> DeviceParams {
        DeviceConfig::reference_sample().resolve().unwrap()
    }

    fn lorentz(f: &[f64], c: f64, w_mhz: f64, a: f64, b: f64) -> Vec<f64> {
        f.iter()
            .map(|v| {
                let dx = (v - c) * 1e3;
                a * (w_mhz / 2.0).powi(2) / (dx * dx + (w_mhz / 2.0).powi(2)) + b
            })
            .collect()
    }

    #[test]
    fn grid_is_symmetric_and_increasing() {
        let f = FrequencyGrid::default().frequencies(6.44).unwrap();
        assert_eq!(f.len(), 801);
        assert!((f[400] - 6.44).abs() < 1e-15);
        assert!((f[0] - 6.29).abs() < 1e-12 && (f[800] - 6.59).abs() < 1e-12);
        assert!(check_grid(&f).is_ok());
    }

    #[test]
    fn empty_cavity_is_lorentzian_of_width_kappa() {
        let mut p = reference();
        p.coupling = 0.0;
        let dims = SpaceDims::new(4, 2).unwrap();
        let f = FrequencyGrid {
            half_span_mhz: 20.0,
            points: 401,
            ..Default::default()
        }
        .frequencies(6.44)
        .unwrap();
        let s = model_spectrum(&p, 0.0, dims, &f, &ResponseOptions::default()).unwrap();
        let fit = fit_spectrum_lorentzian(&s).unwrap();
        assert!((fit.fwhm_mhz - 3.2).abs() < 0.032, "{fit:?}");
        assert!((fit.center_ghz - 6.44).abs() < 1e-6);
        // exact form 1/(κ/2 − iΔ)
        let kappa = p.kappa;
        for (nu, amp) in f.iter().zip(&s.amplitude) {
            let delta = ghz_to_angular(*nu) - p.cavity_frequency;
            let expect = ONE / C64::new(kappa / 2.0, -delta);
            assert!((amp - expect).norm() < 1e-9 * expect.norm());
        }
    }

    #[test]
    fn self_normalized_reference_peaks_at_one() {
        let p = reference();
        let dims = SpaceDims::new(4, 2).unwrap();
        let f = FrequencyGrid {
            points: 101,
            ..Default::default()
        }
        .frequencies(6.44)
        .unwrap();
        let r = reference_spectrum(&p, dims, &f, &ResponseOptions::default()).unwrap();
        let n = normalize(&r, &r).unwrap();
        let peak = n.power_normalized.iter().copied().fold(0.0, f64::max);
        assert!((peak - 1.0).abs() < 1e-15);
        let mut other = r.clone();
        other.freqs_ghz[0] -= 1e-3;
        assert!(normalize(&r, &other).is_err());
    }

    #[test]
    fn dephasing_requires_override() {
        let mut p = reference();
        p.gamma_phi = Some(1e6);
        let dims = SpaceDims::new(3, 2).unwrap();
        let f = [6.43, 6.44, 6.45];
        let model = thermal_liouvillian(&p, 0.0, dims, true, p.cavity_frequency).unwrap();
        let rho = crate::dynamics::steady_state(&model.liouvillian).unwrap();
        let a = annihilation(dims).unwrap();
        let res = transmission_resolvent(
            &model.liouvillian,
            &a,
            &rho,
            &f,
            &ResponseOptions::default(),
        );
        assert!(matches!(res, Err(Error::Config(_))));
        let opts = ResponseOptions {
            include_dephasing: true,
            ..Default::default()
        };
        let s = transmission_resolvent(&model.liouvillian, &a, &rho, &f, &opts).unwrap();
        assert!(!s.reference_model);
    }

    #[test]
    fn lorentzian_fixed_point() {
        let f: Vec<f64> = (0..201).map(|i| 6.42 + i as f64 * 2e-4).collect();
        let y = lorentz(&f, 6.4413, 3.7, 0.8, 0.02);
        let fit = fit_lorentzian(&f, &y).unwrap();
        assert!((fit.center_ghz - 6.4413).abs() < 1e-9 * 6.4413);
        assert!((fit.fwhm_mhz - 3.7).abs() < 1e-9 * 3.7);
        assert!((fit.amplitude - 0.8).abs() < 1e-9 * 0.8);
        assert!(fit.r_squared > 1.0 - 1e-12);
        assert!(fit.is_lorentzian);
    }

    #[test]
    fn lorentzian_rejects_bad_data() {
        let f: Vec<f64> = (0..50).map(|i| 6.0 + i as f64 * 1e-3).collect();
        assert!(matches!(
            fit_lorentzian(&f, &[0.5; 50]),
            Err(Error::DegenerateData(_))
        ));
        assert!(matches!(
            fit_lorentzian(&f[..5], &[0.1, 0.2, 0.9, 0.2, 0.1]),
            Err(Error::DegenerateData(_))
        ));
        // a line much wider than the window
        let y = lorentz(&f, 6.025, 500.0, 1.0, 0.0);
        assert!(matches!(
            fit_lorentzian(&f, &y),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn doublet_is_not_lorentzian() {
        let f: Vec<f64> = (0..301).map(|i| 6.38 + i as f64 * 4e-4).collect();
        let a = lorentz(&f, 6.386, 1.9, 0.5, 0.0);
        let b = lorentz(&f, 6.494, 1.9, 0.5, 0.0);
        let y: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p + q).collect();
        let fit = fit_lorentzian(&f, &y).unwrap();
        assert!(fit.r_squared < 0.9);
        assert!(!fit.is_lorentzian);
    }

    #[test]
    fn classicality_numbers() {
        let p = reference();
        let r = classicality_report(&p, 370.0);
        assert!((r.threshold - (54.0f64 / 3.2).powi(2)).abs() < 1e-9);
        assert_eq!(r.threshold_rounded, 280.0);
        assert!(r.classical);
        let r1 = classicality_report(&p, 1.0);
        assert!(!r1.classical);
        assert!((r1.nonlinearity_ratio - 2.0 * 54.0 * (2f64.sqrt() - 1.0) / 3.2).abs() < 1e-9);
        assert!((r1.nonlinearity_ratio - 13.98).abs() < 0.01);
        let r0 = classicality_report(&p, 0.0);
        assert!(!r0.classical && r0.dissipation_ratio.is_none());
    }

    #[test]
    fn peaks_are_found() {
        let f: Vec<f64> = (0..11).map(|i| i as f64).collect();
        let y = [0.0, 1.0, 0.0, 0.0, 0.0, 3.0, 2.0, 0.0, 0.5, 0.0, 0.0];
        assert_eq!(local_maxima(&f, &y, 0.75), vec![(1.0, 1.0), (5.0, 3.0)]);
    }
}
