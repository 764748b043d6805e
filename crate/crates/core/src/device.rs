//! Transmon-in-a-cavity device model: flux-tunable transmon ladder, the
//! multi-level Jaynes–Cummings Hamiltonian, the damping channels of the
//! thermal master equation and the dressed-state ladder.
//!
//! All rates and frequencies in [`DeviceParams`] are angular (rad/s).
//! [`DeviceConfig`] carries the same numbers in laboratory units (GHz for
//! energies/h, MHz for rates quoted as x/2π) and is converted once.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::constants::{angular_to_ghz, flux_phase, ghz_to_angular, mhz_to_angular};
use crate::error::{Error, Result};
use crate::qspace::{
    annihilation, check_coupling_ratios, transmon_lowering, transmon_number, Operator,
    OperatorUnit, SpaceDims,
};
use crate::sparse::{CscMatrix, C64};

/// Below this E_J/E_C the asymptotic transmon spectrum is not trusted.
pub const MIN_EJ_OVER_EC: f64 = 20.0;

/// Device parameters in angular units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    /// Charging energy E_C/ħ.
    pub charging_energy: f64,
    /// Maximum Josephson energy E_J,max/ħ.
    pub josephson_energy_max: f64,
    /// Applied flux in units of the flux quantum.
    pub flux: f64,
    /// Bare cavity frequency ω_r.
    pub cavity_frequency: f64,
    /// Cavity field decay rate κ.
    pub kappa: f64,
    /// Transmon relaxation rate γ.
    pub gamma: f64,
    /// Pure dephasing rate γ_φ; only used by time-domain modelling and has no default.
    pub gamma_phi: Option<f64>,
    /// Qubit–cavity coupling g_ge.
    pub coupling: f64,
    /// g_{l-1,l}/g_ge for l = 1..; `None` means sqrt(l).
    pub coupling_ratios: Option<Vec<f64>>,
}

/// Laboratory-unit view of [`DeviceParams`], as written in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    pub e_c_ghz: f64,
    pub e_j_max_ghz: f64,
    pub nu_r_ghz: f64,
    pub kappa_mhz: f64,
    pub gamma_mhz: f64,
    pub g_ge_mhz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_phi_mhz: Option<f64>,
    /// Flux bias Φ/Φ₀. Mutually exclusive with `detuning_mhz`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flux: Option<f64>,
    /// Qubit–cavity detuning (ν_ge − ν_r) in MHz; the flux is solved for it.
    /// Resonant when neither this nor `flux` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detuning_mhz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling_ratios: Option<Vec<f64>>,
}

impl DeviceConfig {
    /// The measured sample: E_C/h = 0.502 GHz, E_J,max/h = 14.4 GHz,
    /// ν_r = 6.44 GHz, κ/2π = 3.2 MHz, γ/2π = 0.6 MHz, g/2π = 54 MHz.
    pub fn reference_sample() -> Self {
        Self {
            e_c_ghz: 0.502,
            e_j_max_ghz: 14.4,
            nu_r_ghz: 6.44,
            kappa_mhz: 3.2,
            gamma_mhz: 0.6,
            g_ge_mhz: 54.0,
            gamma_phi_mhz: None,
            flux: None,
            detuning_mhz: None,
            coupling_ratios: None,
        }
    }

    pub fn resolve(&self) -> Result<DeviceParams> {
        let mut p = DeviceParams {
            charging_energy: ghz_to_angular(self.e_c_ghz),
            josephson_energy_max: ghz_to_angular(self.e_j_max_ghz),
            flux: 0.0,
            cavity_frequency: ghz_to_angular(self.nu_r_ghz),
            kappa: mhz_to_angular(self.kappa_mhz),
            gamma: mhz_to_angular(self.gamma_mhz),
            gamma_phi: self.gamma_phi_mhz.map(mhz_to_angular),
            coupling: mhz_to_angular(self.g_ge_mhz),
            coupling_ratios: self.coupling_ratios.clone(),
        };
        p.validate()?;
        match (self.flux, self.detuning_mhz) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "give either `flux` or `detuning_mhz`, not both".into(),
                ));
            }
            (Some(f), None) => p.flux = f,
            (None, d) => p = p.with_detuning(mhz_to_angular(d.unwrap_or(0.0)))?,
        }
        Ok(p)
    }
}

impl DeviceParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.charging_energy,
            self.josephson_energy_max,
            self.flux,
            self.cavity_frequency,
            self.kappa,
            self.gamma,
            self.coupling,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("device parameters must be finite".into()));
        }
        if self.charging_energy <= 0.0 || self.josephson_energy_max <= 0.0 {
            return Err(Error::Config("E_C and E_J,max must be positive".into()));
        }
        if self.cavity_frequency <= 0.0 {
            return Err(Error::Config("cavity frequency must be positive".into()));
        }
        for (name, v) in [
            ("kappa", self.kappa),
            ("gamma", self.gamma),
            ("g_ge", self.coupling),
        ] {
            if v < 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if let Some(gp) = self.gamma_phi {
            if !(gp >= 0.0 && gp.is_finite()) {
                return Err(Error::Config(format!(
                    "gamma_phi must be non-negative, got {gp}"
                )));
            }
        }
        Ok(())
    }

    pub fn josephson_energy(&self) -> f64 {
        ej_of_flux(self.josephson_energy_max, self.flux)
    }

    /// ω_ge at the current flux.
    pub fn qubit_frequency(&self) -> f64 {
        transmon_ladder(self.charging_energy, self.josephson_energy(), 2)[1]
    }

    /// ω_ge − ω_r.
    pub fn detuning(&self) -> f64 {
        self.qubit_frequency() - self.cavity_frequency
    }

    /// Copy with the flux re-solved so that ω_ge − ω_r = `detuning` (rad/s).
    pub fn with_detuning(&self, detuning: f64) -> Result<Self> {
        let flux = flux_for_qubit_frequency(
            self.charging_energy,
            self.josephson_energy_max,
            self.cavity_frequency + detuning,
        )?;
        Ok(Self {
            flux,
            ..self.clone()
        })
    }

    pub fn resonant(&self) -> Result<Self> {
        self.with_detuning(0.0)
    }

    /// Coupling ratios for a ladder of `n_transmon` levels.
    pub fn coupling_ratios_for(&self, n_transmon: usize) -> Vec<f64> {
        match &self.coupling_ratios {
            Some(r) => r.clone(),
            None => default_coupling_ratios(n_transmon),
        }
    }

    /// Level energies (rad/s, ground = 0) for `n_levels` transmon levels.
    pub fn transmon_levels(&self, n_levels: usize) -> Vec<f64> {
        transmon_ladder(self.charging_energy, self.josephson_energy(), n_levels)
    }

    /// Warning text when E_J/E_C is too small for the asymptotic spectrum.
    pub fn spectrum_warning(&self) -> Option<String> {
        ej_ec_warning(self.josephson_energy(), self.charging_energy)
    }
}

/// `g_{l-1,l}/g_ge = sqrt(l)` for l = 1..n-1.
pub fn default_coupling_ratios(n_transmon: usize) -> Vec<f64> {
    (1..n_transmon).map(|l| (l as f64).sqrt()).collect()
}

/// `E_J,max |cos(π Φ/Φ₀)|`, in the units of `e_j_max`.
pub fn ej_of_flux(e_j_max: f64, flux: f64) -> f64 {
    // reduced to |Φ/Φ₀| ≤ 1/2 so that periodicity and parity hold bit for bit
    let r = (flux - flux.round()).abs();
    e_j_max * flux_phase(r).cos()
}

/// Transmon level energies relative to the ground state, from the asymptotic
/// large-E_J/E_C expansion `sqrt(8 E_C E_J) m − E_C (m² + m)/2`. Units follow
/// the inputs. Anharmonicity is −E_C per level.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmonSpectrum {
    pub levels: Vec<f64>,
    pub warning: Option<String>,
}

pub fn transmon_frequencies(e_c: f64, e_j: f64, n_levels: usize) -> Result<TransmonSpectrum> {
    if n_levels < 2 {
        return Err(Error::Config(format!(
            "need at least 2 transmon levels, got {n_levels}"
        )));
    }
    if !(e_c > 0.0 && e_j > 0.0) {
        return Err(Error::Domain(format!(
            "E_C = {e_c} and E_J = {e_j} must be positive"
        )));
    }
    Ok(TransmonSpectrum {
        levels: transmon_ladder(e_c, e_j, n_levels),
        warning: ej_ec_warning(e_j, e_c),
    })
}

fn ej_ec_warning(e_j: f64, e_c: f64) -> Option<String> {
    let ratio = e_j / e_c;
    (ratio < MIN_EJ_OVER_EC).then(|| {
        format!("E_J/E_C = {ratio:.2} is below {MIN_EJ_OVER_EC}; asymptotic transmon levels are inaccurate")
    })
}

fn transmon_ladder(e_c: f64, e_j: f64, n_levels: usize) -> Vec<f64> {
    let plasma = (8.0 * e_c * e_j).sqrt();
    (0..n_levels)
        .map(|m| {
            let m = m as f64;
            plasma * m - e_c / 12.0 * (6.0 * m * m + 6.0 * m)
        })
        .collect()
}

/// Flux in [0, 1/2] at which ω_ge equals `target`, by bisection (ω_ge falls
/// monotonically from the sweet spot to half a flux quantum).
pub fn flux_for_qubit_frequency(e_c: f64, e_j_max: f64, target: f64) -> Result<f64> {
    let f = |flux: f64| transmon_ladder(e_c, ej_of_flux(e_j_max, flux), 2)[1] - target;
    let (mut lo, mut hi) = (0.0f64, 0.5f64);
    if f(lo) < 0.0 {
        return Err(Error::Domain(format!(
            "qubit frequency {:.6} GHz is above the sweet spot {:.6} GHz",
            angular_to_ghz(target),
            angular_to_ghz(target + f(lo))
        )));
    }
    if f(hi) > 0.0 {
        return Err(Error::Domain(
            "qubit frequency is not reachable by flux tuning".into(),
        ));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // pick the endpoint closer to the root
    Ok(if f(lo).abs() <= f(hi).abs() { lo } else { hi })
}

/// Lab-frame Jaynes–Cummings Hamiltonian over ħ (rad/s).
pub fn jc_hamiltonian(params: &DeviceParams, dims: SpaceDims) -> Result<Operator> {
    jc_hamiltonian_in_frame(params, dims, 0.0)
}

/// Jaynes–Cummings Hamiltonian in a frame rotating at `frame` for every
/// excitation: `H − frame·N`, with N = a†a + Σ m|m⟩⟨m|. Diagonal entries are
/// formed from detunings directly so that no large cancellation occurs.
pub fn jc_hamiltonian_in_frame(
    params: &DeviceParams,
    dims: SpaceDims,
    frame: f64,
) -> Result<Operator> {
    params.validate()?;
    dims.validate()?;
    let ratios = params.coupling_ratios_for(dims.n_transmon);
    check_coupling_ratios(dims, &ratios)?;
    let levels = params.transmon_levels(dims.n_transmon);
    let cav_detuning = params.cavity_frequency - frame;
    let mut trips = Vec::new();
    for n in 0..dims.n_cavity {
        for (m, e_m) in levels.iter().enumerate() {
            let k = dims.index(n, m);
            let diag = n as f64 * cav_detuning + (e_m - m as f64 * frame);
            trips.push((k, k, C64::new(diag, 0.0)));
        }
    }
    // g_{l-1,l} (a† σ_{l-1,l} + a σ†_{l-1,l}): |n+1, l-1⟩⟨n, l| and its conjugate
    for n in 0..dims.n_cavity - 1 {
        let amp = ((n + 1) as f64).sqrt();
        for l in 1..dims.n_transmon {
            let g = params.coupling * ratios[l - 1] * amp;
            let (bra, ket) = (dims.index(n + 1, l - 1), dims.index(n, l));
            trips.push((bra, ket, C64::new(g, 0.0)));
            trips.push((ket, bra, C64::new(g, 0.0)));
        }
    }
    let m = CscMatrix::from_triplets(dims.total(), dims.total(), trips)?;
    Operator::new(dims, m, OperatorUnit::AngularFrequency)
}

/// One damping channel `rate · D[op]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CollapseChannel {
    pub label: String,
    pub op: Operator,
    /// rad/s
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollapseSet {
    pub channels: Vec<CollapseChannel>,
    pub warnings: Vec<String>,
}

pub const CHANNEL_CAVITY_LOSS: &str = "cavity_loss";
pub const CHANNEL_THERMAL_GAIN: &str = "thermal_gain";
pub const CHANNEL_TRANSMON_RELAXATION: &str = "transmon_relaxation";
pub const CHANNEL_DEPHASING: &str = "transmon_dephasing";

/// Damping channels of the thermal master equation:
/// `(n_th+1)κ D[a]`, `n_th κ D[a†]`, and one relaxation channel
/// `γ D[Σ_l (g_{l-1,l}/g_ge) σ_{l-1,l}]` (a single summed jump operator).
/// With `include_dephasing`, `γ_φ D[Σ_m m|m⟩⟨m|]` is appended.
pub fn collapse_operators(
    params: &DeviceParams,
    n_th: f64,
    dims: SpaceDims,
    include_dephasing: bool,
) -> Result<CollapseSet> {
    params.validate()?;
    if !(n_th >= 0.0 && n_th.is_finite()) {
        return Err(Error::Domain(format!(
            "n_th = {n_th} must be finite and non-negative"
        )));
    }
    let a = annihilation(dims)?;
    let sigma = transmon_lowering(dims, &params.coupling_ratios_for(dims.n_transmon))?;
    let mut channels = vec![
        CollapseChannel {
            label: CHANNEL_CAVITY_LOSS.into(),
            rate: (n_th + 1.0) * params.kappa,
            op: a.clone(),
        },
        CollapseChannel {
            label: CHANNEL_THERMAL_GAIN.into(),
            rate: n_th * params.kappa,
            op: a.adjoint(),
        },
        CollapseChannel {
            label: CHANNEL_TRANSMON_RELAXATION.into(),
            rate: params.gamma,
            op: sigma,
        },
    ];
    if include_dephasing {
        let gamma_phi = params.gamma_phi.ok_or_else(|| {
            Error::Config("dephasing requested but gamma_phi is not set (it has no default)".into())
        })?;
        channels.push(CollapseChannel {
            label: CHANNEL_DEPHASING.into(),
            rate: gamma_phi,
            op: transmon_number(dims)?,
        });
    }
    let mut warnings = Vec::new();
    warnings.extend(crate::qspace::truncation_warning(dims, n_th));
    warnings.extend(params.spectrum_warning());
    Ok(CollapseSet { channels, warnings })
}

/// Eigenstates of one excitation-number block.
#[derive(Debug, Clone, PartialEq)]
pub struct DressedBlock {
    /// Excitation number.
    pub n: usize,
    /// Energies/h in GHz relative to |g,0⟩, ascending.
    pub energies_ghz: Vec<f64>,
    /// Basis states `(photons, level)` spanning the block.
    pub basis: Vec<(usize, usize)>,
    /// Column-major eigenvectors in `basis` coordinates.
    eigvecs: Vec<f64>,
}

impl DressedBlock {
    pub fn eigvec(&self, k: usize) -> &[f64] {
        let m = self.basis.len();
        &self.eigvecs[k * m..(k + 1) * m]
    }

    /// Indices of the two states with the most weight on {|g,n⟩, |e,n-1⟩},
    /// ordered (−, +).
    pub fn doublet(&self) -> Option<(usize, usize)> {
        if self.n == 0 {
            return None;
        }
        let g = self.basis.iter().position(|&b| b == (self.n, 0))?;
        let e = self.basis.iter().position(|&b| b == (self.n - 1, 1))?;
        let mut idx: Vec<usize> = (0..self.energies_ghz.len()).collect();
        let w = |k: usize| self.eigvec(k)[g].powi(2) + self.eigvec(k)[e].powi(2);
        idx.sort_by(|&a, &b| w(b).total_cmp(&w(a)));
        let (a, b) = (idx[0], *idx.get(1)?);
        Some(if self.energies_ghz[a] <= self.energies_ghz[b] {
            (a, b)
        } else {
            (b, a)
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DressedTransition {
    /// `(excitation number, state index within block)`
    pub from: (usize, usize),
    pub to: (usize, usize),
    pub frequency_ghz: f64,
    /// `|⟨to|a†|from⟩|²`
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DressedLevels {
    pub blocks: Vec<DressedBlock>,
    pub transitions: Vec<DressedTransition>,
}

impl DressedLevels {
    /// Splitting of the |n,±⟩ doublet, GHz.
    pub fn splitting(&self, n: usize) -> Option<f64> {
        let b = self.blocks.get(n)?;
        let (lo, hi) = b.doublet()?;
        Some(b.energies_ghz[hi] - b.energies_ghz[lo])
    }

    /// Frequencies of the four |n,±⟩ → |n+1,±⟩ transitions, GHz, keyed
    /// `(from sign, to sign)` with `false` = −.
    pub fn doublet_transitions(&self, n: usize) -> Option<Vec<((bool, bool), f64)>> {
        let lower = self.blocks.get(n)?;
        let upper = self.blocks.get(n + 1)?;
        let (u_lo, u_hi) = upper.doublet()?;
        let from: Vec<(bool, usize)> = if n == 0 {
            vec![(false, 0)]
        } else {
            let (l_lo, l_hi) = lower.doublet()?;
            vec![(false, l_lo), (true, l_hi)]
        };
        let mut out = Vec::new();
        for (fs, fi) in from {
            for (ts, ti) in [(false, u_lo), (true, u_hi)] {
                out.push(((fs, ts), upper.energies_ghz[ti] - lower.energies_ghz[fi]));
            }
        }
        Some(out)
    }
}

/// Diagonalizes each excitation block 0..=n_max of the Jaynes–Cummings
/// Hamiltonian with `n_transmon` levels and tabulates the Δn = 1 transitions
/// driven by the cavity field.
pub fn dressed_levels(
    params: &DeviceParams,
    n_max: usize,
    n_transmon: usize,
) -> Result<DressedLevels> {
    if n_max < 1 {
        return Err(Error::Config("n_max must be at least 1".into()));
    }
    let dims = SpaceDims::new(n_max + 2, n_transmon)?;
    let frame = params.cavity_frequency;
    let h = jc_hamiltonian_in_frame(params, dims, frame)?;
    let mut blocks = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        let basis: Vec<(usize, usize)> = (0..n_transmon.min(n + 1)).map(|l| (n - l, l)).collect();
        let idx: Vec<usize> = basis.iter().map(|&(p, l)| dims.index(p, l)).collect();
        let m = basis.len();
        let block = Mat::<f64>::from_fn(m, m, |i, j| h.matrix().get(idx[i], idx[j]).re);
        let eig = block
            .self_adjoint_eigen(faer::Side::Lower)
            .map_err(|e| Error::NonConvergence(format!("block eigensolver: {e:?}")))?;
        let shift = n as f64 * frame;
        let energies_ghz = (0..m).map(|k| angular_to_ghz(eig.S()[k] + shift)).collect();
        let u = eig.U();
        let eigvecs = (0..m)
            .flat_map(|k| (0..m).map(move |i| u[(i, k)]))
            .collect();
        blocks.push(DressedBlock {
            n,
            energies_ghz,
            basis,
            eigvecs,
        });
    }
    let mut transitions = Vec::new();
    for n in 0..n_max {
        let (lo, hi) = (&blocks[n], &blocks[n + 1]);
        for i in 0..lo.basis.len() {
            for j in 0..hi.basis.len() {
                // ⟨j| a† |i⟩ with a†|p,l⟩ = sqrt(p+1)|p+1,l⟩
                let mut amp = 0.0;
                for (bi, &(p, l)) in lo.basis.iter().enumerate() {
                    if let Some(bj) = hi.basis.iter().position(|&b| b == (p + 1, l)) {
                        amp += hi.eigvec(j)[bj] * ((p + 1) as f64).sqrt() * lo.eigvec(i)[bi];
                    }
                }
                let strength = amp * amp;
                if strength > 1e-12 {
                    transitions.push(DressedTransition {
                        from: (n, i),
                        to: (n + 1, j),
                        frequency_ghz: hi.energies_ghz[j] - lo.energies_ghz[i],
                        strength,
                    });
                }
            }
        }
    }
    Ok(DressedLevels {
        blocks,
        transitions,
    })
}
