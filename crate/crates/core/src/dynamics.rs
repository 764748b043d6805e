//! Liouvillian assembly, steady states and time evolution of the thermal
//! master equation.
//!
//! Density matrices are vectorized by column stacking,
//! `vec(A ρ B) = (Bᵀ ⊗ A) vec(ρ)`, so that `vec(ρ)[i + j d] = ρ_ij`.
//!
//! Every generator built here conserves the excitation-number structure of
//! its seed (the Jaynes–Cummings Hamiltonian and all damping channels move
//! coherences between fixed excitation-number differences), so solves and
//! propagations are carried out on the subspace of `vec(ρ)` reachable from
//! the seed through the sparsity graph of `L`. The restriction is exact.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::device::{collapse_operators, jc_hamiltonian_in_frame, CollapseChannel, DeviceParams};
use crate::error::{Error, Result};
use crate::linsolve::{self, SolverOptions};
use crate::optimize::{brent, linear_lstsq};
use crate::qspace::{transmon_number, DensityMatrix, Operator, OperatorUnit, SpaceDims};
use crate::sparse::{CscMatrix, C64, ONE, ZERO};

const MINUS_I: C64 = C64::new(0.0, -1.0);

/// Superoperator of `ρ ↦ A ρ B`.
pub fn sprepost(a: &CscMatrix, b: &CscMatrix) -> CscMatrix {
    b.transpose().kron(a)
}

/// `D[C] = C̄⊗C − ½(I⊗C†C) − ½((C†C)ᵀ⊗I)`.
pub fn lindblad_dissipator(c: &Operator) -> Result<CscMatrix> {
    let d = c.dims().total();
    let m = c.matrix();
    if m.nrows() != d || m.ncols() != d {
        return Err(Error::Dimension(
            "collapse operator does not match its space".into(),
        ));
    }
    let id = CscMatrix::identity(d);
    let cdc = m.adjoint().matmul(m)?;
    let jump = m.conj().kron(m);
    let left = id.kron(&cdc);
    let right = cdc.transpose().kron(&id);
    let half = C64::new(-0.5, 0.0);
    jump.add_scaled(ONE, &left, half)?
        .add_scaled(ONE, &right, half)
}

/// `−i(I⊗H − Hᵀ⊗I)`.
pub fn hamiltonian_superop(h: &Operator) -> Result<CscMatrix> {
    let d = h.dims().total();
    let id = CscMatrix::identity(d);
    let left = id.kron(h.matrix());
    let right = h.matrix().transpose().kron(&id);
    Ok(left.sub(&right)?.scale(MINUS_I))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRecord {
    pub label: String,
    /// rad/s
    pub rate: f64,
}

/// Generator of the master equation on column-stacked density matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Liouvillian {
    dims: SpaceDims,
    superop: CscMatrix,
    provenance: Vec<ChannelRecord>,
    hamiltonian_id: String,
    frame: f64,
}

impl Liouvillian {
    pub fn dims(&self) -> SpaceDims {
        self.dims
    }
    pub fn superop(&self) -> &CscMatrix {
        &self.superop
    }
    pub fn provenance(&self) -> &[ChannelRecord] {
        &self.provenance
    }
    pub fn hamiltonian_id(&self) -> &str {
        &self.hamiltonian_id
    }
    /// Angular frequency of the rotating frame the Hamiltonian is written in.
    pub fn frame(&self) -> f64 {
        self.frame
    }

    /// Same channels and Hamiltonian label, different generator matrix.
    pub(crate) fn with_superop(&self, superop: CscMatrix) -> Self {
        Self {
            dims: self.dims,
            superop,
            provenance: self.provenance.clone(),
            hamiltonian_id: self.hamiltonian_id.clone(),
            frame: self.frame,
        }
    }

    pub fn with_hamiltonian_id(mut self, id: impl Into<String>) -> Self {
        self.hamiltonian_id = id.into();
        self
    }

    pub fn with_frame(mut self, frame: f64) -> Self {
        self.frame = frame;
        self
    }

    /// True if a channel with this label and a positive rate is present.
    pub fn has_channel(&self, label: &str) -> bool {
        self.provenance
            .iter()
            .any(|c| c.label == label && c.rate > 0.0)
    }

    /// `‖vec(I)ᵀ L‖_∞ / ‖L‖_∞`.
    pub fn trace_preservation_error(&self) -> f64 {
        let d = self.dims.total();
        let m = &self.superop;
        let mut worst = 0.0f64;
        for j in 0..m.ncols() {
            let mut s = ZERO;
            for k in m.col_ptr()[j]..m.col_ptr()[j + 1] {
                if m.row_idx()[k] % (d + 1) == 0 {
                    s += m.values()[k];
                }
            }
            worst = worst.max(s.norm());
        }
        let scale = m.norm_inf();
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }

    /// `L[ρ]` as a (not necessarily physical) column-stacked matrix.
    pub fn apply(&self, rho: &DensityMatrix) -> Result<Vec<C64>> {
        if rho.dims() != self.dims {
            return Err(Error::Dimension(
                "state and Liouvillian dimensions differ".into(),
            ));
        }
        let mut out = vec![ZERO; self.superop.nrows()];
        self.superop.matvec(rho.as_vec(), &mut out);
        Ok(out)
    }
}

/// `L = −i(I⊗H − Hᵀ⊗I) + Σ_k rate_k D[C_k]`.
pub fn build_liouvillian(h: &Operator, channels: &[CollapseChannel]) -> Result<Liouvillian> {
    let dims = h.dims();
    if h.unit() != OperatorUnit::AngularFrequency && h.nnz() > 0 {
        return Err(Error::Config(
            "Hamiltonian must carry angular-frequency units".into(),
        ));
    }
    let mut superop = hamiltonian_superop(h)?;
    let mut provenance = Vec::with_capacity(channels.len());
    for ch in channels {
        if ch.op.dims() != dims {
            return Err(Error::Dimension(format!(
                "channel `{}` acts on {:?}, Hamiltonian on {:?}",
                ch.label,
                ch.op.dims(),
                dims
            )));
        }
        if !(ch.rate >= 0.0 && ch.rate.is_finite()) {
            return Err(Error::Config(format!(
                "channel `{}` has invalid rate {}",
                ch.label, ch.rate
            )));
        }
        if ch.rate > 0.0 {
            superop =
                superop.add_scaled(ONE, &lindblad_dissipator(&ch.op)?, C64::new(ch.rate, 0.0))?;
        }
        provenance.push(ChannelRecord {
            label: ch.label.clone(),
            rate: ch.rate,
        });
    }
    Ok(Liouvillian {
        dims,
        superop,
        provenance,
        hamiltonian_id: "H".into(),
        frame: 0.0,
    })
}

/// Liouvillian of the device at thermal occupation `n_th`, with the
/// Hamiltonian written in a frame rotating at `frame` (rad/s).
#[derive(Debug, Clone)]
pub struct ThermalModel {
    pub liouvillian: Liouvillian,
    pub warnings: Vec<String>,
}

pub fn thermal_liouvillian(
    params: &DeviceParams,
    n_th: f64,
    dims: SpaceDims,
    include_dephasing: bool,
    frame: f64,
) -> Result<ThermalModel> {
    let h = jc_hamiltonian_in_frame(params, dims, frame)?;
    let set = collapse_operators(params, n_th, dims, include_dephasing)?;
    let l = build_liouvillian(&h, &set.channels)?
        .with_hamiltonian_id(format!(
            "jaynes_cummings_rwa(frame = {:.9} GHz)",
            crate::constants::angular_to_ghz(frame)
        ))
        .with_frame(frame);
    Ok(ThermalModel {
        liouvillian: l,
        warnings: set.warnings,
    })
}

/// Index set closed under `m`, grown from `seeds`, and the restriction of `m`
/// to it.
#[derive(Debug, Clone)]
pub(crate) struct Subspace {
    pub keep: Vec<usize>,
    pub local: Vec<usize>,
    pub matrix: CscMatrix,
}

impl Subspace {
    pub fn new(m: &CscMatrix, seeds: impl IntoIterator<Item = usize>) -> Self {
        Self::with_extra(m, seeds, None)
    }

    /// As [`Subspace::new`], also closing under a second generator with the
    /// returned `(subspace, restricted extra)`.
    pub fn with_extra(
        m: &CscMatrix,
        seeds: impl IntoIterator<Item = usize>,
        extra: Option<&CscMatrix>,
    ) -> Self {
        let n = m.ncols();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::new();
        for s in seeds {
            if !seen[s] {
                seen[s] = true;
                queue.push_back(s);
            }
        }
        while let Some(j) = queue.pop_front() {
            let mats = std::iter::once(m).chain(extra);
            for mat in mats {
                for k in mat.col_ptr()[j]..mat.col_ptr()[j + 1] {
                    let i = mat.row_idx()[k];
                    if !seen[i] {
                        seen[i] = true;
                        queue.push_back(i);
                    }
                }
            }
        }
        let keep: Vec<usize> = (0..n).filter(|&i| seen[i]).collect();
        let mut local = vec![usize::MAX; n];
        for (k, &g) in keep.iter().enumerate() {
            local[g] = k;
        }
        let matrix = if keep.len() == n {
            m.clone()
        } else {
            m.submatrix(&keep)
        };
        Self {
            keep,
            local,
            matrix,
        }
    }

    pub fn restrict(&self, m: &CscMatrix) -> CscMatrix {
        if self.keep.len() == m.ncols() {
            m.clone()
        } else {
            m.submatrix(&self.keep)
        }
    }

    pub fn gather(&self, full: &[C64]) -> Vec<C64> {
        self.keep.iter().map(|&g| full[g]).collect()
    }

    pub fn scatter(&self, local: &[C64], n_full: usize) -> Vec<C64> {
        let mut out = vec![ZERO; n_full];
        for (&g, &v) in self.keep.iter().zip(local) {
            out[g] = v;
        }
        out
    }
}

fn support(v: &[C64]) -> impl Iterator<Item = usize> + '_ {
    v.iter()
        .enumerate()
        .filter(|(_, x)| **x != ZERO)
        .map(|(i, _)| i)
}

/// Unique stationary state of an ergodic Liouvillian.
pub fn steady_state(l: &Liouvillian) -> Result<DensityMatrix> {
    steady_state_with(l, &SolverOptions::default())
}

/// Replaces one row of `L ρ = 0` with the trace condition and solves the
/// resulting non-singular system.
pub fn steady_state_with(l: &Liouvillian, opts: &SolverOptions) -> Result<DensityMatrix> {
    let dims = l.dims;
    let d = dims.total();
    let diag: Vec<usize> = (0..d).map(|k| k * (d + 1)).collect();
    let sub = Subspace::new(&l.superop, diag.iter().copied());
    let local_diag: Vec<usize> = diag.iter().map(|&k| sub.local[k]).collect();
    let m = &sub.matrix;
    let scale = m.max_abs();
    if scale == 0.0 {
        return Err(Error::DegenerateSteadyState(
            "the Liouvillian is zero".into(),
        ));
    }
    let r = local_diag[0];
    let trips = m
        .iter()
        .filter(|&(i, _, _)| i != r)
        .chain(local_diag.iter().map(|&k| (r, k, C64::new(scale, 0.0))));
    let a = CscMatrix::from_triplets(m.nrows(), m.ncols(), trips)?;
    let mut b = vec![ZERO; m.nrows()];
    b[r] = C64::new(scale, 0.0);
    let x = linsolve::solve(&a, &b, opts).map_err(|e| match e {
        Error::LinearSolve(msg) => Error::DegenerateSteadyState(format!(
            "trace-constrained system is singular ({msg}); the null space of L is not one-dimensional"
        )),
        other => other,
    })?;

    let mut resid = vec![ZERO; m.nrows()];
    m.matvec(&x, &mut resid);
    let rnorm = resid.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let lnorm = m.norm_inf();
    if !(rnorm <= 1e-10 * lnorm) {
        return Err(Error::NonConvergence(format!(
            "steady-state residual {rnorm:.3e} exceeds 1e-10 × ‖L‖ = {:.3e}",
            1e-10 * lnorm
        )));
    }

    let full = sub.scatter(&x, d * d);
    let mut data = vec![ZERO; d * d];
    let mut trace = ZERO;
    for j in 0..d {
        for i in 0..d {
            data[i + j * d] = 0.5 * (full[i + j * d] + full[j + i * d].conj());
        }
        trace += data[j + j * d];
    }
    data.iter_mut().for_each(|v| *v /= trace.re);
    DensityMatrix::new(dims, data)
        .map_err(|e| Error::NonConvergence(format!("steady state is not physical: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// Dormand–Prince 5(4) with local error control.
    Rk45,
    /// Arnoldi approximation of the matrix exponential with adaptive substeps.
    Krylov,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolveOptions {
    pub integrator: Integrator,
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    pub krylov_dim: usize,
    /// Keep every output state in the trajectory.
    pub store_states: bool,
    /// Compute the smallest eigenvalue of every output state.
    pub check_positivity: bool,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            integrator: Integrator::Rk45,
            rtol: 1e-8,
            atol: 1e-10,
            max_steps: 5_000_000,
            krylov_dim: 30,
            store_states: true,
            check_positivity: true,
        }
    }
}

impl EvolveOptions {
    fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::Config(
                "integrator tolerances must be positive".into(),
            ));
        }
        if self.krylov_dim < 2 {
            return Err(Error::Config("krylov_dim must be at least 2".into()));
        }
        Ok(())
    }
}

/// Physical-invariant checks gathered over a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDiagnostics {
    pub steps_accepted: usize,
    pub steps_rejected: usize,
    /// `max_k |Tr ρ(t_k) − 1|`
    pub max_trace_drift: f64,
    pub max_hermiticity_error: f64,
    /// Smallest eigenvalue over all states, when positivity was checked.
    pub min_eigenvalue: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Seconds.
    pub times: Vec<f64>,
    /// Empty when states were not stored.
    pub states: Vec<DensityMatrix>,
    pub observables: BTreeMap<String, Vec<f64>>,
    pub diagnostics: TrajectoryDiagnostics,
}

/// Propagates `rho0` (given at t = 0) to each of `times`.
pub fn evolve(
    l: &Liouvillian,
    rho0: &DensityMatrix,
    times: &[f64],
    opts: &EvolveOptions,
) -> Result<Trajectory> {
    evolve_observed(l, rho0, times, &[], opts)
}

/// As [`evolve`], also recording `Re Tr[O ρ(t)]` for each named observable.
pub fn evolve_observed(
    l: &Liouvillian,
    rho0: &DensityMatrix,
    times: &[f64],
    observables: &[(&str, &Operator)],
    opts: &EvolveOptions,
) -> Result<Trajectory> {
    propagate(l, None, rho0, times, observables, opts)
}

/// Time-dependent part `δ(t) K` of a generator.
struct Modulation<'a> {
    k: &'a CscMatrix,
    delta: &'a dyn Fn(f64) -> f64,
    /// Times at which `δ` has a kink.
    breakpoints: Vec<f64>,
}

fn propagate(
    l: &Liouvillian,
    modulation: Option<Modulation<'_>>,
    rho0: &DensityMatrix,
    times: &[f64],
    observables: &[(&str, &Operator)],
    opts: &EvolveOptions,
) -> Result<Trajectory> {
    opts.validate()?;
    let dims = l.dims;
    if rho0.dims() != dims {
        return Err(Error::Dimension(
            "initial state and Liouvillian dimensions differ".into(),
        ));
    }
    for (name, op) in observables {
        if op.dims() != dims {
            return Err(Error::Dimension(format!(
                "observable `{name}` has the wrong dimensions"
            )));
        }
    }
    if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(Error::Domain(
            "output times must be finite and non-negative".into(),
        ));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain(
            "output times must be strictly increasing".into(),
        ));
    }
    let d = dims.total();
    let sub = Subspace::with_extra(
        &l.superop,
        support(rho0.as_vec()),
        modulation.as_ref().map(|m| m.k),
    );
    let x0 = sub.gather(rho0.as_vec());

    // observables read through local indices: Tr[Oρ] = Σ O_rc ρ_cr
    let obs_terms: Vec<Vec<(usize, C64)>> = observables
        .iter()
        .map(|(_, op)| {
            op.matrix()
                .iter()
                .filter_map(|(r, c, v)| {
                    let loc = sub.local[c + r * d];
                    (loc != usize::MAX).then_some((loc, v))
                })
                .collect()
        })
        .collect();
    let local_diag: Vec<usize> = (0..d)
        .map(|k| sub.local[k * (d + 1)])
        .filter(|&k| k != usize::MAX)
        .collect();

    let mut out = Trajectory {
        times: times.to_vec(),
        states: Vec::new(),
        observables: observables
            .iter()
            .map(|(n, _)| (n.to_string(), Vec::with_capacity(times.len())))
            .collect(),
        diagnostics: TrajectoryDiagnostics {
            steps_accepted: 0,
            steps_rejected: 0,
            max_trace_drift: 0.0,
            max_hermiticity_error: 0.0,
            min_eigenvalue: None,
        },
    };
    let record = |x: &[C64], out: &mut Trajectory| -> Result<()> {
        let tr: C64 = local_diag.iter().map(|&k| x[k]).sum();
        let diag = &mut out.diagnostics;
        diag.max_trace_drift = diag.max_trace_drift.max((tr - ONE).norm());
        for ((name, _), terms) in observables.iter().zip(&obs_terms) {
            let v: C64 = terms.iter().map(|&(k, o)| o * x[k]).sum();
            out.observables
                .get_mut(*name)
                .expect("observable registered")
                .push(v.re);
        }
        if opts.store_states || opts.check_positivity {
            let rho = DensityMatrix::new_unchecked(dims, sub.scatter(x, d * d))?;
            let diag = &mut out.diagnostics;
            diag.max_hermiticity_error = diag.max_hermiticity_error.max(rho.hermiticity_error());
            if opts.check_positivity {
                let ev = rho.min_eigenvalue()?;
                diag.min_eigenvalue = Some(diag.min_eigenvalue.map_or(ev, |m| m.min(ev)));
            }
            if opts.store_states {
                out.states.push(rho);
            }
        } else {
            out.diagnostics.max_hermiticity_error = out
                .diagnostics
                .max_hermiticity_error
                .max(local_hermiticity(&sub, x, d));
        }
        Ok(())
    };

    match opts.integrator {
        Integrator::Rk45 => {
            let kmod = modulation.as_ref().map(|m| sub.restrict(m.k));
            let a = &sub.matrix;
            let rhs = |t: f64, x: &[C64], y: &mut [C64]| {
                a.matvec(x, y);
                if let (Some(k), Some(m)) = (&kmod, &modulation) {
                    let s = (m.delta)(t);
                    if s != 0.0 {
                        let mut tmp = vec![ZERO; y.len()];
                        k.matvec(x, &mut tmp);
                        y.iter_mut().zip(&tmp).for_each(|(yi, ti)| *yi += s * ti);
                    }
                }
            };
            let breaks = modulation
                .as_ref()
                .map(|m| m.breakpoints.clone())
                .unwrap_or_default();
            let (a1, ainf) = induced_norms(a);
            let radius = match (&kmod, &modulation) {
                (Some(k), Some(m)) => {
                    let (k1, kinf) = induced_norms(k);
                    let s = std::iter::once(0.0)
                        .chain(m.breakpoints.iter().copied())
                        .chain(times.iter().copied())
                        .map(|t| (m.delta)(t).abs())
                        .fold(0.0, f64::max);
                    (a1 + s * k1).min(ainf + s * kinf)
                }
                _ => a1.min(ainf),
            };
            // keep every h·λ inside the disk |z| ≤ 0.9 of the left half-plane, which the
            // method's stability region contains; weakly damped fast coherences grow otherwise
            let h_max = if radius > 0.0 {
                0.9 / radius
            } else {
                f64::INFINITY
            };
            let mut stats = (0usize, 0usize);
            dopri5(rhs, x0, times, &breaks, h_max, opts, &mut stats, |x| {
                record(x, &mut out)
            })?;
            out.diagnostics.steps_accepted = stats.0;
            out.diagnostics.steps_rejected = stats.1;
        }
        Integrator::Krylov => {
            if modulation.is_some() {
                return Err(Error::Config(
                    "the Krylov integrator handles time-independent generators only; use rk45"
                        .into(),
                ));
            }
            let mut stats = (0usize, 0usize);
            krylov_propagate(&sub.matrix, x0, times, opts, &mut stats, |x| {
                record(x, &mut out)
            })?;
            out.diagnostics.steps_accepted = stats.0;
            out.diagnostics.steps_rejected = stats.1;
        }
    }
    Ok(out)
}

/// Maximum absolute column and row sums; each bounds the spectral radius.
fn induced_norms(m: &CscMatrix) -> (f64, f64) {
    let mut rows = vec![0.0; m.nrows()];
    let mut col_max = 0.0f64;
    for w in m.col_ptr().windows(2) {
        let mut sum = 0.0;
        for k in w[0]..w[1] {
            let v = m.values()[k].norm();
            sum += v;
            rows[m.row_idx()[k]] += v;
        }
        col_max = col_max.max(sum);
    }
    (col_max, rows.into_iter().fold(0.0, f64::max))
}

fn local_hermiticity(sub: &Subspace, x: &[C64], d: usize) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (k, &g) in sub.keep.iter().enumerate() {
        let (i, j) = (g % d, g / d);
        let partner = sub.local[j + i * d];
        let other = if partner == usize::MAX {
            ZERO
        } else {
            x[partner]
        };
        num += (x[k] - other.conj()).norm_sqr();
        den += x[k].norm_sqr();
    }
    if den == 0.0 {
        0.0
    } else {
        (num / den).sqrt()
    }
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn combine(out: &mut [C64], x: &[C64], h: f64, terms: &[(f64, &[C64])]) {
    for i in 0..out.len() {
        let mut s = ZERO;
        for (c, k) in terms {
            s += *c * k[i];
        }
        out[i] = x[i] + h * s;
    }
}

fn dopri5<F, R>(
    f: F,
    mut x: Vec<C64>,
    times: &[f64],
    breakpoints: &[f64],
    h_max: f64,
    opts: &EvolveOptions,
    stats: &mut (usize, usize),
    mut record: R,
) -> Result<()>
where
    F: Fn(f64, &[C64], &mut [C64]),
    R: FnMut(&[C64]) -> Result<()>,
{
    let n = x.len();
    let mut t = 0.0f64;
    let t_end = times.last().copied().unwrap_or(0.0);
    let mut targets: Vec<(f64, bool)> = times.iter().map(|&s| (s, true)).collect();
    targets.extend(
        breakpoints
            .iter()
            .filter(|&&b| b > 0.0 && b < t_end && !times.contains(&b))
            .map(|&b| (b, false)),
    );
    targets.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut k1 = vec![ZERO; n];
    let (mut k2, mut k3, mut k4, mut k5, mut k6, mut k7) = (
        vec![ZERO; n],
        vec![ZERO; n],
        vec![ZERO; n],
        vec![ZERO; n],
        vec![ZERO; n],
        vec![ZERO; n],
    );
    let mut tmp = vec![ZERO; n];
    let mut xn = vec![ZERO; n];
    f(t, &x, &mut k1);

    let scaled_norm = |v: &[C64], x: &[C64]| -> f64 {
        let s: f64 = v
            .iter()
            .zip(x)
            .map(|(vi, xi)| (vi.norm() / (opts.atol + opts.rtol * xi.norm())).powi(2))
            .sum();
        (s / n.max(1) as f64).sqrt()
    };
    // initial step from the scale of the derivative
    let mut h = {
        let d0 = scaled_norm(&x, &x);
        let d1 = scaled_norm(&k1, &x);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        h0.min(t_end.max(f64::MIN_POSITIVE)).min(h_max)
    };

    for &(target, output) in &targets {
        while t < target {
            if stats.0 + stats.1 >= opts.max_steps {
                return Err(Error::NonConvergence(format!(
                    "integrator exceeded {} steps at t = {t:e} s",
                    opts.max_steps
                )));
            }
            let h_min = 16.0 * f64::EPSILON * t.abs().max(t_end);
            let remaining = target - t;
            let last = h >= remaining * (1.0 - 1e-12);
            let hs = if last { remaining } else { h };
            if hs < h_min && !last {
                return Err(Error::StepSizeUnderflow {
                    t,
                    h: hs,
                    steps: stats.0,
                });
            }
            combine(&mut tmp, &x, hs, &[(A21, &k1)]);
            f(t + C2 * hs, &tmp, &mut k2);
            combine(&mut tmp, &x, hs, &[(A31, &k1), (A32, &k2)]);
            f(t + C3 * hs, &tmp, &mut k3);
            combine(&mut tmp, &x, hs, &[(A41, &k1), (A42, &k2), (A43, &k3)]);
            f(t + C4 * hs, &tmp, &mut k4);
            combine(
                &mut tmp,
                &x,
                hs,
                &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)],
            );
            f(t + C5 * hs, &tmp, &mut k5);
            combine(
                &mut tmp,
                &x,
                hs,
                &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
            );
            f(t + hs, &tmp, &mut k6);
            combine(
                &mut xn,
                &x,
                hs,
                &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)],
            );
            let t_new = if last { target } else { t + hs };
            f(t_new, &xn, &mut k7);
            let mut err = 0.0;
            for i in 0..n {
                let e = hs
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sc = opts.atol + opts.rtol * x[i].norm().max(xn[i].norm());
                err += (e.norm() / sc).powi(2);
            }
            if xn.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                return Err(Error::NonConvergence(format!(
                    "non-finite state at t = {t:e} s"
                )));
            }
            let err = (err / n.max(1) as f64).sqrt();
            // an overflowing error norm is a rejection, not a failure
            let err = if err.is_nan() { f64::INFINITY } else { err };
            if err <= 1.0 {
                stats.0 += 1;
                t = t_new;
                std::mem::swap(&mut x, &mut xn);
                std::mem::swap(&mut k1, &mut k7);
                let fac = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                // a step shortened to land on a target says nothing about h
                if !last || hs >= h {
                    h = hs * fac;
                } else {
                    h = h.max(hs * fac);
                }
                h = h.min(h_max);
            } else {
                stats.1 += 1;
                h = hs * (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
                if h < h_min {
                    return Err(Error::StepSizeUnderflow {
                        t,
                        h,
                        steps: stats.0,
                    });
                }
            }
        }
        if output {
            record(&x)?;
        }
    }
    Ok(())
}

/// `exp(A)` of a small dense row-major matrix by scaling and squaring with a
/// truncated Taylor series.
pub(crate) fn dense_expm(a: &[C64], n: usize) -> Vec<C64> {
    let norm = (0..n)
        .map(|i| (0..n).map(|j| a[i * n + j].norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let s = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scale = 0.5f64.powi(s);
    let b: Vec<C64> = a.iter().map(|v| v * scale).collect();
    let mut result = vec![ZERO; n * n];
    let mut term = vec![ZERO; n * n];
    for i in 0..n {
        result[i * n + i] = ONE;
        term[i * n + i] = ONE;
    }
    for k in 1..=24 {
        term = matmul_dense(&term, &b, n);
        let inv = 1.0 / k as f64;
        term.iter_mut().for_each(|v| *v *= inv);
        let mut tnorm = 0.0f64;
        for (r, t) in result.iter_mut().zip(&term) {
            *r += t;
            tnorm = tnorm.max(t.norm());
        }
        if tnorm < 1e-18 {
            break;
        }
    }
    for _ in 0..s {
        result = matmul_dense(&result, &result, n);
    }
    result
}

fn matmul_dense(a: &[C64], b: &[C64], n: usize) -> Vec<C64> {
    let mut c = vec![ZERO; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == ZERO {
                continue;
            }
            for j in 0..n {
                c[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    c
}

fn krylov_propagate<R>(
    a: &CscMatrix,
    mut x: Vec<C64>,
    times: &[f64],
    opts: &EvolveOptions,
    stats: &mut (usize, usize),
    mut record: R,
) -> Result<()>
where
    R: FnMut(&[C64]) -> Result<()>,
{
    let n = x.len();
    let m_max = opts.krylov_dim.min(n.max(1));
    let anorm = a.norm_inf().max(f64::MIN_POSITIVE);
    let mut t = 0.0f64;
    let t_end = times.last().copied().unwrap_or(0.0);
    let mut tau = (1.0 / anorm).min(t_end.max(f64::MIN_POSITIVE));
    let mut w = vec![ZERO; n];
    for &target in times {
        while t < target {
            if stats.0 + stats.1 >= opts.max_steps {
                return Err(Error::NonConvergence(format!(
                    "Krylov propagation exceeded {} steps",
                    opts.max_steps
                )));
            }
            let beta = x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            if beta == 0.0 {
                t = target;
                break;
            }
            // Arnoldi
            let mut v: Vec<Vec<C64>> = vec![x.iter().map(|xi| xi / beta).collect()];
            let mut hmat = vec![ZERO; (m_max + 1) * m_max];
            let mut m = m_max;
            let mut breakdown = false;
            let mut h_next = 0.0;
            for j in 0..m_max {
                a.matvec(&v[j], &mut w);
                for (i, vi) in v.iter().enumerate() {
                    let hij: C64 = vi.iter().zip(&w).map(|(p, q)| p.conj() * q).sum();
                    hmat[i * m_max + j] = hij;
                    w.iter_mut().zip(vi).for_each(|(wk, vk)| *wk -= hij * vk);
                }
                let hn = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                if hn <= 1e-13 * anorm {
                    m = j + 1;
                    breakdown = true;
                    break;
                }
                hmat[(j + 1) * m_max + j] = C64::new(hn, 0.0);
                h_next = hn;
                v.push(w.iter().map(|wk| wk / hn).collect());
            }
            // A v_{m+1}, for the error estimate
            let avnorm = if breakdown {
                0.0
            } else {
                a.matvec(&v[m], &mut w);
                w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
            };
            loop {
                let step = tau.min(target - t);
                // augmented (m+2)-square matrix carrying the φ-function terms
                let size = m + 2;
                let mut aug = vec![ZERO; size * size];
                for i in 0..m {
                    for j in 0..m {
                        aug[i * size + j] = hmat[i * m_max + j] * step;
                    }
                }
                if !breakdown {
                    aug[m * size + (m - 1)] = C64::new(h_next * step, 0.0);
                    aug[(m + 1) * size + m] = ONE;
                }
                let e = dense_expm(&aug, size);
                let err = if breakdown {
                    0.0
                } else {
                    let err1 = beta * e[m * size].norm();
                    let err2 = beta * e[(m + 1) * size].norm() * avnorm;
                    if err1 > 10.0 * err2 {
                        err2
                    } else if err1 > err2 {
                        err1 * err2 / (err1 - err2)
                    } else {
                        err1
                    }
                };
                let tol = opts.atol + opts.rtol * beta;
                if err <= tol * step / t_end.max(step) || breakdown {
                    let mut xn = vec![ZERO; n];
                    for (j, vj) in v.iter().take(m).enumerate() {
                        let c = beta * e[j * size];
                        xn.iter_mut().zip(vj).for_each(|(xi, vi)| *xi += c * vi);
                    }
                    x = xn;
                    t = if step >= target - t { target } else { t + step };
                    stats.0 += 1;
                    let grow = if err == 0.0 {
                        2.0
                    } else {
                        (0.9 * (tol * step / t_end.max(step) / err).powf(1.0 / (m as f64 + 1.0)))
                            .clamp(0.2, 2.0)
                    };
                    if step == tau {
                        tau *= grow;
                    }
                    break;
                }
                stats.1 += 1;
                tau = step
                    * (0.9 * (tol * step / t_end.max(step) / err).powf(1.0 / (m as f64 + 1.0)))
                        .clamp(0.1, 0.9);
                if tau < 16.0 * f64::EPSILON * t_end {
                    return Err(Error::StepSizeUnderflow {
                        t,
                        h: tau,
                        steps: stats.0,
                    });
                }
            }
        }
        record(&x)?;
    }
    Ok(())
}

/// Transmon state right after preparation in a Rabi sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialQubit {
    Ground,
    /// |e⟩ after an ideal instantaneous π pulse.
    PiPulse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RabiOptions {
    /// Qubit–cavity detuning while the qubit is parked, rad/s.
    pub parked_detuning: f64,
    /// Rise time of a linear detuning ramp onto resonance, s; 0 is an
    /// instantaneous step.
    pub ramp_time: f64,
    pub evolve: EvolveOptions,
}

/// Qubit parked 0.5 GHz below the cavity.
pub const DEFAULT_PARKED_DETUNING_GHZ: f64 = -0.5;

impl Default for RabiOptions {
    fn default() -> Self {
        Self {
            parked_detuning: crate::constants::ghz_to_angular(DEFAULT_PARKED_DETUNING_GHZ),
            ramp_time: 0.0,
            evolve: EvolveOptions {
                store_states: false,
                check_positivity: false,
                ..EvolveOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RabiTrace {
    /// Observable `P_e` holds the excited-state population at each τ.
    pub trajectory: Trajectory,
    pub warnings: Vec<String>,
}

pub const OBS_EXCITED_POPULATION: &str = "P_e";
pub const OBS_PHOTON_NUMBER: &str = "n_cavity";

impl RabiTrace {
    pub fn tau(&self) -> &[f64] {
        &self.trajectory.times
    }
    pub fn p_e(&self) -> &[f64] {
        &self.trajectory.observables[OBS_EXCITED_POPULATION]
    }
}

/// Vacuum Rabi sequence: thermal cavity at `n_th` with the qubit parked in
/// |g⟩ (or |e⟩ after a π pulse), then the qubit brought onto resonance and
/// the full master equation, dephasing included, run for each τ.
pub fn rabi_sequence(
    params: &DeviceParams,
    n_th: f64,
    dims: SpaceDims,
    tau: &[f64],
    initial: InitialQubit,
    opts: &RabiOptions,
) -> Result<RabiTrace> {
    if params.gamma_phi.is_none() {
        return Err(Error::Config(
            "Rabi sequences need gamma_phi (it has no default)".into(),
        ));
    }
    if !(opts.ramp_time >= 0.0 && opts.ramp_time.is_finite()) {
        return Err(Error::Config(
            "ramp_time must be finite and non-negative".into(),
        ));
    }
    if tau.iter().any(|t| *t < 0.0) {
        return Err(Error::Domain(
            "interaction times must be non-negative".into(),
        ));
    }
    let resonant = params.resonant()?;
    let model = thermal_liouvillian(&resonant, n_th, dims, true, resonant.cavity_frequency)?;
    let level = match initial {
        InitialQubit::Ground => 0,
        InitialQubit::PiPulse => 1,
    };
    let rho0 = DensityMatrix::thermal_cavity(dims, n_th, level)?;
    let pe = crate::qspace::transmon_projector(dims, 1)?;
    let n_op = crate::qspace::photon_number(dims)?;
    let obs = [(OBS_EXCITED_POPULATION, &pe), (OBS_PHOTON_NUMBER, &n_op)];
    let trajectory = if opts.ramp_time > 0.0 {
        // rigid shift of the ladder by m·δ(t): K = −i[N_q, ·]
        let nq = transmon_number(dims)?.with_unit(OperatorUnit::AngularFrequency);
        let k = hamiltonian_superop(&nq)?;
        let (d0, tr) = (opts.parked_detuning, opts.ramp_time);
        let delta = move |t: f64| if t < tr { d0 * (1.0 - t / tr) } else { 0.0 };
        let modulation = Modulation {
            k: &k,
            delta: &delta,
            breakpoints: vec![tr],
        };
        propagate(
            &model.liouvillian,
            Some(modulation),
            &rho0,
            tau,
            &obs,
            &opts.evolve,
        )?
    } else {
        evolve_observed(&model.liouvillian, &rho0, tau, &obs, &opts.evolve)?
    };
    Ok(RabiTrace {
        trajectory,
        warnings: model.warnings,
    })
}

/// `y(t) ≈ c₀ + e^{−λt}(c₁ + c₂ cos ωt + c₃ sin ωt)` at fixed ω.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OscillationFit {
    pub offset: f64,
    /// `√(c₂² + c₃²)`
    pub amplitude: f64,
    pub decay_rate: f64,
    /// `1/λ`, s.
    pub decay_time: f64,
    pub rss: f64,
}

/// Variable-projection fit of a damped oscillation at known angular frequency
/// `omega`: the linear coefficients are eliminated and λ found by a bracketed
/// search over `ln λ`.
pub fn fit_damped_oscillation(t: &[f64], y: &[f64], omega: f64) -> Result<OscillationFit> {
    if t.len() != y.len() {
        return Err(Error::Dimension(
            "times and samples differ in length".into(),
        ));
    }
    if t.len() < 8 {
        return Err(Error::DegenerateData(format!(
            "{} samples are too few for a damped oscillation",
            t.len()
        )));
    }
    let span = t.last().unwrap() - t[0];
    if !(span > 0.0) {
        return Err(Error::DegenerateData(
            "sample times do not span an interval".into(),
        ));
    }
    let linear = |lambda: f64| -> Result<(Vec<f64>, f64)> {
        let env: Vec<f64> = t.iter().map(|ti| (-lambda * ti).exp()).collect();
        let cols = vec![
            vec![1.0; t.len()],
            env.clone(),
            env.iter()
                .zip(t)
                .map(|(e, ti)| e * (omega * ti).cos())
                .collect(),
            env.iter()
                .zip(t)
                .map(|(e, ti)| e * (omega * ti).sin())
                .collect(),
        ];
        let fit = linear_lstsq(&cols, y, None)?;
        Ok((fit.coef, fit.rss))
    };
    let (lo, hi) = ((1e-2 / span).ln(), (1e3 / span).ln());
    let best = brent(|u| linear(u.exp()).map(|r| r.1), lo, hi, 1e-8, 300)?;
    let lambda = best.x.exp();
    let (c, rss) = linear(lambda)?;
    Ok(OscillationFit {
        offset: c[0],
        amplitude: c[2].hypot(c[3]),
        decay_rate: lambda,
        decay_time: 1.0 / lambda,
        rss,
    })
}
