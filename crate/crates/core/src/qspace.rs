//! Truncated Hilbert space of one cavity mode ⊗ one multi-level transmon.
//!
//! Basis ordering is cavity-major: `|n⟩ ⊗ |l⟩` lives at index `n * n_transmon + l`,
//! so the cavity truncation tail is a contiguous block at the end of the basis.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::{CscMatrix, C64, ONE, ZERO};

/// Largest transmon ladder supported by the asymptotic level formula.
pub const MAX_TRANSMON_LEVELS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpaceDims {
    pub n_cavity: usize,
    pub n_transmon: usize,
}

impl SpaceDims {
    pub fn new(n_cavity: usize, n_transmon: usize) -> Result<Self> {
        let dims = Self {
            n_cavity,
            n_transmon,
        };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_cavity < 2 {
            return Err(Error::Dimension(format!(
                "n_cavity = {} < 2",
                self.n_cavity
            )));
        }
        if self.n_transmon < 2 {
            return Err(Error::Dimension(format!(
                "n_transmon = {} < 2",
                self.n_transmon
            )));
        }
        if self.n_transmon > MAX_TRANSMON_LEVELS {
            return Err(Error::Dimension(format!(
                "n_transmon = {} exceeds {MAX_TRANSMON_LEVELS}",
                self.n_transmon
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn total(&self) -> usize {
        self.n_cavity * self.n_transmon
    }

    #[inline]
    pub fn index(&self, n: usize, l: usize) -> usize {
        n * self.n_transmon + l
    }

    /// Inverse of [`SpaceDims::index`]: `(cavity Fock number, transmon level)`.
    #[inline]
    pub fn split_index(&self, k: usize) -> (usize, usize) {
        (k / self.n_transmon, k % self.n_transmon)
    }
}

/// Minimum cavity truncation for a thermal occupation `n_th`:
/// `max(10, 5 n_th + 4 sqrt(n_th))`, rounded up.
pub fn min_cavity_levels(n_th: f64) -> usize {
    let rule = 5.0 * n_th + 4.0 * n_th.max(0.0).sqrt();
    (rule.ceil() as usize).max(10)
}

/// Smallest cavity truncation whose discarded thermal weight
/// `(n_th/(n_th+1))^n_cavity` is at most `tail`, and never below
/// [`min_cavity_levels`]. Response spectra at strong coupling need this
/// tighter bound to be accurate at the percent level.
pub fn tail_cavity_levels(n_th: f64, tail: f64) -> usize {
    let base = min_cavity_levels(n_th);
    if n_th <= 0.0 || !(tail > 0.0 && tail < 1.0) {
        return base;
    }
    let ratio = n_th / (n_th + 1.0);
    let n = (tail.ln() / ratio.ln()).ceil();
    (n as usize).max(base)
}

/// Returns a warning message when `dims` truncates a thermal field too hard.
pub fn truncation_warning(dims: SpaceDims, n_th: f64) -> Option<String> {
    let need = min_cavity_levels(n_th);
    (dims.n_cavity < need).then(|| {
        format!(
            "n_cavity = {} is below the {need} levels required for n_th = {n_th}; thermal tail is truncated",
            dims.n_cavity
        )
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorUnit {
    Dimensionless,
    /// rad/s (Hamiltonians divided by ħ).
    AngularFrequency,
}

/// Sparse operator on the full cavity ⊗ transmon space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Operator {
    dims: SpaceDims,
    matrix: CscMatrix,
    unit: OperatorUnit,
}

impl Operator {
    pub fn new(dims: SpaceDims, matrix: CscMatrix, unit: OperatorUnit) -> Result<Self> {
        dims.validate()?;
        let d = dims.total();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::Dimension(format!(
                "{}x{} matrix for a space of dimension {d}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        matrix.check_invariants()?;
        Ok(Self { dims, matrix, unit })
    }

    pub fn identity(dims: SpaceDims) -> Self {
        Self {
            dims,
            matrix: CscMatrix::identity(dims.total()),
            unit: OperatorUnit::Dimensionless,
        }
    }

    pub fn zero(dims: SpaceDims, unit: OperatorUnit) -> Self {
        Self {
            dims,
            matrix: CscMatrix::zeros(dims.total(), dims.total()),
            unit,
        }
    }

    #[inline]
    pub fn dims(&self) -> SpaceDims {
        self.dims
    }
    #[inline]
    pub fn matrix(&self) -> &CscMatrix {
        &self.matrix
    }
    #[inline]
    pub fn unit(&self) -> OperatorUnit {
        self.unit
    }
    pub fn nnz(&self) -> usize {
        self.matrix.nnz()
    }

    pub fn with_unit(mut self, unit: OperatorUnit) -> Self {
        self.unit = unit;
        self
    }

    pub fn adjoint(&self) -> Self {
        Self {
            dims: self.dims,
            matrix: self.matrix.adjoint(),
            unit: self.unit,
        }
    }

    fn check_same_space(&self, other: &Self) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Dimension(format!(
                "operators on different spaces {:?} and {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        self.check_same_space(other)?;
        let unit = match (self.unit, other.unit) {
            (OperatorUnit::Dimensionless, u) | (u, OperatorUnit::Dimensionless) => u,
            _ => OperatorUnit::AngularFrequency,
        };
        Ok(Self {
            dims: self.dims,
            matrix: self.matrix.matmul(&other.matrix)?,
            unit,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_space(other)?;
        Ok(Self {
            dims: self.dims,
            matrix: self.matrix.add(&other.matrix)?,
            unit: self.unit,
        })
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            dims: self.dims,
            matrix: self.matrix.scale(C64::new(s, 0.0)),
            unit: self.unit,
        }
    }

    /// `[self, other]`.
    pub fn commutator(&self, other: &Self) -> Result<Self> {
        let ab = self.matmul(other)?;
        let ba = other.matmul(self)?;
        Ok(Self {
            dims: self.dims,
            matrix: ab.matrix.sub(&ba.matrix)?,
            unit: ab.unit,
        })
    }

    pub fn is_hermitian(&self) -> bool {
        self.matrix == self.matrix.adjoint()
    }
}

/// `I_transmon ⊗ a` in cavity-major ordering: `⟨n-1, l| a |n, l⟩ = sqrt(n)`.
pub fn annihilation(dims: SpaceDims) -> Result<Operator> {
    dims.validate()?;
    let a = cavity_lowering(dims.n_cavity);
    tensor_embed(&a, &CscMatrix::identity(dims.n_transmon), dims)
}

/// `Σ_l ratios[l-1] |l-1⟩⟨l|` on the transmon, embedded with `I_cavity`.
pub fn transmon_lowering(dims: SpaceDims, ratios: &[f64]) -> Result<Operator> {
    dims.validate()?;
    check_coupling_ratios(dims, ratios)?;
    let sigma = CscMatrix::from_triplets(
        dims.n_transmon,
        dims.n_transmon,
        ratios
            .iter()
            .enumerate()
            .map(|(k, &r)| (k, k + 1, C64::new(r, 0.0))),
    )?;
    tensor_embed(&CscMatrix::identity(dims.n_cavity), &sigma, dims)
}

pub(crate) fn check_coupling_ratios(dims: SpaceDims, ratios: &[f64]) -> Result<()> {
    if ratios.len() != dims.n_transmon - 1 {
        return Err(Error::Config(format!(
            "{} coupling ratios given for {} transmon levels (need {})",
            ratios.len(),
            dims.n_transmon,
            dims.n_transmon - 1
        )));
    }
    if ratios[0] != 1.0 {
        return Err(Error::Config(format!(
            "coupling ratio g_ge/g_ge must be 1, got {}",
            ratios[0]
        )));
    }
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Error::Config(
            "coupling ratios must be finite and non-negative".into(),
        ));
    }
    Ok(())
}

/// `cav_op ⊗ transmon_op` with the cavity index slow.
pub fn tensor_embed(
    cav_op: &CscMatrix,
    transmon_op: &CscMatrix,
    dims: SpaceDims,
) -> Result<Operator> {
    dims.validate()?;
    if cav_op.nrows() != dims.n_cavity || cav_op.ncols() != dims.n_cavity {
        return Err(Error::Dimension(format!(
            "cavity factor is {}x{}, expected {n}x{n}",
            cav_op.nrows(),
            cav_op.ncols(),
            n = dims.n_cavity
        )));
    }
    if transmon_op.nrows() != dims.n_transmon || transmon_op.ncols() != dims.n_transmon {
        return Err(Error::Dimension(format!(
            "transmon factor is {}x{}, expected {n}x{n}",
            transmon_op.nrows(),
            transmon_op.ncols(),
            n = dims.n_transmon
        )));
    }
    Ok(Operator {
        dims,
        matrix: cav_op.kron(transmon_op),
        unit: OperatorUnit::Dimensionless,
    })
}

pub(crate) fn cavity_lowering(n: usize) -> CscMatrix {
    CscMatrix::from_triplets(
        n,
        n,
        (1..n).map(|k| (k - 1, k, C64::new((k as f64).sqrt(), 0.0))),
    )
    .expect("valid lowering operator")
}

/// Photon number `a†a` (exact integers on the diagonal).
pub fn photon_number(dims: SpaceDims) -> Result<Operator> {
    dims.validate()?;
    let diag: Vec<C64> = (0..dims.n_cavity)
        .map(|n| C64::new(n as f64, 0.0))
        .collect();
    tensor_embed(
        &CscMatrix::from_diagonal(&diag),
        &CscMatrix::identity(dims.n_transmon),
        dims,
    )
}

/// Transmon level number `Σ_m m |m⟩⟨m|`.
pub fn transmon_number(dims: SpaceDims) -> Result<Operator> {
    dims.validate()?;
    let diag: Vec<C64> = (0..dims.n_transmon)
        .map(|m| C64::new(m as f64, 0.0))
        .collect();
    tensor_embed(
        &CscMatrix::identity(dims.n_cavity),
        &CscMatrix::from_diagonal(&diag),
        dims,
    )
}

/// Total excitation number `a†a + Σ_m m |m⟩⟨m|`, conserved by the RWA Hamiltonian.
pub fn excitation_number(dims: SpaceDims) -> Result<Operator> {
    photon_number(dims)?.add(&transmon_number(dims)?)
}

/// Projector on transmon level `level`.
pub fn transmon_projector(dims: SpaceDims, level: usize) -> Result<Operator> {
    dims.validate()?;
    if level >= dims.n_transmon {
        return Err(Error::Dimension(format!(
            "level {level} outside {} transmon levels",
            dims.n_transmon
        )));
    }
    let p = CscMatrix::from_triplets(dims.n_transmon, dims.n_transmon, [(level, level, ONE)])?;
    tensor_embed(&CscMatrix::identity(dims.n_cavity), &p, dims)
}

/// Dense density matrix, stored column-major so that its buffer is already
/// the column-stacked `vec(ρ)` used by the superoperators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityMatrix {
    dims: SpaceDims,
    data: Vec<C64>,
}

/// Tolerances for [`DensityMatrix::validate`].
pub const HERMITICITY_TOL: f64 = 1e-12;
pub const TRACE_TOL: f64 = 1e-10;
pub const POSITIVITY_TOL: f64 = 1e-8;

impl DensityMatrix {
    /// Wraps a column-stacked buffer after checking all physical invariants.
    pub fn new(dims: SpaceDims, data: Vec<C64>) -> Result<Self> {
        let rho = Self::new_unchecked(dims, data)?;
        rho.validate()?;
        Ok(rho)
    }

    /// Wraps a buffer, checking only its length.
    pub fn new_unchecked(dims: SpaceDims, data: Vec<C64>) -> Result<Self> {
        dims.validate()?;
        let d = dims.total();
        if data.len() != d * d {
            return Err(Error::Dimension(format!(
                "buffer of length {} for dimension {d}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn pure_basis(dims: SpaceDims, n: usize, l: usize) -> Result<Self> {
        dims.validate()?;
        if n >= dims.n_cavity || l >= dims.n_transmon {
            return Err(Error::Dimension(format!(
                "basis state |{n},{l}⟩ outside {dims:?}"
            )));
        }
        let d = dims.total();
        let k = dims.index(n, l);
        let mut data = vec![ZERO; d * d];
        data[k + k * d] = ONE;
        Ok(Self { dims, data })
    }

    /// `ρ_cav ⊗ |l⟩⟨l|` for a cavity-only density matrix given column-major.
    pub fn product_with_level(dims: SpaceDims, cavity: &[C64], level: usize) -> Result<Self> {
        dims.validate()?;
        let nc = dims.n_cavity;
        if cavity.len() != nc * nc {
            return Err(Error::Dimension(
                "cavity state does not match n_cavity".into(),
            ));
        }
        if level >= dims.n_transmon {
            return Err(Error::Dimension(format!(
                "level {level} outside transmon space"
            )));
        }
        let d = dims.total();
        let mut data = vec![ZERO; d * d];
        for j in 0..nc {
            for i in 0..nc {
                data[dims.index(i, level) + dims.index(j, level) * d] = cavity[i + j * nc];
            }
        }
        Self::new(dims, data)
    }

    /// Bose–Einstein cavity state with occupation `n_th`, renormalized on the
    /// truncated space, times transmon level `level`.
    pub fn thermal_cavity(dims: SpaceDims, n_th: f64, level: usize) -> Result<Self> {
        if !(n_th >= 0.0 && n_th.is_finite()) {
            return Err(Error::Domain(format!(
                "n_th = {n_th} must be finite and non-negative"
            )));
        }
        let nc = dims.n_cavity;
        let ratio = n_th / (1.0 + n_th);
        let mut probs: Vec<f64> = (0..nc).map(|n| ratio.powi(n as i32)).collect();
        let s: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= s);
        let mut cav = vec![ZERO; nc * nc];
        for (n, p) in probs.iter().enumerate() {
            cav[n + n * nc] = C64::new(*p, 0.0);
        }
        Self::product_with_level(dims, &cav, level)
    }

    #[inline]
    pub fn dims(&self) -> SpaceDims {
        self.dims
    }
    #[inline]
    pub fn dim(&self) -> usize {
        self.dims.total()
    }
    /// Column-stacked entries, `vec(ρ)[i + j d] = ρ_ij`.
    #[inline]
    pub fn as_vec(&self) -> &[C64] {
        &self.data
    }
    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i + j * self.dim()]
    }

    pub fn trace(&self) -> C64 {
        let d = self.dim();
        (0..d).map(|i| self.data[i + i * d]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `‖ρ − ρ†‖_F / ‖ρ‖_F`.
    pub fn hermiticity_error(&self) -> f64 {
        let d = self.dim();
        let mut acc = 0.0;
        for j in 0..d {
            for i in 0..d {
                acc += (self.data[i + j * d] - self.data[j + i * d].conj()).norm_sqr();
            }
        }
        let n = self.frobenius_norm();
        if n == 0.0 {
            0.0
        } else {
            acc.sqrt() / n
        }
    }

    fn hermitian_part(&self) -> Mat<C64> {
        let d = self.dim();
        Mat::from_fn(d, d, |i, j| {
            (self.data[i + j * d] + self.data[j + i * d].conj()) * 0.5
        })
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        self.hermitian_part()
            .self_adjoint_eigenvalues(faer::Side::Lower)
            .map_err(|e| Error::NonConvergence(format!("Hermitian eigensolver: {e:?}")))
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(self.eigenvalues()?.first().copied().unwrap_or(0.0))
    }

    pub fn validate(&self) -> Result<()> {
        let herm = self.hermiticity_error();
        if herm > HERMITICITY_TOL {
            return Err(Error::InvalidState(format!(
                "not Hermitian (relative error {herm:e})"
            )));
        }
        let tr = self.trace();
        if (tr - ONE).norm() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
        }
        let lam = self.min_eigenvalue()?;
        if lam < -POSITIVITY_TOL {
            return Err(Error::InvalidState(format!("negative eigenvalue {lam:e}")));
        }
        Ok(())
    }

    /// `Tr(ρ A)`.
    pub fn expectation(&self, op: &Operator) -> Result<C64> {
        if op.dims() != self.dims {
            return Err(Error::Dimension(
                "operator and state on different spaces".into(),
            ));
        }
        let d = self.dim();
        // Tr(ρA) = Σ_ij ρ_ji A_ij
        Ok(op
            .matrix()
            .iter()
            .map(|(i, j, a)| a * self.data[j + i * d])
            .sum())
    }

    /// Population of transmon level `level`.
    pub fn level_population(&self, level: usize) -> f64 {
        let d = self.dim();
        (0..self.dims.n_cavity)
            .map(|n| {
                let k = self.dims.index(n, level);
                self.data[k + k * d].re
            })
            .sum()
    }

    /// Reduced cavity photon-number distribution `p_n`.
    pub fn photon_distribution(&self) -> Vec<f64> {
        let d = self.dim();
        (0..self.dims.n_cavity)
            .map(|n| {
                (0..self.dims.n_transmon)
                    .map(|l| {
                        let k = self.dims.index(n, l);
                        self.data[k + k * d].re
                    })
                    .sum()
            })
            .collect()
    }

    pub fn mean_photon_number(&self) -> f64 {
        self.photon_distribution()
            .iter()
            .enumerate()
            .map(|(n, p)| n as f64 * p)
            .sum()
    }

    /// Trace distance `½ ‖ρ − σ‖₁`.
    pub fn trace_distance(&self, other: &Self) -> Result<f64> {
        if self.dims != other.dims {
            return Err(Error::Dimension("states on different spaces".into()));
        }
        let diff = Self {
            dims: self.dims,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        };
        Ok(0.5 * diff.eigenvalues()?.iter().map(|l| l.abs()).sum::<f64>())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tail_levels() {
        assert_eq!(tail_cavity_levels(0.0, 1e-6), 10);
        assert_eq!(tail_cavity_levels(0.05, 1e-6), 10);
        let n = tail_cavity_levels(16.0, 1e-6);
        assert!((16.0f64 / 17.0).powi(n as i32) <= 1e-6);
        assert!((16.0f64 / 17.0).powi(n as i32 - 1) > 1e-6);
    }

    fn dims(nc: usize, nt: usize) -> SpaceDims {
        SpaceDims::new(nc, nt).unwrap()
    }

    #[test]
    fn dims_validation() {
        assert!(SpaceDims::new(1, 2).is_err());
        assert!(SpaceDims::new(2, 1).is_err());
        assert!(SpaceDims::new(2, 9).is_err());
        assert_eq!(dims(4, 3).total(), 12);
        assert_eq!(dims(4, 3).split_index(dims(4, 3).index(2, 1)), (2, 1));
    }

    #[test]
    fn annihilation_two_by_two_entries() {
        let a = annihilation(dims(2, 2)).unwrap();
        let entries: Vec<_> = a.matrix().iter().collect();
        // ⟨0,g|a|1,g⟩ at (0, 2) and ⟨0,e|a|1,e⟩ at (1, 3)
        assert_eq!(entries, vec![(0, 2, ONE), (1, 3, ONE)]);
    }

    #[test]
    fn number_operator_spectrum() {
        let d = dims(4, 2);
        let a = annihilation(d).unwrap();
        let n = a.adjoint().matmul(&a).unwrap();
        assert!(n.matrix().is_diagonal());
        let diag: Vec<f64> = n.matrix().diagonal().iter().map(|v| v.re).collect();
        let expect = [0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0];
        assert!(
            diag.iter().zip(expect).all(|(a, b)| (a - b).abs() < 1e-14),
            "{diag:?}"
        );
    }

    #[test]
    fn commutator_truncation_artifact_in_top_level() {
        let d = dims(3, 2);
        let a = annihilation(d).unwrap();
        let comm = a.commutator(&a.adjoint()).unwrap();
        assert!(comm.matrix().is_diagonal());
        let diag: Vec<f64> = comm.matrix().diagonal().iter().map(|v| v.re).collect();
        let expect = [1.0, 1.0, 1.0, 1.0, -2.0, -2.0];
        assert!(
            diag.iter().zip(expect).all(|(a, b)| (a - b).abs() < 1e-14),
            "{diag:?}"
        );
    }

    #[test]
    fn transmon_lowering_examples() {
        let s = transmon_lowering(dims(2, 2), &[1.0]).unwrap();
        // one |g⟩⟨e| per cavity block
        let entries: Vec<_> = s.matrix().iter().map(|(i, j, v)| (i, j, v.re)).collect();
        assert_eq!(entries, vec![(0, 1, 1.0), (2, 3, 1.0)]);

        let s = transmon_lowering(dims(2, 3), &[1.0, 2f64.sqrt()]).unwrap();
        assert_eq!(s.matrix().get(0, 1).re, 1.0);
        assert!((s.matrix().get(1, 2).re - 1.414_213_56).abs() < 1e-8);

        let s = transmon_lowering(dims(2, 3), &[1.0, 0.0]).unwrap();
        assert_eq!(s.matrix().get(1, 2), ZERO);
        assert_eq!(s.nnz(), 2);
    }

    #[test]
    fn transmon_lowering_ratio_errors() {
        assert!(matches!(
            transmon_lowering(dims(2, 3), &[1.0]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            transmon_lowering(dims(2, 3), &[0.5, 1.0]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            transmon_lowering(dims(2, 3), &[1.0, -1.0]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn tensor_embed_dimension_mismatch() {
        let r = tensor_embed(&CscMatrix::identity(3), &CscMatrix::identity(2), dims(2, 2));
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn tensor_embed_identity() {
        let op =
            tensor_embed(&CscMatrix::identity(2), &CscMatrix::identity(3), dims(2, 3)).unwrap();
        assert_eq!(op.matrix(), &CscMatrix::identity(6));
    }

    #[test]
    fn safety_rule() {
        assert_eq!(min_cavity_levels(0.0), 10);
        assert_eq!(min_cavity_levels(16.0), 96);
        assert!(truncation_warning(dims(12, 2), 1.0).is_none());
        assert!(truncation_warning(dims(12, 2), 4.0).is_some());
    }

    #[test]
    fn thermal_state_is_valid_and_geometric() {
        let rho = DensityMatrix::thermal_cavity(dims(40, 2), 0.5, 0).unwrap();
        let p = rho.photon_distribution();
        for n in 0..10 {
            assert!((p[n + 1] / p[n] - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!((rho.mean_photon_number() - 0.5).abs() < 1e-6);
        assert!((rho.level_population(0) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn validation_rejects_bad_states() {
        let d = dims(2, 2);
        let mut data = vec![ZERO; 16];
        data[0] = C64::new(0.5, 0.0);
        assert!(DensityMatrix::new(d, data.clone()).is_err());
        data[5] = C64::new(0.5, 0.0);
        assert!(DensityMatrix::new(d, data.clone()).is_ok());
        data[1] = C64::new(0.1, 0.0);
        assert!(DensityMatrix::new(d, data.clone()).is_err());
        // Hermitian, unit trace, but indefinite
        let mut bad = vec![ZERO; 16];
        bad[0] = C64::new(1.5, 0.0);
        bad[5] = C64::new(-0.5, 0.0);
        assert!(matches!(
            DensityMatrix::new(d, bad),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn expectation_of_number_operator() {
        let d = dims(5, 2);
        let rho = DensityMatrix::pure_basis(d, 3, 1).unwrap();
        let n = photon_number(d).unwrap();
        assert_eq!(rho.expectation(&n).unwrap(), C64::new(3.0, 0.0));
        assert_eq!(rho.level_population(1), 1.0);
    }

    #[test]
    fn trace_distance_of_orthogonal_states() {
        let d = dims(2, 2);
        let a = DensityMatrix::pure_basis(d, 0, 0).unwrap();
        let b = DensityMatrix::pure_basis(d, 1, 0).unwrap();
        assert!((a.trace_distance(&b).unwrap() - 1.0).abs() < 1e-12);
        assert!(a.trace_distance(&a).unwrap() < 1e-15);
    }
}
