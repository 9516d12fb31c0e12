//! Gaussian belief types and numerically safe covariance operations.
//!
//! All covariances propagated by the filters pass through [`psd_repair`]
//! after each moment computation, so the rest of the stack can assume
//! symmetric positive semidefinite matrices. Repairs are never silent:
//! every call reports whether it had to modify its input so that callers
//! can accumulate a diagnostic count.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative symmetry tolerance for covariance inputs.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Validity band for pre-repair eigenvalues, relative to the matrix scale.
/// Covariances produced by a healthy filter never dip below `-EPS_PSD`.
pub const EPS_PSD: f64 = 1e-9;

/// Repair limit: eigenvalues below `-EPS_REPAIR * trace` are considered
/// structural failures rather than roundoff and abort the repair.
pub const EPS_REPAIR: f64 = 1e-6;

/// Diagonal jitter added after clamping, as a fraction of the trace.
pub const EPS_JITTER: f64 = 1e-12;

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Roundoff floor below which a negative eigenvalue is treated as zero.
fn eps_zero(m: &DMatrix<f64>) -> f64 {
    64.0 * f64::EPSILON * max_abs(m).max(1.0)
}

fn check_finite(iter: impl Iterator<Item = f64>, context: &'static str) -> Result<()> {
    for v in iter {
        if !v.is_finite() {
            return Err(Error::NonFinite { context });
        }
    }
    Ok(())
}

/// State vector: finite entries, length fixed by the model (`n_x`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVec(DVector<f64>);

impl StateVec {
    pub fn new(v: DVector<f64>) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::invalid("state", "dimension must be >= 1"));
        }
        check_finite(v.iter().copied(), "StateVec")?;
        Ok(StateVec(v))
    }

    pub fn from_slice(entries: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(entries))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }
}

impl std::ops::Deref for StateVec {
    type Target = DVector<f64>;
    fn deref(&self) -> &DVector<f64> {
        &self.0
    }
}

/// Measurement vector: finite entries, length fixed by the sensor (`n_z`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasVec(DVector<f64>);

impl MeasVec {
    pub fn new(v: DVector<f64>) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::invalid("measurement", "dimension must be >= 1"));
        }
        check_finite(v.iter().copied(), "MeasVec")?;
        Ok(MeasVec(v))
    }

    pub fn from_slice(entries: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(entries))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }
}

impl std::ops::Deref for MeasVec {
    type Target = DVector<f64>;
    fn deref(&self) -> &DVector<f64> {
        &self.0
    }
}

/// Square, symmetric (within [`SYMMETRY_TOL`]) covariance matrix.
///
/// Positive semidefiniteness is not enforced at construction: moment
/// computations with signed weights can produce mildly indefinite
/// matrices, which the engine routes through [`psd_repair`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovMatrix(DMatrix<f64>);

impl CovMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::invalid("covariance", "matrix must be square and non-empty"));
        }
        check_finite(m.iter().copied(), "CovMatrix")?;
        let asym = max_asymmetry(&m);
        let tol = SYMMETRY_TOL * max_abs(&m).max(1.0);
        if asym > tol {
            return Err(Error::NotSymmetric {
                asymmetry: asym,
                tolerance: tol,
            });
        }
        Ok(CovMatrix(m))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn zeros(n: usize) -> Self {
        CovMatrix(DMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        CovMatrix(DMatrix::identity(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Square-root factor `S` with `S * S^T == self`, see [`matrix_sqrt_psd`].
    pub fn sqrt_factor(&self) -> Result<DMatrix<f64>> {
        matrix_sqrt_psd(&self.0)
    }
}

/// Conditioning stage of a belief within one filter cycle.
///
/// Allowed transitions: `Posterior -> Predicted` (time update),
/// `Predicted -> TlUpdated` (optional transferred-observation update),
/// `Predicted | TlUpdated -> Posterior` (measurement update).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    /// `k | k`: conditioned on measurements up to the current step.
    Posterior,
    /// `k | k-1`: time-propagated, not yet conditioned on anything at `k`.
    Predicted,
    /// `k | k-1` additionally conditioned on a transferred predicted observation.
    TlUpdated,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Posterior => "posterior",
            Stage::Predicted => "predicted",
            Stage::TlUpdated => "tl-updated",
        }
    }
}

/// Gaussian state density tagged with its time index and conditioning stage.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: StateVec,
    pub cov: CovMatrix,
    pub step: usize,
    pub stage: Stage,
}

impl GaussianBelief {
    pub fn new(mean: StateVec, cov: CovMatrix, step: usize, stage: Stage) -> Result<Self> {
        if cov.dim() != mean.dim() {
            return Err(Error::DimensionMismatch {
                context: "GaussianBelief",
                expected: mean.dim(),
                got: cov.dim(),
            });
        }
        Ok(GaussianBelief {
            mean,
            cov,
            step,
            stage,
        })
    }

    /// Initial posterior at step 0.
    pub fn initial(mean: StateVec, cov: CovMatrix) -> Result<Self> {
        Self::new(mean, cov, 0, Stage::Posterior)
    }

    pub fn dim(&self) -> usize {
        self.mean.dim()
    }
}

/// Column-oriented square-root factor `S` of a PSD matrix, `S * S^T = P`.
///
/// Uses the lower-triangular factorization of the symmetrized input and
/// falls back to an eigendecomposition (with clamping of roundoff-negative
/// eigenvalues) when the factorization fails.
pub fn matrix_sqrt_psd(p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_finite(p.iter().copied(), "matrix_sqrt_psd")?;
    if p.nrows() != p.ncols() {
        return Err(Error::invalid("matrix", "must be square"));
    }
    let asym = max_asymmetry(p);
    let tol = SYMMETRY_TOL * max_abs(p).max(1.0);
    if asym > tol {
        return Err(Error::NotSymmetric {
            asymmetry: asym,
            tolerance: tol,
        });
    }
    let sym = symmetrize(p);
    if let Some(chol) = sym.clone().cholesky() {
        return Ok(chol.unpack());
    }
    // Singular or mildly indefinite: factor through the spectrum.
    let eig = sym.symmetric_eigen();
    let min_eig = eig.eigenvalues.min();
    let threshold = repair_threshold(p);
    if min_eig < -threshold {
        return Err(Error::NotRepairable {
            min_eigenvalue: min_eig,
            threshold,
        });
    }
    let mut factor = eig.eigenvectors;
    for (j, lam) in eig.eigenvalues.iter().enumerate() {
        let s = lam.max(0.0).sqrt();
        factor.column_mut(j).scale_mut(s);
    }
    Ok(factor)
}

fn symmetrize(p: &DMatrix<f64>) -> DMatrix<f64> {
    let n = p.nrows();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = 0.5 * (p[(i, j)] + p[(j, i)]);
        }
    }
    out
}

fn repair_threshold(p: &DMatrix<f64>) -> f64 {
    EPS_REPAIR * p.trace().max(0.0) + eps_zero(p)
}

/// Returns `true` when the matrix already passes as PSD: bitwise symmetric
/// and with no eigenvalue below the roundoff floor.
fn is_psd(m: &DMatrix<f64>) -> bool {
    if max_asymmetry(m) > 0.0 {
        return false;
    }
    if m.clone().cholesky().is_some() {
        return true;
    }
    let eig = m.clone().symmetric_eigen();
    eig.eigenvalues.min() >= -eps_zero(m)
}

/// Repairs a covariance into a symmetric PSD matrix.
///
/// An already-valid input is returned unchanged (bit-for-bit, count 0).
/// Otherwise the input is symmetrized, negative eigenvalues are clamped to
/// zero, diagonal jitter `EPS_JITTER * trace` is added, and the count is 1.
/// Inputs whose most negative eigenvalue lies below `-EPS_REPAIR * trace`
/// are rejected as [`Error::NotRepairable`].
pub fn psd_repair(p: &DMatrix<f64>) -> Result<(CovMatrix, u32)> {
    check_finite(p.iter().copied(), "psd_repair")?;
    if p.nrows() != p.ncols() || p.nrows() == 0 {
        return Err(Error::invalid("covariance", "matrix must be square and non-empty"));
    }
    if is_psd(p) {
        return Ok((CovMatrix(p.clone()), 0));
    }
    let sym = symmetrize(p);
    let eig = sym.symmetric_eigen();
    let min_eig = eig.eigenvalues.min();
    let threshold = repair_threshold(p);
    if min_eig < -threshold {
        return Err(Error::NotRepairable {
            min_eigenvalue: min_eig,
            threshold,
        });
    }
    let n = p.nrows();
    let jitter = EPS_JITTER * p.trace().max(0.0);
    let mut scaled = eig.eigenvectors.clone();
    for (j, lam) in eig.eigenvalues.iter().enumerate() {
        scaled.column_mut(j).scale_mut(lam.max(0.0));
    }
    let mut repaired = scaled * eig.eigenvectors.transpose();
    for i in 0..n {
        repaired[(i, i)] += jitter;
    }
    let repaired = symmetrize(&repaired);
    Ok((CovMatrix(repaired), 1))
}

/// Repairs in covariance-typed form; see [`psd_repair`].
pub fn psd_repair_cov(p: &CovMatrix) -> Result<(CovMatrix, u32)> {
    psd_repair(p.as_matrix())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        // Deterministic pseudo-random SPD via A * A^T + I.
        let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let a = DMatrix::from_fn(n, n, |_, _| next());
        &a * a.transpose() + DMatrix::identity(n, n)
    }

    #[test]
    fn sqrt_identity() {
        let p = DMatrix::identity(5, 5);
        let s = matrix_sqrt_psd(&p).unwrap();
        assert_eq!(s, DMatrix::identity(5, 5));
    }

    #[test]
    fn sqrt_diagonal() {
        let p = DMatrix::from_diagonal(&nalgebra::dvector![4.0, 9.0]);
        let s = matrix_sqrt_psd(&p).unwrap();
        let expect = DMatrix::from_diagonal(&nalgebra::dvector![2.0, 3.0]);
        assert!((s - expect).norm() < 1e-14);
    }

    #[test]
    fn sqrt_reconstructs_random_spd() {
        for seed in 0..20u64 {
            let p = random_spd(5, seed);
            let s = matrix_sqrt_psd(&p).unwrap();
            let err = (&s * s.transpose() - &p).norm() / p.norm();
            assert!(err < 1e-9, "reconstruction error {err} at seed {seed}");
        }
    }

    #[test]
    fn sqrt_rejects_asymmetric() {
        let mut p = DMatrix::identity(3, 3);
        p[(0, 1)] = 0.5;
        assert!(matches!(
            matrix_sqrt_psd(&p),
            Err(Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn sqrt_rejects_strongly_indefinite() {
        let p = DMatrix::from_diagonal(&nalgebra::dvector![1.0, -1.0]);
        assert!(matches!(
            matrix_sqrt_psd(&p),
            Err(Error::NotRepairable { .. })
        ));
    }

    #[test]
    fn sqrt_handles_singular_psd() {
        // Rank-1 PSD block as produced by the process noise builder.
        let v = nalgebra::dvector![0.5, 1.0];
        let p = &v * v.transpose();
        let s = matrix_sqrt_psd(&p).unwrap();
        assert!((&s * s.transpose() - &p).norm() < 1e-12);
    }

    #[test]
    fn repair_leaves_spd_untouched() {
        let p = random_spd(4, 7);
        let (r, count) = psd_repair(&p).unwrap();
        assert_eq!(count, 0);
        let same_bits = r
            .as_matrix()
            .iter()
            .zip(p.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same_bits);
    }

    #[test]
    fn repair_clamps_small_negative_eigenvalue() {
        let p = DMatrix::from_diagonal(&nalgebra::dvector![1.0, -1e-10]);
        let (r, count) = psd_repair(&p).unwrap();
        assert_eq!(count, 1);
        let eig = r.as_matrix().clone().symmetric_eigen();
        assert!(eig.eigenvalues.min() >= 0.0);
        // Clamped entry sits at the jitter level.
        let jitter = EPS_JITTER * p.trace();
        assert!((r.as_matrix()[(1, 1)] - jitter).abs() < jitter);
    }

    #[test]
    fn repair_symmetrizes_perturbed_input() {
        let mut p = random_spd(4, 3);
        p[(0, 1)] += 1e-11;
        let (r, count) = psd_repair(&p).unwrap();
        assert_eq!(count, 1);
        assert_eq!(max_asymmetry(r.as_matrix()), 0.0);
    }

    #[test]
    fn repair_is_idempotent() {
        let cases = vec![
            DMatrix::from_diagonal(&nalgebra::dvector![1.0, -1e-10]),
            random_spd(5, 11),
            {
                let mut m = random_spd(3, 5);
                m[(2, 0)] += 5e-12;
                m
            },
        ];
        for p in cases {
            let (once, _) = psd_repair(&p).unwrap();
            let (twice, count) = psd_repair(once.as_matrix()).unwrap();
            assert_eq!(count, 0);
            let same_bits = twice
                .as_matrix()
                .iter()
                .zip(once.as_matrix().iter())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same_bits, "repair not idempotent");
        }
    }

    #[test]
    fn repair_rejects_far_gone_input() {
        let p = DMatrix::from_diagonal(&nalgebra::dvector![1.0, -0.5]);
        assert!(matches!(psd_repair(&p), Err(Error::NotRepairable { .. })));
    }

    #[test]
    fn state_vec_rejects_non_finite() {
        assert!(StateVec::from_slice(&[1.0, f64::NAN]).is_err());
        assert!(StateVec::from_slice(&[]).is_err());
    }

    #[test]
    fn cov_matrix_rejects_asymmetry_beyond_tolerance() {
        let mut m = DMatrix::identity(3, 3);
        m[(0, 2)] = 1e-3;
        assert!(CovMatrix::new(m).is_err());
    }

    #[test]
    fn belief_dimension_check() {
        let mean = StateVec::from_slice(&[1.0, 2.0]).unwrap();
        let cov = CovMatrix::identity(3);
        assert!(GaussianBelief::initial(mean, cov).is_err());
    }
}
