//! Symmetric positive-definite matrices and the affine-invariant metric
//! between them.
//!
//! The distance `d(A, B) = sqrt(sum_i log^2 a_i)`, with `a_i` the eigenvalues
//! of `A^-1 B`, is evaluated on the whitened symmetric matrix
//! `L_A^-1 B L_A^-T`, which has the same spectrum and is guaranteed to give
//! real eigenvalues.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Per-entry asymmetry accepted by [`SpdMatrix::factorize`], relative to
/// `max(1, max |a_ij|)`.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Eigenvalues are clamped to this floor before taking logarithms.
pub const EIGEN_FLOOR: f64 = 1e-300;

/// A symmetric positive-definite matrix with its lower Cholesky factor.
///
/// The factor is computed once at construction, so values are immutable and
/// can be shared freely between chains.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    entries: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl SpdMatrix {
    /// Validates symmetry, symmetrizes as `(A + A^T) / 2` and factorizes.
    pub fn factorize(a: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::NotSquare {
                rows: a.nrows(),
                cols: a.ncols(),
            });
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite);
        }
        let scale = a.amax().max(1.0);
        let n = a.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                let diff = (a[(i, j)] - a[(j, i)]).abs();
                if diff > SYMMETRY_TOL * scale {
                    return Err(Error::NotSymmetric {
                        row: i,
                        col: j,
                        diff,
                    });
                }
            }
        }
        Self::from_symmetrized(a)
    }

    /// Symmetrizes and factorizes without the asymmetry check. Used for
    /// matrices produced by updates that are symmetric by construction.
    pub(crate) fn from_symmetrized(a: DMatrix<f64>) -> Result<Self> {
        let entries = (&a + a.transpose()) * 0.5;
        if entries.nrows() == 0 {
            return Err(Error::Domain("SPD matrix must have dimension >= 1".into()));
        }
        let chol = Cholesky::new(entries.clone())
            .ok_or(Error::NotPositiveDefinite)?
            .l();
        if chol
            .diagonal()
            .iter()
            .any(|d| !(*d > 0.0) || !d.is_finite())
        {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Self { entries, chol })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::NotSquare {
                rows: n,
                cols: bad.len(),
            });
        }
        Self::factorize(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            entries: DMatrix::identity(dim, dim),
            chol: DMatrix::identity(dim, dim),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        let d = DVector::from_column_slice(diag);
        Self::from_symmetrized(DMatrix::from_diagonal(&d))
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Lower-triangular `L` with `L L^T = self`.
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.entries
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    pub fn det(&self) -> f64 {
        self.log_det().exp()
    }

    /// Entrywise max-norm `max_ij |a_ij|`.
    pub fn max_abs(&self) -> f64 {
        self.entries.amax()
    }

    pub fn eigenvalues(&self) -> DVector<f64> {
        SymmetricEigen::new(self.entries.clone()).eigenvalues
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().min()
    }

    /// `k * self` for `k > 0`; the factor scales by `sqrt(k)`.
    pub fn scaled(&self, k: f64) -> Result<Self> {
        if !(k > 0.0) || !k.is_finite() {
            return Err(Error::Domain(format!(
                "scale factor must be positive, got {k}"
            )));
        }
        Ok(Self {
            entries: &self.entries * k,
            chol: &self.chol * k.sqrt(),
        })
    }

    /// `L^-1 v` by forward substitution.
    pub fn whiten(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        Error::check_dim(self.dim(), v.len())?;
        self.chol
            .solve_lower_triangular(v)
            .ok_or(Error::NotPositiveDefinite)
    }

    /// `p^T C^-1 p`, evaluated as `||L^-1 p||^2`.
    pub fn mahalanobis_sq(&self, p: &DVector<f64>) -> Result<f64> {
        Ok(self.whiten(p)?.norm_squared())
    }

    /// Eigenvalues of `self^-1 other`, from the whitened matrix
    /// `L^-1 other L^-T`.
    pub fn relative_eigenvalues(&self, other: &SpdMatrix) -> Result<DVector<f64>> {
        Error::check_dim(self.dim(), other.dim())?;
        let left = self
            .chol
            .solve_lower_triangular(&other.entries)
            .ok_or(Error::NotPositiveDefinite)?;
        let whitened = self
            .chol
            .solve_lower_triangular(&left.transpose())
            .ok_or(Error::NotPositiveDefinite)?;
        let sym = (&whitened + whitened.transpose()) * 0.5;
        Ok(SymmetricEigen::<f64, Dyn>::new(sym).eigenvalues)
    }

    /// Affine-invariant distance to `other`.
    pub fn distance(&self, other: &SpdMatrix) -> Result<f64> {
        spd_distance(self, other)
    }
}

/// `sqrt(sum_i log^2 a_i)` over the eigenvalues `a_i` of `A^-1 B`.
pub fn spd_distance(a: &SpdMatrix, b: &SpdMatrix) -> Result<f64> {
    let eig = a.relative_eigenvalues(b)?;
    let mut clamped = false;
    let sum: f64 = eig
        .iter()
        .map(|&l| {
            let l = if l < EIGEN_FLOOR {
                clamped = true;
                EIGEN_FLOOR
            } else {
                l
            };
            l.ln().powi(2)
        })
        .sum();
    if clamped {
        log::warn!("spd_distance: eigenvalue below {EIGEN_FLOOR:e} clamped before log");
    }
    Ok(sum.sqrt())
}

pub fn mahalanobis_sq(c: &SpdMatrix, p: &DVector<f64>) -> Result<f64> {
    c.mahalanobis_sq(p)
}

/// Distance between `C` and its rank-one, determinant-normalized update
/// `(1 - c1) C + c1 p p^T`, in closed form:
/// `sqrt((dim - 1) / dim) * log(1 + c1 * |p|_C^2 / (1 - c1))`.
pub fn rank_one_step_distance(c1: f64, mahal_sq: f64, dim: usize) -> Result<f64> {
    if !(c1 > 0.0 && c1 < 1.0) {
        return Err(Error::Domain(format!("c1 must lie in (0, 1), got {c1}")));
    }
    if !(mahal_sq >= 0.0) {
        return Err(Error::Domain(format!(
            "squared Mahalanobis norm must be nonnegative, got {mahal_sq}"
        )));
    }
    if dim == 0 {
        return Err(Error::Domain("dimension must be >= 1".into()));
    }
    let d = dim as f64;
    Ok(((d - 1.0) / d).sqrt() * (c1 * mahal_sq / (1.0 - c1)).ln_1p())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    fn m(rows: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), rows.len(), |i, j| rows[i][j])
    }

    #[test]
    fn identity_factor_is_identity() {
        let a = SpdMatrix::factorize(DMatrix::identity(3, 3)).unwrap();
        assert_eq!(a.chol(), &DMatrix::<f64>::identity(3, 3));
    }

    #[test]
    fn diagonal_factor_is_square_root() {
        let a = SpdMatrix::factorize(m(&[&[4.0, 0.0], &[0.0, 9.0]])).unwrap();
        assert_eq!(a.chol(), &m(&[&[2.0, 0.0], &[0.0, 3.0]]));
    }

    #[test]
    fn factor_reconstructs_input() {
        let input = m(&[&[2.0, 1.0], &[1.0, 2.0]]);
        let a = SpdMatrix::factorize(input.clone()).unwrap();
        let back = a.chol() * a.chol().transpose();
        assert!((back - input).amax() <= 1e-12);
    }

    #[test]
    fn rejects_asymmetric_and_indefinite() {
        let err = SpdMatrix::factorize(m(&[&[2.0, 1.0], &[0.5, 2.0]])).unwrap_err();
        assert!(matches!(err, Error::NotSymmetric { row: 0, col: 1, .. }));
        let err = SpdMatrix::factorize(m(&[&[1.0, 2.0], &[2.0, 1.0]])).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite));
        let err = SpdMatrix::factorize(DMatrix::zeros(2, 3)).unwrap_err();
        assert!(matches!(err, Error::NotSquare { .. }));
    }

    #[test]
    fn tiny_asymmetry_is_symmetrized() {
        let a = SpdMatrix::factorize(m(&[&[2.0, 1.0 + 1e-14], &[1.0, 2.0]])).unwrap();
        assert_eq!(a.matrix()[(0, 1)], a.matrix()[(1, 0)]);
    }

    #[test]
    fn distance_to_self_is_zero() {
        let a = SpdMatrix::factorize(m(&[&[2.0, 0.3], &[0.3, 1.0]])).unwrap();
        assert!(spd_distance(&a, &a).unwrap() <= 1e-12);
    }

    #[test]
    fn distance_identity_to_scaled_identity() {
        let a = SpdMatrix::identity(3);
        let b = a.scaled(std::f64::consts::E.powi(2)).unwrap();
        let d = spd_distance(&a, &b).unwrap();
        assert!(rel_err(d, 2.0 * 3f64.sqrt()) < 1e-12);
    }

    #[test]
    fn distance_dimension_mismatch() {
        let err = spd_distance(&SpdMatrix::identity(2), &SpdMatrix::identity(3)).unwrap_err();
        assert!(matches!(
            err,
            Error::DimensionMismatch {
                expected: 2,
                found: 3
            }
        ));
    }

    #[test]
    fn mahalanobis_examples() {
        let p = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let id = SpdMatrix::identity(3);
        assert!(rel_err(mahalanobis_sq(&id, &p).unwrap(), p.norm_squared()) < 1e-15);
        let c = id.scaled(4.0).unwrap();
        assert!(rel_err(mahalanobis_sq(&c, &p).unwrap(), p.norm_squared() / 4.0) < 1e-15);

        // [[2,1],[1,2]]^-1 = (1/3) [[2,-1],[-1,2]]; (1,1) -> (1/3)(2-1-1+2) = 2/3
        let c = SpdMatrix::factorize(m(&[&[2.0, 1.0], &[1.0, 2.0]])).unwrap();
        let v = DVector::from_vec(vec![1.0, 1.0]);
        assert!(rel_err(mahalanobis_sq(&c, &v).unwrap(), 2.0 / 3.0) < 1e-14);
        assert!(matches!(
            mahalanobis_sq(&c, &p),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn step_distance_edge_cases() {
        assert_eq!(rank_one_step_distance(0.3, 0.0, 4).unwrap(), 0.0);
        assert_eq!(rank_one_step_distance(0.3, 17.0, 1).unwrap(), 0.0);
        assert!(matches!(
            rank_one_step_distance(0.0, 1.0, 2),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            rank_one_step_distance(1.0, 1.0, 2),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn scaled_keeps_factor_consistent() {
        let a = SpdMatrix::factorize(m(&[&[3.0, 1.0], &[1.0, 2.0]])).unwrap();
        let b = a.scaled(2.5).unwrap();
        let back = b.chol() * b.chol().transpose();
        assert!((back - b.matrix()).amax() < 1e-14);
        assert!(rel_err(b.log_det(), a.log_det() + 2.0 * 2.5f64.ln()) < 1e-14);
    }
}
