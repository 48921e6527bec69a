//! Analytic target densities with continuous log-densities.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::spd::SpdMatrix;

/// Tolerance on `sum(weights) == 1` for mixtures.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// First and second moments of a target.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: SpdMatrix,
    log_norm: f64,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: SpdMatrix) -> Result<Self> {
        Error::check_dim(cov.dim(), mean.len())?;
        let d = mean.len() as f64;
        let log_norm = -0.5 * d * (2.0 * PI).ln() - 0.5 * cov.log_det();
        Ok(Self {
            mean,
            cov,
            log_norm,
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &SpdMatrix {
        &self.cov
    }

    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        let r = x - &self.mean;
        Ok(self.log_norm - 0.5 * self.cov.mahalanobis_sq(&r)?)
    }

    fn marginal(&self, axis: usize) -> (f64, f64) {
        (self.mean[axis], self.cov.matrix()[(axis, axis)].sqrt())
    }
}

#[derive(Debug, Clone)]
pub enum TargetKind {
    Gaussian(Gaussian),
    /// Base gaussian pulled back through `y_1 = x_1`,
    /// `y_2 = x_2 + b (x_1^2 - v)` with `v` the base variance of `x_1`.
    Banana {
        b: f64,
        base: Gaussian,
    },
    Mixture {
        weights: Vec<f64>,
        components: Vec<Gaussian>,
    },
}

/// A target distribution on `R^dim` given by its log-density.
#[derive(Debug, Clone)]
pub struct Target {
    dim: usize,
    kind: TargetKind,
}

impl Target {
    pub fn gaussian(mean: DVector<f64>, cov: SpdMatrix) -> Result<Self> {
        let g = Gaussian::new(mean, cov)?;
        Ok(Self {
            dim: g.mean.len(),
            kind: TargetKind::Gaussian(g),
        })
    }

    pub fn standard_gaussian(dim: usize) -> Self {
        Self::gaussian(DVector::zeros(dim), SpdMatrix::identity(dim))
            .expect("identity covariance matches zero mean")
    }

    /// Zero-mean banana built on `N(0, base_cov)`; needs `dim >= 2`.
    pub fn banana(b: f64, base_cov: SpdMatrix) -> Result<Self> {
        if base_cov.dim() < 2 {
            return Err(Error::Domain("banana target needs dim >= 2".into()));
        }
        if !b.is_finite() {
            return Err(Error::Domain(format!(
                "banana curvature must be finite, got {b}"
            )));
        }
        let dim = base_cov.dim();
        let base = Gaussian::new(DVector::zeros(dim), base_cov)?;
        Ok(Self {
            dim,
            kind: TargetKind::Banana { b, base },
        })
    }

    pub fn mixture(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covs: Vec<SpdMatrix>,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != covs.len() {
            return Err(Error::Domain(
                "mixture needs equally many (>= 1) weights, means and covariances".into(),
            ));
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::Domain("mixture weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Domain(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        let dim = means[0].len();
        let components = means
            .into_iter()
            .zip(covs)
            .map(|(m, c)| {
                Error::check_dim(dim, m.len())?;
                Gaussian::new(m, c)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dim,
            kind: TargetKind::Mixture {
                weights,
                components,
            },
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &TargetKind {
        &self.kind
    }

    /// `log g(x)`, fully normalized for every kind.
    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        Error::check_dim(self.dim, x.len())?;
        match &self.kind {
            TargetKind::Gaussian(g) => g.log_density(x),
            TargetKind::Banana { b, base } => {
                let v = base.cov.matrix()[(0, 0)];
                let mut y = x.clone();
                y[1] += b * (x[0] * x[0] - v);
                base.log_density(&y)
            }
            TargetKind::Mixture {
                weights,
                components,
            } => {
                let terms = weights
                    .iter()
                    .zip(components)
                    .map(|(w, g)| Ok(w.ln() + g.log_density(x)?))
                    .collect::<Result<Vec<f64>>>()?;
                Ok(log_sum_exp(&terms))
            }
        }
    }

    /// Exact mean and covariance, or `None` when no closed form is provided
    /// (banana).
    pub fn analytic_moments(&self) -> Option<Moments> {
        match &self.kind {
            TargetKind::Gaussian(g) => Some(Moments {
                mean: g.mean.clone(),
                cov: g.cov.matrix().clone(),
            }),
            TargetKind::Banana { .. } => None,
            TargetKind::Mixture {
                weights,
                components,
            } => {
                let mut mean = DVector::zeros(self.dim);
                let mut second = DMatrix::zeros(self.dim, self.dim);
                for (w, g) in weights.iter().zip(components) {
                    mean += &g.mean * *w;
                    second += (g.cov.matrix() + &g.mean * g.mean.transpose()) * *w;
                }
                let cov = second - &mean * mean.transpose();
                Some(Moments { mean, cov })
            }
        }
    }

    /// Probability that coordinate `axis` falls in `[lo, hi)`; the bounds
    /// may be infinite.
    pub fn marginal_mass(&self, axis: usize, lo: f64, hi: f64) -> Result<f64> {
        if axis >= self.dim {
            return Err(Error::Domain(format!(
                "axis {axis} out of range for dim {}",
                self.dim
            )));
        }
        if !(lo <= hi) {
            return Err(Error::Domain(format!("empty interval [{lo}, {hi})")));
        }
        let mass = match &self.kind {
            TargetKind::Gaussian(g) => {
                let (m, s) = g.marginal(axis);
                normal_mass(m, s, lo, hi)
            }
            TargetKind::Mixture {
                weights,
                components,
            } => weights
                .iter()
                .zip(components)
                .map(|(w, g)| {
                    let (m, s) = g.marginal(axis);
                    w * normal_mass(m, s, lo, hi)
                })
                .sum(),
            TargetKind::Banana { b, base } => {
                if axis == 1 {
                    banana_second_axis_mass(*b, base, lo, hi)
                } else {
                    // x_k = y_k for every k != 1.
                    let (m, s) = base.marginal(axis);
                    normal_mass(m, s, lo, hi)
                }
            }
        };
        Ok(mass.clamp(0.0, 1.0))
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

fn normal_mass(mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let zl = (lo - mean) / sd;
    let zh = (hi - mean) / sd;
    // Subtract upper tails when both bounds sit right of the mean to keep
    // precision in the tail.
    if zl > 0.0 {
        normal_cdf(-zl) - normal_cdf(-zh)
    } else {
        normal_cdf(zh) - normal_cdf(zl)
    }
}

/// `P(lo <= x_2 < hi)` for the banana: integrate over `y_1` the conditional
/// gaussian mass of `y_2 = x_2 + b (y_1^2 - v)` with composite Simpson.
fn banana_second_axis_mass(b: f64, base: &Gaussian, lo: f64, hi: f64) -> f64 {
    const HALF_WIDTH: f64 = 12.0;
    const INTERVALS: usize = 4000;

    let c = base.cov.matrix();
    let v = c[(0, 0)];
    let s1 = v.sqrt();
    let slope = c[(1, 0)] / v;
    let cond_sd = (c[(1, 1)] - c[(1, 0)] * c[(1, 0)] / v).max(0.0).sqrt();

    let integrand = |y1: f64| {
        let shift = b * (y1 * y1 - v);
        let cond_mean = slope * y1;
        let dens = (-0.5 * (y1 / s1).powi(2) - 0.5 * (2.0 * PI).ln() - s1.ln()).exp();
        let inner = if cond_sd > 0.0 {
            normal_mass(cond_mean, cond_sd, lo + shift, hi + shift)
        } else {
            let y2 = cond_mean;
            f64::from(y2 >= lo + shift && y2 < hi + shift)
        };
        dens * inner
    };

    let a = -HALF_WIDTH * s1;
    let h = 2.0 * HALF_WIDTH * s1 / INTERVALS as f64;
    let mut sum = integrand(a) + integrand(-a);
    for k in 1..INTERVALS {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * integrand(a + k as f64 * h);
    }
    sum * h / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn two_bump_mixture() -> Target {
        Target::mixture(
            vec![0.5, 0.5],
            vec![v(&[-2.0]), v(&[2.0])],
            vec![SpdMatrix::identity(1), SpdMatrix::identity(1)],
        )
        .unwrap()
    }

    #[test]
    fn standard_gaussian_at_mode() {
        let t = Target::standard_gaussian(2);
        let lp = t.log_density(&v(&[0.0, 0.0])).unwrap();
        assert!((lp + (2.0 * PI).ln()).abs() < 1e-14);
    }

    #[test]
    fn flat_banana_equals_base() {
        let cov = SpdMatrix::from_rows(&[vec![1.0, 0.5], vec![0.5, 2.0]]).unwrap();
        let banana = Target::banana(0.0, cov.clone()).unwrap();
        let base = Target::gaussian(DVector::zeros(2), cov).unwrap();
        for x in [[0.0, 0.0], [1.5, -0.3], [-4.0, 7.0]] {
            let x = v(&x);
            assert_eq!(
                banana.log_density(&x).unwrap(),
                base.log_density(&x).unwrap()
            );
        }
    }

    #[test]
    fn mixture_density_at_origin() {
        let t = two_bump_mixture();
        let phi = |z: f64| (-0.5 * z * z).exp() / (2.0 * PI).sqrt();
        let expect = (0.5 * phi(-2.0) + 0.5 * phi(2.0)).ln();
        assert!((t.log_density(&v(&[0.0])).unwrap() - expect).abs() < 1e-14);
    }

    #[test]
    fn moments() {
        let m = Target::standard_gaussian(2).analytic_moments().unwrap();
        assert_eq!(m.mean, DVector::zeros(2));
        assert_eq!(m.cov, DMatrix::identity(2, 2));

        let m = two_bump_mixture().analytic_moments().unwrap();
        assert!(m.mean[0].abs() < 1e-15);
        assert!((m.cov[(0, 0)] - 5.0).abs() < 1e-13);

        let banana = Target::banana(0.3, SpdMatrix::identity(2)).unwrap();
        assert!(banana.analytic_moments().is_none());
    }

    #[test]
    fn invalid_construction() {
        assert!(Target::mixture(
            vec![0.5, 0.4],
            vec![v(&[0.0]), v(&[1.0])],
            vec![SpdMatrix::identity(1), SpdMatrix::identity(1)],
        )
        .is_err());
        assert!(Target::mixture(
            vec![1.5, -0.5],
            vec![v(&[0.0]), v(&[1.0])],
            vec![SpdMatrix::identity(1), SpdMatrix::identity(1)],
        )
        .is_err());
        assert!(Target::banana(1.0, SpdMatrix::identity(1)).is_err());
        assert!(matches!(
            Target::standard_gaussian(2).log_density(&v(&[0.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn gaussian_gradient_matches_finite_differences() {
        let cov = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 0.5]);
        let mean = v(&[0.5, -1.0, 2.0]);
        let t = Target::gaussian(mean.clone(), SpdMatrix::factorize(cov.clone()).unwrap()).unwrap();
        let x = v(&[1.0, 0.2, 1.1]);
        let analytic = -(cov.try_inverse().unwrap() * (&x - &mean));
        let h = 1e-5;
        for i in 0..3 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (t.log_density(&xp).unwrap() - t.log_density(&xm).unwrap()) / (2.0 * h);
            assert!((fd - analytic[i]).abs() <= 1e-5 * analytic[i].abs().max(1.0));
        }
    }

    #[test]
    fn marginal_mass_sums_to_one() {
        let banana = Target::banana(0.5, SpdMatrix::from_diagonal(&[2.0, 1.0]).unwrap()).unwrap();
        for t in [Target::standard_gaussian(2), two_bump_mixture(), banana] {
            for axis in 0..t.dim() {
                let lo = t.marginal_mass(axis, f64::NEG_INFINITY, -1.0).unwrap();
                let mid = t.marginal_mass(axis, -1.0, 1.5).unwrap();
                let hi = t.marginal_mass(axis, 1.5, f64::INFINITY).unwrap();
                assert!((lo + mid + hi - 1.0).abs() < 1e-9, "axis {axis}");
            }
        }
    }

    #[test]
    fn banana_second_axis_matches_flat_case() {
        let cov = SpdMatrix::from_rows(&[vec![1.0, 0.4], vec![0.4, 1.5]]).unwrap();
        let banana = Target::banana(0.0, cov.clone()).unwrap();
        let base = Target::gaussian(DVector::zeros(2), cov).unwrap();
        let a = banana.marginal_mass(1, -0.7, 1.3).unwrap();
        let b = base.marginal_mass(1, -0.7, 1.3).unwrap();
        assert!((a - b).abs() < 1e-10);
    }
}
