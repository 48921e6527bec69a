//! Adaptive Metropolis: the proposal covariance tracks the scaled sample
//! covariance of the whole chain history, regularized by `s_d * eps * I`.
//!
//! With samples `X_0..X_t`, mean `Xbar_t` and the divisor-`t` covariance
//! `cov_t = 1/t sum_i (X_i - Xbar_t)(X_i - Xbar_t)^T`,
//!
//! ```text
//! C_{t+1} = C_0                          if t < t0
//!         = s_d cov_t + s_d eps I        otherwise
//! ```
//!
//! Past the first adapted step the update uses the equivalent recursion
//!
//! ```text
//! C_{t+1} = (t-1)/t C_t + s_d/t (t Xbar_{t-1} Xbar_{t-1}^T - (t+1) Xbar_t Xbar_t^T + X_t X_t^T + eps I)
//! ```

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::spd::SpdMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct AmConfig {
    pub t0: usize,
    pub s_d: f64,
    pub eps: f64,
    pub c0: SpdMatrix,
}

impl AmConfig {
    /// `t0 = 2 dim`, `s_d = 2.38^2 / dim`, `eps = 1e-6`, `C0 = I`.
    pub fn defaults(dim: usize) -> Self {
        Self {
            t0: 2 * dim,
            s_d: default_scaling(dim),
            eps: 1e-6,
            c0: SpdMatrix::identity(dim),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t0 < 1 {
            return Err(Error::config("am.t0", "must be >= 1"));
        }
        if !(self.s_d > 0.0) || !self.s_d.is_finite() {
            return Err(Error::config("am.s_d", "must be positive"));
        }
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(Error::config("am.eps", "must be positive"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.c0.dim()
    }
}

pub fn default_scaling(dim: usize) -> f64 {
    2.38 * 2.38 / dim as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmState {
    /// Index of the newest sample; the history is `X_0..X_t`.
    pub t: usize,
    pub mean: DVector<f64>,
    /// Running `sum_i (X_i - Xbar_t)(X_i - Xbar_t)^T`.
    pub scatter: DMatrix<f64>,
    pub c: SpdMatrix,
}

pub fn am_init(x0: &DVector<f64>, cfg: &AmConfig) -> Result<AmState> {
    cfg.validate()?;
    Error::check_dim(cfg.dim(), x0.len())?;
    Ok(AmState {
        t: 0,
        mean: x0.clone(),
        scatter: DMatrix::zeros(x0.len(), x0.len()),
        c: cfg.c0.clone(),
    })
}

/// Adds `x_new` as `X_{t+1}` and recomputes the covariance.
pub fn am_update(state: &AmState, x_new: &DVector<f64>, cfg: &AmConfig) -> Result<AmState> {
    Error::check_dim(state.mean.len(), x_new.len())?;
    let t = state.t + 1;
    let tf = t as f64;
    let dim = x_new.len();

    let prev_mean = &state.mean;
    let delta = x_new - prev_mean;
    let mean = prev_mean + &delta / (tf + 1.0);
    // Welford: scatter += (x - old mean)(x - new mean)^T.
    let scatter = &state.scatter + &delta * (x_new - &mean).transpose();

    let c = if t < cfg.t0 {
        cfg.c0.clone()
    } else if t == cfg.t0 {
        SpdMatrix::from_symmetrized(
            &scatter * (cfg.s_d / tf) + DMatrix::identity(dim, dim) * (cfg.s_d * cfg.eps),
        )?
    } else {
        let outer = prev_mean * prev_mean.transpose() * tf - &mean * mean.transpose() * (tf + 1.0)
            + x_new * x_new.transpose()
            + DMatrix::identity(dim, dim) * cfg.eps;
        SpdMatrix::from_symmetrized(state.c.matrix() * ((tf - 1.0) / tf) + outer * (cfg.s_d / tf))?
    };

    Ok(AmState {
        t,
        mean,
        scatter,
        c,
    })
}

/// Direct two-pass evaluation of `s_d cov(X_0..X_t) + s_d eps I`, with the
/// divisor `t` for `t + 1` samples.
pub fn am_batch_covariance(history: &[DVector<f64>], cfg: &AmConfig) -> Result<SpdMatrix> {
    if history.len() < 2 {
        return Err(Error::InsufficientHistory {
            required: 2,
            got: history.len(),
        });
    }
    let dim = history[0].len();
    for x in history {
        Error::check_dim(dim, x.len())?;
    }
    let n = history.len() as f64;
    let mean = history.iter().fold(DVector::zeros(dim), |acc, x| acc + x) / n;
    let mut cov = DMatrix::zeros(dim, dim);
    for x in history {
        let r = x - &mean;
        cov += &r * r.transpose();
    }
    cov /= n - 1.0;
    SpdMatrix::from_symmetrized(cov * cfg.s_d + DMatrix::identity(dim, dim) * (cfg.s_d * cfg.eps))
}

/// `max_ij |C'_ij - C_ij|`.
pub fn am_adaptation_gap(prev: &AmState, next: &AmState) -> f64 {
    max_abs_diff(prev.c.matrix(), next.c.matrix())
}

pub(crate) fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
