//! Rank-one MH-CMA: the proposal `N(x, sigma^2 C)` has its global scale
//! driven toward a target acceptance rate and its shape `C` reinforced along
//! an evolution path of accepted steps, with `det C` held at `det C0`.
//!
//! Per iteration, reading every input from the pre-update state:
//!
//! ```text
//! sigma' = sigma exp(beta (alpha - p_target) / (1 - p_target))
//! p'     = (1 - c_c) p + sqrt(c_c (2 - c_c)) (x' - x) / sigma      if accepted
//! C~     = (1 - c1) C + c1 p' p'^T                                  if accepted
//! C'     = (det C0 / det C~)^(1/dim) C~
//! ```
//!
//! Each acceptance increments `tau`; the learning rates are then
//! `beta = beta0 / gamma^tau` and `c1 = c1_0 / gamma^tau`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::mh::{ProposalParams, StepOutcome};
use crate::spd::{spd_distance, SpdMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct MhCmaConfig {
    pub p_target: f64,
    pub c_c: f64,
    pub c1_0: f64,
    pub beta0: f64,
    pub gamma: f64,
    pub sigma0: f64,
    pub c0: SpdMatrix,
}

pub const DEFAULT_P_TARGET: f64 = 0.234;
pub const DEFAULT_GAMMA: f64 = 1.01;

/// `sqrt((4 + 1/d) / (d + 4 + 2/d))`.
pub fn default_c_c(dim: usize) -> f64 {
    let d = dim as f64;
    ((4.0 + 1.0 / d) / (d + 4.0 + 2.0 / d)).sqrt()
}

/// `(5/3) / ((d + 1.3)^2 + 1)`.
pub fn default_c1(dim: usize) -> f64 {
    let d = dim as f64;
    (5.0 / 3.0) / ((d + 1.3).powi(2) + 1.0)
}

impl MhCmaConfig {
    pub fn defaults(dim: usize) -> Self {
        Self {
            p_target: DEFAULT_P_TARGET,
            c_c: default_c_c(dim),
            c1_0: default_c1(dim),
            beta0: 1.0,
            gamma: DEFAULT_GAMMA,
            sigma0: 1.0,
            c0: SpdMatrix::identity(dim),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.p_target) {
            return Err(Error::config("mhcma.p_target", "must lie in (0, 1)"));
        }
        if !(self.c_c > 0.0 && self.c_c <= 1.0) {
            return Err(Error::config("mhcma.c_c", "must lie in (0, 1]"));
        }
        if !open_unit(self.c1_0) {
            return Err(Error::config("mhcma.c1_0", "must lie in (0, 1)"));
        }
        if !(self.beta0 > 0.0) || !self.beta0.is_finite() {
            return Err(Error::config("mhcma.beta0", "must be positive"));
        }
        if !(self.gamma > 1.0) || !self.gamma.is_finite() {
            return Err(Error::config("mhcma.gamma", "must be > 1"));
        }
        if !(self.sigma0 > 0.0) || !self.sigma0.is_finite() {
            return Err(Error::config("mhcma.sigma0", "must be positive"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.c0.dim()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MhCmaState {
    pub sigma: f64,
    pub c: SpdMatrix,
    pub p_c: DVector<f64>,
    /// Number of accepted candidates so far.
    pub tau: u64,
    pub beta: f64,
    pub c1: f64,
    pub log_det_c0: f64,
}

impl MhCmaState {
    pub fn new(cfg: &MhCmaConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            sigma: cfg.sigma0,
            c: cfg.c0.clone(),
            p_c: DVector::zeros(cfg.dim()),
            tau: 0,
            beta: cfg.beta0,
            c1: cfg.c1_0,
            log_det_c0: cfg.c0.log_det(),
        })
    }

    pub fn proposal(&self) -> Result<ProposalParams> {
        ProposalParams::new(self.sigma, self.c.clone())
    }

    /// `|p_c|^2_C = p_c^T C^-1 p_c`.
    pub fn path_mahalanobis_sq(&self) -> Result<f64> {
        self.c.mahalanobis_sq(&self.p_c)
    }
}

/// `beta0 / gamma^tau`, computed in power form.
pub fn decayed_rate(rate0: f64, gamma: f64, tau: u64) -> f64 {
    let exp = i32::try_from(tau).unwrap_or(i32::MAX);
    rate0 / gamma.powi(exp)
}

pub fn sigma_update(sigma: f64, beta: f64, alpha: f64, p_target: f64) -> f64 {
    sigma * (beta * (alpha - p_target) / (1.0 - p_target)).exp()
}

pub fn path_update(
    p_c: &DVector<f64>,
    c_c: f64,
    x_new: &DVector<f64>,
    x_old: &DVector<f64>,
    sigma: f64,
    accepted: bool,
) -> Result<DVector<f64>> {
    Error::check_dim(p_c.len(), x_new.len())?;
    Error::check_dim(p_c.len(), x_old.len())?;
    if !accepted {
        return Ok(p_c.clone());
    }
    let step = (x_new - x_old) / sigma;
    Ok(p_c * (1.0 - c_c) + step * (c_c * (2.0 - c_c)).sqrt())
}

/// Rank-one update of `C` along `p_c`, renormalized to `det C0`.
///
/// `det C~` comes from the rank-one determinant lemma
/// `det C~ = (1 - c1)^d det C (1 + c1 / (1 - c1) p^T C^-1 p)`.
pub fn cov_update(
    c: &SpdMatrix,
    c1_t: f64,
    p_c: &DVector<f64>,
    accepted: bool,
    log_det_c0: f64,
) -> Result<SpdMatrix> {
    Error::check_dim(c.dim(), p_c.len())?;
    if !(0.0..1.0).contains(&c1_t) {
        return Err(Error::Domain(format!("c1 must lie in [0, 1), got {c1_t}")));
    }
    // In 1-D the normalization pins C to C0 exactly; c1 = 0 is the
    // fully-decayed limit.
    if !accepted || c1_t == 0.0 || c.dim() == 1 {
        return Ok(c.clone());
    }
    let d = c.dim() as f64;
    let m = c.mahalanobis_sq(p_c)?;
    let log_det_tilde = d * (-c1_t).ln_1p() + c.log_det() + (c1_t / (1.0 - c1_t) * m).ln_1p();
    let scale = ((log_det_c0 - log_det_tilde) / d).exp();
    let tilde = c.matrix() * (1.0 - c1_t) + p_c * p_c.transpose() * c1_t;
    SpdMatrix::from_symmetrized(tilde * scale)
}

/// Parameter change of one iteration: `d(C, C') + |log sigma' - log sigma|`.
pub fn mhcma_gap(prev: &MhCmaState, next: &MhCmaState) -> Result<f64> {
    let dc = if prev.c == next.c {
        0.0
    } else {
        spd_distance(&prev.c, &next.c)?
    };
    Ok(dc + (next.sigma.ln() - prev.sigma.ln()).abs())
}

/// Applies one iteration of adaptation after the transition `x_old -> outcome`.
pub fn mhcma_adapt(
    state: &MhCmaState,
    x_old: &DVector<f64>,
    outcome: &StepOutcome,
    cfg: &MhCmaConfig,
) -> Result<MhCmaState> {
    let sigma = sigma_update(state.sigma, state.beta, outcome.alpha, cfg.p_target);
    let p_c = path_update(
        &state.p_c,
        cfg.c_c,
        &outcome.next_x,
        x_old,
        state.sigma,
        outcome.accepted,
    )?;
    let c = cov_update(&state.c, state.c1, &p_c, outcome.accepted, state.log_det_c0)?;
    let tau = state.tau + u64::from(outcome.accepted);
    let (beta, c1) = if outcome.accepted {
        (
            decayed_rate(cfg.beta0, cfg.gamma, tau),
            decayed_rate(cfg.c1_0, cfg.gamma, tau),
        )
    } else {
        (state.beta, state.c1)
    };
    Ok(MhCmaState {
        sigma,
        c,
        p_c,
        tau,
        beta,
        c1,
        log_det_c0: state.log_det_c0,
    })
}
