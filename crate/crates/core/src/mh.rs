//! One Metropolis-Hastings transition with a gaussian random-walk proposal
//! `N(x, sigma^2 C)`.
//!
//! Random draws happen in a fixed order: `dim` standard normals for the
//! candidate, then one uniform for the accept/reject test.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::spd::SpdMatrix;
use crate::targets::Target;

/// Scale and shape of the proposal covariance `sigma^2 C`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalParams {
    sigma: f64,
    shape: SpdMatrix,
}

impl ProposalParams {
    pub fn new(sigma: f64, shape: SpdMatrix) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Domain(format!(
                "proposal scale must be positive, got {sigma}"
            )));
        }
        Ok(Self { sigma, shape })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn shape(&self) -> &SpdMatrix {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        self.shape.dim()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub candidate: DVector<f64>,
    pub alpha: f64,
    pub accepted: bool,
    pub next_x: DVector<f64>,
    /// `log g(next_x)`, carried so the next step need not re-evaluate it.
    pub next_log_density: f64,
}

/// `x + sigma * L z` with `z` standard normal and `L` the factor of `C`.
pub fn propose<R: Rng + ?Sized>(
    rng: &mut R,
    x: &DVector<f64>,
    params: &ProposalParams,
) -> Result<DVector<f64>> {
    Error::check_dim(params.dim(), x.len())?;
    let z = DVector::from_iterator(
        x.len(),
        (0..x.len()).map(|_| rng.sample::<f64, _>(StandardNormal)),
    );
    Ok(x + params.shape.chol() * z * params.sigma)
}

/// `min(1, g(y) / g(x))`, from log-densities.
pub fn acceptance_prob(target: &Target, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    let log_x = target.log_density(x)?;
    let log_y = target.log_density(y)?;
    alpha_from_logs(log_x, log_y)
}

pub(crate) fn alpha_from_logs(log_x: f64, log_y: f64) -> Result<f64> {
    if log_x == f64::NEG_INFINITY || log_x.is_nan() {
        return Err(Error::InvalidState(
            "current state has zero target density".into(),
        ));
    }
    if log_y.is_nan() {
        return Ok(0.0);
    }
    let diff = log_y - log_x;
    Ok(if diff >= 0.0 { 1.0 } else { diff.exp() })
}

/// One full transition from `x`.
pub fn mh_step<R: Rng + ?Sized>(
    rng: &mut R,
    x: &DVector<f64>,
    params: &ProposalParams,
    target: &Target,
) -> Result<StepOutcome> {
    let log_x = target.log_density(x)?;
    mh_step_from(rng, x, log_x, params, target)
}

/// [`mh_step`] with `log g(x)` supplied by the caller.
pub fn mh_step_from<R: Rng + ?Sized>(
    rng: &mut R,
    x: &DVector<f64>,
    log_x: f64,
    params: &ProposalParams,
    target: &Target,
) -> Result<StepOutcome> {
    let candidate = propose(rng, x, params)?;
    let log_y = target.log_density(&candidate)?;
    let alpha = alpha_from_logs(log_x, log_y)?;
    let u: f64 = rng.random();
    let accepted = u < alpha;
    let (next_x, next_log_density) = if accepted {
        (candidate.clone(), log_y)
    } else {
        (x.clone(), log_x)
    };
    Ok(StepOutcome {
        candidate,
        alpha,
        accepted,
        next_x,
        next_log_density,
    })
}
