//! Drives one seeded chain with a chosen adapter and records its trace.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::am::{am_adaptation_gap, am_init, am_update, AmConfig};
use crate::error::{Error, Result};
use crate::mh::{mh_step_from, ProposalParams};
use crate::mhcma::{mhcma_adapt, mhcma_gap, MhCmaConfig, MhCmaState};
use crate::targets::Target;
use crate::trace::{ChainTrace, TraceRecord};

#[derive(Debug, Clone, PartialEq)]
pub enum Adapter {
    /// Non-adaptive kernel with frozen parameters.
    Fixed(ProposalParams),
    Am(AmConfig),
    MhCma(MhCmaConfig),
}

impl Adapter {
    pub fn name(&self) -> &'static str {
        match self {
            Adapter::Fixed(_) => "fixed",
            Adapter::Am(_) => "am",
            Adapter::MhCma(_) => "mhcma",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Adapter::Fixed(p) => p.dim(),
            Adapter::Am(c) => c.dim(),
            Adapter::MhCma(c) => c.dim(),
        }
    }
}

/// The random stream of chain `seed`: ChaCha8 keyed from the seed.
pub fn chain_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Runs `n_steps` transitions from `x0`. Record `t` holds `X_t` and the
/// parameters after the `t`-th adaptation.
pub fn run_chain(
    target: &Target,
    adapter: &Adapter,
    x0: &DVector<f64>,
    n_steps: u64,
    seed: u64,
    config_hash: &str,
) -> Result<ChainTrace> {
    Error::check_dim(target.dim(), x0.len())?;
    Error::check_dim(target.dim(), adapter.dim())?;
    let mut log_x = target.log_density(x0)?;
    if !log_x.is_finite() {
        return Err(Error::InvalidState(
            "initial state must have positive target density".into(),
        ));
    }
    let mut rng = chain_rng(seed);
    let mut trace = ChainTrace::with_capacity(x0.len(), seed, config_hash, n_steps as usize);
    let mut x = x0.clone();
    let mut accepted_count = 0u64;

    match adapter {
        Adapter::Fixed(params) => {
            let log_det_c = params.shape().log_det();
            let c_max_abs = params.shape().max_abs();
            for t in 1..=n_steps {
                let out = mh_step_from(&mut rng, &x, log_x, params, target)?;
                accepted_count += u64::from(out.accepted);
                trace.push(
                    out.next_x.as_slice(),
                    TraceRecord {
                        t,
                        alpha: out.alpha,
                        accepted: out.accepted,
                        sigma: params.sigma(),
                        log_det_c,
                        adaptation_gap: 0.0,
                        tau: accepted_count,
                        c_max_abs,
                        path_mahal_sq: 0.0,
                    },
                )?;
                x = out.next_x;
                log_x = out.next_log_density;
            }
        }
        Adapter::Am(cfg) => {
            let mut state = am_init(&x, cfg)?;
            for t in 1..=n_steps {
                let params = ProposalParams::new(1.0, state.c.clone())?;
                let out = mh_step_from(&mut rng, &x, log_x, &params, target)?;
                let next = am_update(&state, &out.next_x, cfg)?;
                accepted_count += u64::from(out.accepted);
                trace.push(
                    out.next_x.as_slice(),
                    TraceRecord {
                        t,
                        alpha: out.alpha,
                        accepted: out.accepted,
                        sigma: 1.0,
                        log_det_c: next.c.log_det(),
                        adaptation_gap: am_adaptation_gap(&state, &next),
                        tau: accepted_count,
                        c_max_abs: next.c.max_abs(),
                        path_mahal_sq: 0.0,
                    },
                )?;
                state = next;
                x = out.next_x;
                log_x = out.next_log_density;
            }
        }
        Adapter::MhCma(cfg) => {
            let mut state = MhCmaState::new(cfg)?;
            for t in 1..=n_steps {
                let params = state.proposal()?;
                let out = mh_step_from(&mut rng, &x, log_x, &params, target)?;
                let next = mhcma_adapt(&state, &x, &out, cfg)?;
                trace.push(
                    out.next_x.as_slice(),
                    TraceRecord {
                        t,
                        alpha: out.alpha,
                        accepted: out.accepted,
                        sigma: next.sigma,
                        log_det_c: next.c.log_det(),
                        adaptation_gap: mhcma_gap(&state, &next)?,
                        tau: next.tau,
                        c_max_abs: next.c.max_abs(),
                        path_mahal_sq: next.path_mahalanobis_sq()?,
                    },
                )?;
                state = next;
                x = out.next_x;
                log_x = out.next_log_density;
            }
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spd::SpdMatrix;

    #[test]
    fn single_step_trace() {
        let target = Target::standard_gaussian(2);
        let adapter = Adapter::Fixed(ProposalParams::new(1.0, SpdMatrix::identity(2)).unwrap());
        let tr = run_chain(&target, &adapter, &DVector::zeros(2), 1, 5, "h").unwrap();
        assert_eq!(tr.len(), 1);
        assert_eq!(tr.records()[0].t, 1);
    }

    #[test]
    fn same_seed_same_trace() {
        let target = Target::standard_gaussian(3);
        for adapter in [
            Adapter::Am(AmConfig::defaults(3)),
            Adapter::MhCma(MhCmaConfig::defaults(3)),
        ] {
            let a = run_chain(&target, &adapter, &DVector::zeros(3), 500, 11, "h").unwrap();
            let b = run_chain(&target, &adapter, &DVector::zeros(3), 500, 11, "h").unwrap();
            let c = run_chain(&target, &adapter, &DVector::zeros(3), 500, 12, "h").unwrap();
            assert_eq!(a.to_csv_bytes().unwrap(), b.to_csv_bytes().unwrap());
            assert_ne!(a.to_csv_bytes().unwrap(), c.to_csv_bytes().unwrap());
        }
    }

    #[test]
    fn zero_density_start_rejected() {
        let target = Target::standard_gaussian(1);
        let adapter = Adapter::Fixed(ProposalParams::new(1.0, SpdMatrix::identity(1)).unwrap());
        let far = DVector::from_element(1, 1e200);
        assert!(matches!(
            run_chain(&target, &adapter, &far, 10, 0, ""),
            Err(Error::InvalidState(_))
        ));
    }
}
