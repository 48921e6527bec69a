//! Adaptive Metropolis-Hastings samplers with ergodicity monitors.
//!
//! Two adaptive schemes share one gaussian random-walk kernel ([`mh`]):
//!
//! - [`am`]: the proposal covariance is the scaled running sample covariance
//!   of the chain, regularized by `s_d * eps * I`;
//! - [`mhcma`]: rank-one MH-CMA, where a global scale is steered toward a
//!   target acceptance rate and a determinant-normalized shape matrix is
//!   reinforced along an evolution path, with learning rates that decay at
//!   every acceptance.
//!
//! [`spd`] provides the affine-invariant distance between SPD matrices and
//! the closed-form distance of one rank-one shape update. [`diagnostics`]
//! turns multi-seed traces into boundedness envelopes, adaptation-decay
//! tables, moment errors and histogram distances. [`harness`] runs seeded
//! experiments from a config file and [`verify`] holds the randomized
//! property suites.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod am;
pub mod chain;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod mh;
pub mod mhcma;
pub mod spd;
pub mod targets;
pub mod trace;
pub mod verify;

pub use am::{AmConfig, AmState};
pub use chain::{run_chain, Adapter};
pub use config::{Experiment, ExperimentConfig};
pub use diagnostics::{DiagnosticsReport, Statistic, Window};
pub use error::{Error, Result};
pub use mh::{ProposalParams, StepOutcome};
pub use mhcma::{MhCmaConfig, MhCmaState};
pub use spd::{mahalanobis_sq, rank_one_step_distance, spd_distance, SpdMatrix};
pub use targets::{Moments, Target};
pub use trace::{ChainTrace, TraceRecord};
pub use verify::{verify, CheckResult, Suite};
