//! Randomized property suites behind the `verify` command.
//!
//! Each suite draws `n_cases` random instances from a seeded stream and
//! compares the library against an independent evaluation. A case that
//! misses its tolerance is a failure, not an error.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::am::{am_batch_covariance, am_init, am_update, AmConfig};
use crate::error::{Error, Result};
use crate::mh::{acceptance_prob, mh_step, ProposalParams};
use crate::mhcma::cov_update;
use crate::spd::{rank_one_step_distance, spd_distance, SpdMatrix};
use crate::targets::Target;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Spd,
    Lemma9,
    AmEquivalence,
    Stationarity,
    All,
}

impl Suite {
    pub const ALL: [Suite; 4] = [
        Suite::Spd,
        Suite::Lemma9,
        Suite::AmEquivalence,
        Suite::Stationarity,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Spd => "spd",
            Suite::Lemma9 => "lemma9",
            Suite::AmEquivalence => "am_equivalence",
            Suite::Stationarity => "stationarity",
            Suite::All => "all",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .chain([Suite::All])
            .find(|suite| suite.name() == s)
            .ok_or_else(|| {
                Error::config(
                    "suite",
                    format!("unknown suite {s:?}; expected spd, lemma9, am_equivalence, stationarity or all"),
                )
            })
    }
}

/// Outcome of one property over all cases.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub check: String,
    pub cases: usize,
    pub failures: usize,
    /// Largest error seen, in the unit the tolerance is stated in.
    pub max_error: f64,
    pub tolerance: f64,
    /// The first few failing cases.
    pub samples: Vec<String>,
}

impl CheckResult {
    fn new(check: &str, tolerance: f64) -> Self {
        Self {
            check: check.to_string(),
            cases: 0,
            failures: 0,
            max_error: 0.0,
            tolerance,
            samples: Vec::new(),
        }
    }

    /// Records one case; NaN errors count as failures.
    fn record(&mut self, err: f64, describe: impl FnOnce() -> String) {
        self.cases += 1;
        if err.is_nan() || err > self.max_error {
            self.max_error = err;
        }
        if !(err <= self.tolerance) {
            self.failures += 1;
            if self.samples.len() < 5 {
                self.samples.push(describe());
            }
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.cases > 0
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {}/{} failed, max error {:.3e} (tol {:.0e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.check,
            self.failures,
            self.cases,
            self.max_error,
            self.tolerance
        )
    }
}

pub const METRIC_TOL: f64 = 1e-8;
pub const ORACLE_REL_TOL: f64 = 1e-9;
pub const LEMMA9_REL_TOL: f64 = 1e-9;
pub const AM_REL_TOL: f64 = 1e-10;

/// Runs `suite` (or every suite) with `n_cases` random instances per check.
pub fn verify(suite: Suite, n_cases: usize, seed: u64) -> Result<Vec<CheckResult>> {
    if n_cases == 0 {
        return Err(Error::config("cases", "must be >= 1"));
    }
    let suites: Vec<Suite> = match suite {
        Suite::All => Suite::ALL.to_vec(),
        one => vec![one],
    };
    let mut out = Vec::new();
    for s in suites {
        // Each suite has its own stream, so `all` repeats the single runs.
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ suite_salt(s));
        out.extend(match s {
            Suite::Spd => spd_suite(&mut rng, n_cases)?,
            Suite::Lemma9 => vec![lemma9_suite(&mut rng, n_cases)?],
            Suite::AmEquivalence => vec![am_equivalence_suite(&mut rng, n_cases)?],
            Suite::Stationarity => stationarity_suite(&mut rng, n_cases)?,
            Suite::All => unreachable!(),
        });
    }
    Ok(out)
}

fn suite_salt(s: Suite) -> u64 {
    match s {
        Suite::Spd => 0x5350_4400,
        Suite::Lemma9 => 0x4c39_0000,
        Suite::AmEquivalence => 0x414d_0000,
        Suite::Stationarity => 0x5354_0000,
        Suite::All => 0,
    }
}

fn normal_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn normal_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// `G G^T / dim + 0.1 I` with a random overall scale in `[0.1, 10]`.
pub fn random_spd<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> SpdMatrix {
    let g = normal_matrix(rng, dim, dim);
    let scale = 10f64.powf(rng.random_range(-1.0..1.0));
    let a = (&g * g.transpose() / dim as f64 + DMatrix::identity(dim, dim) * 0.1) * scale;
    SpdMatrix::factorize((&a + a.transpose()) * 0.5).expect("G G^T + 0.1 I is SPD")
}

/// Distance from the eigenvalues of the non-symmetric product `A^-1 B`.
pub fn distance_oracle(a: &SpdMatrix, b: &SpdMatrix) -> f64 {
    let inv = a
        .matrix()
        .clone()
        .try_inverse()
        .expect("SPD matrices are invertible");
    let prod = inv * b.matrix();
    prod.complex_eigenvalues()
        .iter()
        .map(|z| z.re.ln().powi(2))
        .sum::<f64>()
        .sqrt()
}

fn rel_err(got: f64, want: f64) -> f64 {
    if got == want {
        0.0
    } else {
        (got - want).abs() / want.abs()
    }
}

fn spd_suite(rng: &mut ChaCha8Rng, n: usize) -> Result<Vec<CheckResult>> {
    let mut oracle = CheckResult::new("spd.distance_oracle", ORACLE_REL_TOL);
    let mut symmetry = CheckResult::new("spd.symmetry", METRIC_TOL);
    let mut identity = CheckResult::new("spd.identity", METRIC_TOL);
    let mut triangle = CheckResult::new("spd.triangle", METRIC_TOL);
    let mut congruence = CheckResult::new("spd.congruence", METRIC_TOL);
    for case in 0..n {
        let dim = rng.random_range(2..=8);
        let a = random_spd(rng, dim);
        let b = random_spd(rng, dim);
        let c = random_spd(rng, dim);
        let ab = spd_distance(&a, &b)?;
        let ba = spd_distance(&b, &a)?;
        let ac = spd_distance(&a, &c)?;
        let bc = spd_distance(&b, &c)?;

        let want = distance_oracle(&a, &b);
        oracle.record(rel_err(ab, want), || {
            format!("case {case}, dim {dim}: {ab} vs oracle {want}")
        });
        symmetry.record((ab - ba).abs() / ab.max(1.0), || {
            format!("case {case}: d(A,B) = {ab}, d(B,A) = {ba}")
        });
        let aa = spd_distance(&a, &a)?;
        identity.record(aa, || format!("case {case}: d(A,A) = {aa}"));
        triangle.record((ac - ab - bc).max(0.0), || {
            format!("case {case}: d(A,C) = {ac} > {ab} + {bc}")
        });

        // G = I + 0.3 N keeps the congruence well conditioned.
        let g = DMatrix::identity(dim, dim) + normal_matrix(rng, dim, dim) * 0.3;
        let congruent = |m: &SpdMatrix| {
            let x = &g * m.matrix() * g.transpose();
            SpdMatrix::factorize((&x + x.transpose()) * 0.5)
        };
        match (congruent(&a), congruent(&b)) {
            (Ok(ga), Ok(gb)) => {
                let gab = spd_distance(&ga, &gb)?;
                congruence.record((gab - ab).abs() / ab.max(1.0), || {
                    format!("case {case}: d(GAG', GBG') = {gab}, d(A,B) = {ab}")
                });
            }
            // A singular draw of G: redraw-free skip, counted as a case.
            _ => congruence.record(0.0, String::new),
        }
    }

    let mut fixture = CheckResult::new("spd.asymmetric_fixture_rejected", 0.0);
    let asym = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.4, 1.0]);
    let rejected = matches!(SpdMatrix::factorize(asym), Err(Error::NotSymmetric { .. }));
    fixture.record(if rejected { 0.0 } else { 1.0 }, || {
        "asymmetric input was accepted".into()
    });
    Ok(vec![
        oracle, symmetry, identity, triangle, congruence, fixture,
    ])
}

fn lemma9_suite(rng: &mut ChaCha8Rng, n: usize) -> Result<CheckResult> {
    let mut res = CheckResult::new("lemma9.closed_form", LEMMA9_REL_TOL);
    for case in 0..n {
        let dim = rng.random_range(2..=8);
        let c = random_spd(rng, dim);
        let p = normal_vector(rng, dim) * 10f64.powf(rng.random_range(-1.0..1.0));
        let c1 = rng.random_range(1e-3..0.5);
        let next = cov_update(&c, c1, &p, true, c.log_det())?;
        let pipeline = spd_distance(&c, &next)?;
        let m = c.mahalanobis_sq(&p)?;
        let closed = rank_one_step_distance(c1, m, dim)?;
        res.record(rel_err(pipeline, closed), || {
            format!("case {case}, dim {dim}, c1 {c1}, m {m}: {pipeline} vs {closed}")
        });
    }
    Ok(res)
}

fn am_equivalence_suite(rng: &mut ChaCha8Rng, n: usize) -> Result<CheckResult> {
    let mut res = CheckResult::new("am_equivalence.recursive_vs_batch", AM_REL_TOL);
    for case in 0..n {
        let dim = rng.random_range(1..=5);
        let mut cfg = AmConfig::defaults(dim);
        cfg.t0 = rng.random_range(1..=2 * dim);
        cfg.eps = 10f64.powf(rng.random_range(-8.0..-2.0));
        let len = rng.random_range(cfg.t0 + 1..=1000);
        let offset = normal_vector(rng, dim) * 3.0;
        let scale = 10f64.powf(rng.random_range(-1.0..1.0));
        let history: Vec<DVector<f64>> = (0..len)
            .map(|_| &offset + normal_vector(rng, dim) * scale)
            .collect();

        let mut state = am_init(&history[0], &cfg)?;
        let mut worst = 0.0f64;
        for (k, x) in history.iter().enumerate().skip(1) {
            state = am_update(&state, x, &cfg)?;
            if k >= cfg.t0 && (k % 97 == 0 || k + 1 == len) {
                let batch = am_batch_covariance(&history[..=k], &cfg)?;
                let err = (state.c.matrix() - batch.matrix()).norm() / batch.matrix().norm();
                worst = worst.max(err);
            }
        }
        res.record(worst, || {
            format!("case {case}, dim {dim}, length {len}: relative error {worst:e}")
        });
    }
    Ok(res)
}

fn stationarity_suite(rng: &mut ChaCha8Rng, n: usize) -> Result<Vec<CheckResult>> {
    // Detailed balance for a symmetric proposal: the larger of alpha(x, y)
    // and alpha(y, x) is 1 and the smaller is pi(low) / pi(high).
    let mut balance = CheckResult::new("stationarity.detailed_balance", 1e-12);
    for case in 0..n {
        let dim = rng.random_range(1..=4);
        let target = Target::gaussian(normal_vector(rng, dim), random_spd(rng, dim))?;
        let x = normal_vector(rng, dim) * 2.0;
        let y = normal_vector(rng, dim) * 2.0;
        let ratio = (-(target.log_density(&x)? - target.log_density(&y)?).abs()).exp();
        let fwd = acceptance_prob(&target, &x, &y)?;
        let bwd = acceptance_prob(&target, &y, &x)?;
        let err = (fwd.max(bwd) - 1.0).abs() + rel_err(fwd.min(bwd), ratio);
        balance.record(err, || {
            format!("case {case}: alpha {fwd} / {bwd}, density ratio {ratio}")
        });
    }

    // Frozen kernel on N(0, 1): 1e4 burn-in, then 1e5 recorded steps.
    let mut long_run = CheckResult::new("stationarity.fixed_kernel_moments", 0.0);
    let target = Target::standard_gaussian(1);
    let params = ProposalParams::new(2.4, SpdMatrix::identity(1))?;
    let mut chain_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let mut x = DVector::zeros(1);
    let (burn, steps) = (10_000, 100_000);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for i in 0..burn + steps {
        x = mh_step(&mut chain_rng, &x, &params, &target)?.next_x;
        if i >= burn {
            sum += x[0];
            sum_sq += x[0] * x[0];
        }
    }
    let mean = sum / steps as f64;
    let var = sum_sq / steps as f64 - mean * mean;
    let miss = (mean.abs() - 0.05).max(0.0) + (var - 1.1).max(0.0) + (0.9 - var).max(0.0);
    long_run.record(miss, || format!("mean {mean}, variance {var}"));
    Ok(vec![balance, long_run])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_suite_names() {
        for s in Suite::ALL.into_iter().chain([Suite::All]) {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn zero_cases_rejected() {
        assert!(verify(Suite::Spd, 0, 1).is_err());
    }

    #[test]
    fn small_runs_pass() {
        let results = verify(Suite::All, 20, 42).unwrap();
        for r in &results {
            assert!(r.passed(), "{r}");
        }
        assert!(results
            .iter()
            .any(|r| r.check == "spd.asymmetric_fixture_rejected"));
    }

    #[test]
    fn all_repeats_single_suites() {
        let all = verify(Suite::All, 5, 9).unwrap();
        let single = verify(Suite::Lemma9, 5, 9).unwrap();
        let from_all: Vec<_> = all
            .into_iter()
            .filter(|r| r.check.starts_with("lemma9"))
            .collect();
        assert_eq!(from_all, single);
    }

    #[test]
    fn failure_is_counted() {
        let mut r = CheckResult::new("x", 1e-3);
        r.record(1e-4, String::new);
        r.record(f64::NAN, || "nan".into());
        assert_eq!((r.cases, r.failures), (2, 1));
        assert!(!r.passed());
    }
}
