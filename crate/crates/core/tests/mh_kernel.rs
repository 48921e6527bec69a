use adaptmh::mh::{acceptance_prob, mh_step, propose};
use adaptmh::{ProposalParams, SpdMatrix, Target};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const N: usize = 100_000;

#[test]
fn proposal_covariance_is_sigma_sq_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let sigma = 1.7;
    let params = ProposalParams::new(sigma, SpdMatrix::identity(3)).unwrap();
    let x = DVector::from_column_slice(&[1.0, -2.0, 0.5]);
    let mut acc = DMatrix::zeros(3, 3);
    for _ in 0..N {
        let step = propose(&mut rng, &x, &params).unwrap() - &x;
        acc += &step * step.transpose();
    }
    let cov = acc / N as f64;
    let want = DMatrix::identity(3, 3) * sigma * sigma;
    assert!((cov - &want).norm() / want.norm() <= 0.05);
}

#[test]
fn proposal_axis_scales() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params = ProposalParams::new(2.0, SpdMatrix::from_diagonal(&[4.0, 9.0]).unwrap()).unwrap();
    let x = DVector::zeros(2);
    let (mut s0, mut s1) = (0.0, 0.0);
    for _ in 0..N {
        let y = propose(&mut rng, &x, &params).unwrap();
        s0 += y[0] * y[0];
        s1 += y[1] * y[1];
    }
    let (sd0, sd1) = ((s0 / N as f64).sqrt(), (s1 / N as f64).sqrt());
    assert!((sd0 / 4.0 - 1.0).abs() <= 0.02, "{sd0}");
    assert!((sd1 / 6.0 - 1.0).abs() <= 0.02, "{sd1}");
}

#[test]
fn density_ratio_at_unit_distance() {
    let t = Target::standard_gaussian(1);
    let a = acceptance_prob(&t, &DVector::zeros(1), &DVector::from_element(1, 1.0)).unwrap();
    assert!((a - (-0.5f64).exp()).abs() < 1e-15);
    assert!((a - 0.60653).abs() < 1e-5);
}

/// The long-run acceptance rate of a stationary chain is
/// `E[min(1, pi(y)/pi(x))]` with `x ~ pi`, `y = x + sigma z`, estimated
/// here from exact i.i.d. draws.
#[test]
fn long_run_acceptance_matches_stationary_expectation() {
    let sigma = 2.0;
    let mut oracle_rng = ChaCha8Rng::seed_from_u64(77);
    let m = 1_000_000;
    let mut expect = 0.0;
    for _ in 0..m {
        let mut dx = 0.0;
        for _ in 0..2 {
            let x: f64 = StandardNormal.sample(&mut oracle_rng);
            let z: f64 = StandardNormal.sample(&mut oracle_rng);
            let y = x + sigma * z;
            dx += x * x - y * y;
        }
        expect += (0.5 * dx).exp().min(1.0);
    }
    expect /= m as f64;

    let target = Target::standard_gaussian(2);
    let params = ProposalParams::new(sigma, SpdMatrix::identity(2)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    let mut x = DVector::zeros(2);
    let mut accepted = 0usize;
    for _ in 0..1_000 {
        x = mh_step(&mut rng, &x, &params, &target).unwrap().next_x;
    }
    for _ in 0..N {
        let out = mh_step(&mut rng, &x, &params, &target).unwrap();
        accepted += usize::from(out.accepted);
        x = out.next_x;
    }
    let rate = accepted as f64 / N as f64;
    assert!(
        (rate - expect).abs() <= 0.01,
        "chain {rate} vs expectation {expect}"
    );
}

#[test]
fn flat_region_always_accepts() {
    // Banana with b = 0 and a huge base covariance is nearly flat near 0.
    let t = Target::banana(0.0, SpdMatrix::from_diagonal(&[1e30, 1e30]).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let x = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        assert!((acceptance_prob(&t, &x, &y).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn frozen_kernel_is_stationary() {
    let target = Target::standard_gaussian(1);
    let params = ProposalParams::new(2.4, SpdMatrix::identity(1)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut x = DVector::zeros(1);
    for _ in 0..10_000 {
        x = mh_step(&mut rng, &x, &params, &target).unwrap().next_x;
    }
    let (mut s, mut ss) = (0.0, 0.0);
    for _ in 0..N {
        x = mh_step(&mut rng, &x, &params, &target).unwrap().next_x;
        s += x[0];
        ss += x[0] * x[0];
    }
    let mean = s / N as f64;
    let var = ss / N as f64 - mean * mean;
    assert!(mean.abs() <= 0.05, "{mean}");
    assert!((0.9..=1.1).contains(&var), "{var}");
}
