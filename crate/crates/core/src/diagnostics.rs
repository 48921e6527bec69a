//! Finite-sample monitors for the conditions behind adaptive-MCMC
//! ergodicity.
//!
//! Boundedness in probability and diminishing adaptation are statements
//! about infinitely many seeds and all times. The monitors here are
//! falsifiable proxies: cross-seed quantile envelopes per time window, and
//! windowed quantiles of the parameter change. A failing flag refutes the
//! condition on the observed runs; a passing flag proves nothing.
//!
//! Quantiles use the nearest-rank rule: `q_p = sorted[ceil(p n) - 1]`.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::targets::{Moments, Target};
use crate::trace::{ChainTrace, TraceRecord};

pub const MIN_ENVELOPE_TRACES: usize = 20;
pub const MIN_TV_BINS: usize = 10;

/// Half-open window `[start, end)` over record times `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: u64,
    pub end: u64,
}

impl Window {
    pub fn new(start: u64, end: u64) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, t: u64) -> bool {
        self.start <= t && t < self.end
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

/// Consecutive windows of length `len` covering `[start, end)`; the last one
/// may be shorter.
pub fn partition(start: u64, end: u64, len: u64) -> Vec<Window> {
    assert!(len > 0, "window length must be positive");
    let mut out = Vec::new();
    let mut s = start;
    while s < end {
        let e = (s + len).min(end);
        out.push(Window::new(s, e));
        s = e;
    }
    out
}

/// Nearest-rank quantile of an ascending slice.
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let n = sorted.len();
    let rank = (q * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

fn sort_values(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Record slice whose times fall in `w`. Record `i` has `t = t_first + i`.
fn window_slice(trace: &ChainTrace, w: Window) -> std::ops::Range<usize> {
    let recs = trace.records();
    let Some(first) = recs.first() else {
        return 0..0;
    };
    let lo = w.start.saturating_sub(first.t).min(recs.len() as u64) as usize;
    let hi = w.end.saturating_sub(first.t).min(recs.len() as u64) as usize;
    lo..hi.max(lo)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    /// `||X_t||_2^2`
    StateNormSq,
    /// `max_ij |C_ij|`
    CovMaxAbs,
    /// `sigma + 1/sigma`; large under both explosion and collapse of sigma.
    SigmaBalance,
    /// `p_c^T C^-1 p_c`
    PathMahalanobisSq,
}

impl Statistic {
    pub fn name(&self) -> &'static str {
        match self {
            Statistic::StateNormSq => "state_norm_sq",
            Statistic::CovMaxAbs => "cov_max_abs",
            Statistic::SigmaBalance => "sigma_balance",
            Statistic::PathMahalanobisSq => "path_mahal_sq",
        }
    }

    pub fn eval(&self, x: &[f64], r: &TraceRecord) -> f64 {
        match self {
            Statistic::StateNormSq => x.iter().map(|v| v * v).sum(),
            Statistic::CovMaxAbs => r.c_max_abs,
            Statistic::SigmaBalance => r.sigma + 1.0 / r.sigma,
            Statistic::PathMahalanobisSq => r.path_mahal_sq,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeRow {
    pub window_start: u64,
    pub window_end: u64,
    pub q50: f64,
    pub q95: f64,
    pub q99: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub statistic: Statistic,
    pub rows: Vec<EnvelopeRow>,
    /// `q99(last window) / q99(first window)`.
    pub drift_ratio: f64,
    pub drift_limit: f64,
    pub passed: bool,
}

/// Pooled cross-seed `q50/q95/q99` of `statistic` per window. Passes when
/// the last window's `q99` is at most `drift_limit` times the first's.
pub fn boundedness_envelope(
    traces: &[ChainTrace],
    statistic: Statistic,
    windows: &[Window],
    drift_limit: f64,
) -> Result<Envelope> {
    if traces.len() < MIN_ENVELOPE_TRACES {
        return Err(Error::InsufficientTraces {
            required: MIN_ENVELOPE_TRACES,
            got: traces.len(),
        });
    }
    let mut rows = Vec::with_capacity(windows.len());
    for &w in windows {
        let mut values = Vec::new();
        for tr in traces {
            let range = window_slice(tr, w);
            values.extend(range.map(|i| statistic.eval(tr.x(i), &tr.records()[i])));
        }
        if values.is_empty() {
            return Err(Error::EmptyWindow {
                start: w.start,
                end: w.end,
            });
        }
        let sorted = sort_values(values);
        rows.push(EnvelopeRow {
            window_start: w.start,
            window_end: w.end,
            q50: nearest_rank(&sorted, 0.50),
            q95: nearest_rank(&sorted, 0.95),
            q99: nearest_rank(&sorted, 0.99),
        });
    }
    let (first, last) = match (rows.first(), rows.last()) {
        (Some(f), Some(l)) => (f.q99, l.q99),
        _ => return Err(Error::Domain("no windows given".into())),
    };
    let drift_ratio = ratio(last, first);
    Ok(Envelope {
        statistic,
        rows,
        drift_ratio,
        drift_limit,
        passed: drift_ratio <= drift_limit,
    })
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == den {
        1.0
    } else if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

/// What is measured from each record's adaptation gap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapScaling {
    Raw,
    /// `t * gap`, which stays bounded when the gap decays like `1/t`.
    TimeScaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "limit", rename_all = "snake_case")]
pub enum DecayCriterion {
    /// `q95(first) / q95(last) >= limit`.
    MinRatio(f64),
    /// `max_w q95(w) <= limit * q95(first)`.
    BoundedGrowth(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub window_start: u64,
    pub window_end: u64,
    pub q95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayTable {
    pub scaling: GapScaling,
    pub criterion: DecayCriterion,
    pub rows: Vec<DecayRow>,
    /// `q95(first) / q95(last)`.
    pub decay_ratio: f64,
    /// `max_w q95(w) / q95(first)`.
    pub growth: f64,
    pub passed: bool,
}

/// Windowed `q95` of the adaptation gap, pooled over `traces`.
pub fn adaptation_decay(
    traces: &[ChainTrace],
    windows: &[Window],
    scaling: GapScaling,
    criterion: DecayCriterion,
) -> Result<DecayTable> {
    let mut rows = Vec::with_capacity(windows.len());
    for &w in windows {
        let mut values = Vec::new();
        for tr in traces {
            values.extend(
                tr.records()[window_slice(tr, w)]
                    .iter()
                    .map(|r| match scaling {
                        GapScaling::Raw => r.adaptation_gap,
                        GapScaling::TimeScaled => r.t as f64 * r.adaptation_gap,
                    }),
            );
        }
        if values.is_empty() {
            return Err(Error::EmptyWindow {
                start: w.start,
                end: w.end,
            });
        }
        rows.push(DecayRow {
            window_start: w.start,
            window_end: w.end,
            q95: nearest_rank(&sort_values(values), 0.95),
        });
    }
    let (first, last) = match (rows.first(), rows.last()) {
        (Some(f), Some(l)) => (f.q95, l.q95),
        _ => return Err(Error::Domain("no windows given".into())),
    };
    let max = rows.iter().map(|r| r.q95).fold(0.0, f64::max);
    // No adaptation at all in the last window counts as full decay.
    let decay_ratio = if last == 0.0 {
        f64::INFINITY
    } else {
        first / last
    };
    let growth = ratio(max, first);
    let passed = match criterion {
        DecayCriterion::MinRatio(limit) => decay_ratio >= limit,
        DecayCriterion::BoundedGrowth(limit) => growth <= limit,
    };
    Ok(DecayTable {
        scaling,
        criterion,
        rows,
        decay_ratio,
        growth,
        passed,
    })
}

/// Per-time cross-seed `q95` of `t * gap`, tracked from `t_start`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseGrowth {
    pub t_start: u64,
    pub t_end: u64,
    pub q95_at_start: f64,
    pub max_q95: f64,
    pub t_of_max: u64,
    /// `max_q95 / q95_at_start`.
    pub growth: f64,
    pub limit: f64,
    pub passed: bool,
}

/// At each `t` in `[t_start, t_end]`, the `q95` across traces of
/// `t * gap_t`; passes when its running maximum stays within `limit` times
/// the value at `t_start`. An `O(1/t)` gap keeps this curve flat.
pub fn pointwise_gap_growth(
    traces: &[ChainTrace],
    t_start: u64,
    t_end: u64,
    limit: f64,
) -> Result<PointwiseGrowth> {
    if traces.is_empty() {
        return Err(Error::InsufficientTraces {
            required: 1,
            got: 0,
        });
    }
    if t_end < t_start {
        return Err(Error::EmptyWindow {
            start: t_start,
            end: t_end,
        });
    }
    let mut idx = Vec::with_capacity(traces.len());
    for tr in traces {
        let range = window_slice(tr, Window::new(t_start, t_end + 1));
        if range.len() as u64 != t_end - t_start + 1 {
            return Err(Error::InsufficientHistory {
                required: t_end as usize,
                got: tr.len(),
            });
        }
        idx.push(range.start);
    }
    let mut values = vec![0.0; traces.len()];
    let mut q_start = 0.0;
    let mut max_q95 = f64::NEG_INFINITY;
    let mut t_of_max = t_start;
    for k in 0..=(t_end - t_start) {
        for ((v, tr), &i0) in values.iter_mut().zip(traces).zip(&idx) {
            let r = &tr.records()[i0 + k as usize];
            *v = r.t as f64 * r.adaptation_gap;
        }
        values.sort_by(f64::total_cmp);
        let q = nearest_rank(&values, 0.95);
        if k == 0 {
            q_start = q;
        }
        if q > max_q95 {
            max_q95 = q;
            t_of_max = t_start + k;
        }
    }
    let growth = ratio(max_q95, q_start);
    Ok(PointwiseGrowth {
        t_start,
        t_end,
        q95_at_start: q_start,
        max_q95,
        t_of_max,
        growth,
        limit,
        passed: growth <= limit,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentErrors {
    /// `max_i |mean_i - mu_i|`
    pub mean_err: f64,
    /// `||S - Sigma||_F / ||Sigma||_F`
    pub cov_err: f64,
    pub n_samples: usize,
}

/// Pooled post-burn-in moments against the target's analytic moments.
pub fn moment_check(traces: &[ChainTrace], target: &Target, burn_in: u64) -> Result<MomentErrors> {
    let moments = target
        .analytic_moments()
        .ok_or(Error::Unavailable("analytic moments"))?;
    moment_check_against(traces, &moments, burn_in)
}

/// Records with `t > burn_in` are used.
pub fn moment_check_against(
    traces: &[ChainTrace],
    moments: &Moments,
    burn_in: u64,
) -> Result<MomentErrors> {
    let dim = moments.mean.len();
    let mut n = 0usize;
    let mut mean = DVector::<f64>::zeros(dim);
    let mut scatter = DMatrix::<f64>::zeros(dim, dim);
    for tr in traces {
        Error::check_dim(dim, tr.dim())?;
        for (x, r) in tr.iter() {
            if r.t <= burn_in {
                continue;
            }
            n += 1;
            let x = DVector::from_column_slice(x);
            let delta = &x - &mean;
            mean += &delta / n as f64;
            scatter += &delta * (&x - &mean).transpose();
        }
    }
    if n < 2 {
        return Err(Error::InsufficientSamples {
            required: 2,
            got: n,
        });
    }
    let cov = scatter / (n - 1) as f64;
    let mean_err = (&mean - &moments.mean).amax();
    let cov_err = (&cov - &moments.cov).norm() / moments.cov.norm();
    Ok(MomentErrors {
        mean_err,
        cov_err,
        n_samples: n,
    })
}

/// `(1/2) sum |p_i - q_i|`; symmetric in its arguments.
pub fn binned_tv(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "binned distributions differ in length");
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Histogram distance between `samples` and the target marginal on `axis`
/// over `bins` equal bins of `[lo, hi)`, with the two tails as extra cells.
pub fn tv_histogram_samples(
    samples: &[f64],
    target: &Target,
    axis: usize,
    bins: usize,
    lo: f64,
    hi: f64,
) -> Result<f64> {
    if bins < MIN_TV_BINS {
        return Err(Error::Domain(format!(
            "need at least {MIN_TV_BINS} bins, got {bins}"
        )));
    }
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Domain(format!(
            "invalid histogram range [{lo}, {hi})"
        )));
    }
    if samples.len() < 10 * bins {
        return Err(Error::InsufficientSamples {
            required: 10 * bins,
            got: samples.len(),
        });
    }
    let width = (hi - lo) / bins as f64;
    let edge = |k: usize| if k == bins { hi } else { lo + k as f64 * width };

    // cells: [-inf, lo), bins..., [hi, inf)
    let mut counts = vec![0.0; bins + 2];
    for &s in samples {
        let cell = if s < lo {
            0
        } else if s >= hi {
            bins + 1
        } else {
            1 + (((s - lo) / width) as usize).min(bins - 1)
        };
        counts[cell] += 1.0;
    }
    let n = samples.len() as f64;
    counts.iter_mut().for_each(|c| *c /= n);

    let mut expected = Vec::with_capacity(bins + 2);
    expected.push(target.marginal_mass(axis, f64::NEG_INFINITY, lo)?);
    for k in 0..bins {
        expected.push(target.marginal_mass(axis, edge(k), edge(k + 1))?);
    }
    expected.push(target.marginal_mass(axis, hi, f64::INFINITY)?);

    Ok(binned_tv(&counts, &expected).clamp(0.0, 1.0))
}

/// [`tv_histogram_samples`] over post-burn-in records (`t > burn_in`).
pub fn tv_histogram_estimate(
    traces: &[ChainTrace],
    target: &Target,
    axis: usize,
    bins: usize,
    range: (f64, f64),
    burn_in: u64,
) -> Result<f64> {
    let window = Window::new(burn_in + 1, u64::MAX);
    tv_histogram_window(traces, target, axis, bins, range, window)
}

pub fn tv_histogram_window(
    traces: &[ChainTrace],
    target: &Target,
    axis: usize,
    bins: usize,
    range: (f64, f64),
    window: Window,
) -> Result<f64> {
    let mut samples = Vec::new();
    for tr in traces {
        Error::check_dim(target.dim(), tr.dim())?;
        samples.extend(window_slice(tr, window).map(|i| tr.x(i)[axis]));
    }
    tv_histogram_samples(&samples, target, axis, bins, range.0, range.1)
}

/// Fraction of accepted steps among records in `window`.
pub fn acceptance_rate(trace: &ChainTrace, window: Window) -> Result<f64> {
    acceptance_rate_pooled(std::slice::from_ref(trace), window)
}

pub fn acceptance_rate_pooled(traces: &[ChainTrace], window: Window) -> Result<f64> {
    let mut n = 0usize;
    let mut acc = 0usize;
    for tr in traces {
        let recs = &tr.records()[window_slice(tr, window)];
        n += recs.len();
        acc += recs.iter().filter(|r| r.accepted).count();
    }
    if n == 0 {
        return Err(Error::EmptyWindow {
            start: window.start,
            end: window.end,
        });
    }
    Ok(acc as f64 / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRow {
    pub window_start: u64,
    pub window_end: u64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvRow {
    pub window_start: u64,
    pub window_end: u64,
    pub axis: usize,
    pub tv: f64,
}

/// Aggregated diagnostics of a multi-seed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub adapter: String,
    pub n_traces: usize,
    pub n_steps: u64,
    pub burn_in: u64,
    pub envelopes: Vec<Envelope>,
    pub acceptance_curve: Vec<AcceptanceRow>,
    pub decay: Option<DecayTable>,
    pub pointwise_growth: Option<PointwiseGrowth>,
    pub moments: Option<MomentErrors>,
    pub tv: Vec<TvRow>,
    pub flags: BTreeMap<String, bool>,
    /// Checks that were skipped, with the reason.
    pub notes: Vec<String>,
}

impl DiagnosticsReport {
    pub fn all_passed(&self) -> bool {
        self.flags.values().all(|v| *v)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Columns: `statistic, window_start, window_end, q50, q95, q99`.
    pub fn envelopes_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "statistic",
            "window_start",
            "window_end",
            "q50",
            "q95",
            "q99",
        ])?;
        for env in &self.envelopes {
            for row in &env.rows {
                w.write_record([
                    env.statistic.name().to_string(),
                    row.window_start.to_string(),
                    row.window_end.to_string(),
                    crate::trace::fmt_f64(row.q50),
                    crate::trace::fmt_f64(row.q95),
                    crate::trace::fmt_f64(row.q99),
                ])?;
            }
        }
        w.into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }
}
