//! Multi-seed experiment runner and report builder.
//!
//! A run writes into one directory:
//!
//! - `trace_seed_<s>.csv` and `params_seed_<s>.csv` per seed
//! - `report.json` and `envelopes.csv`
//! - `config.toml`, the canonical form of the config that was run
//! - `manifest.json` with the config hash and a SHA-256 per file

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chain::{run_chain, Adapter};
use crate::config::{Experiment, ExperimentConfig};
use crate::diagnostics::{
    acceptance_rate_pooled, adaptation_decay, boundedness_envelope, moment_check, partition,
    pointwise_gap_growth, tv_histogram_window, AcceptanceRow, DecayCriterion, DiagnosticsReport,
    GapScaling, Statistic, TvRow, Window, MIN_ENVELOPE_TRACES,
};
use crate::error::{Error, Result};
use crate::trace::ChainTrace;

/// Overrides the output directory of the config file.
pub const OUT_DIR_ENV: &str = "ADAPTMH_OUT";
pub const DEFAULT_OUT_DIR: &str = "adaptmh-out";

pub const REPORT_FILE: &str = "report.json";
pub const ENVELOPES_FILE: &str = "envelopes.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn trace_file(seed: u64) -> String {
    format!("trace_seed_{seed}.csv")
}

pub fn params_file(seed: u64) -> String {
    format!("params_seed_{seed}.csv")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub adapter: String,
    pub base_seed: u64,
    pub n_seeds: u64,
    pub n_steps: u64,
    /// File name to lowercase hex SHA-256.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub traces: Vec<ChainTrace>,
    pub report: DiagnosticsReport,
    pub manifest: Manifest,
}

/// `--out` beats the environment variable, which beats `run.out_dir`.
pub fn resolve_out_dir(cli: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    if let Some(p) = cli {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    cfg.run
        .out_dir
        .as_ref()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

pub fn seeds(cfg: &ExperimentConfig) -> impl Iterator<Item = u64> {
    let base = cfg.run.base_seed;
    (0..cfg.run.n_seeds).map(move |i| base + i)
}

/// Runs every seed concurrently. Output order follows the seeds.
pub fn run_chains(exp: &Experiment) -> Result<Vec<ChainTrace>> {
    let seeds: Vec<u64> = seeds(&exp.config).collect();
    seeds
        .par_iter()
        .map(|&seed| {
            run_chain(
                &exp.target,
                &exp.adapter,
                &exp.x0,
                exp.config.run.n_steps,
                seed,
                &exp.config_hash,
            )
        })
        .collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_hashed(
    dir: &Path,
    name: &str,
    bytes: &[u8],
    files: &mut BTreeMap<String, String>,
) -> Result<()> {
    fs::write(dir.join(name), bytes)?;
    files.insert(name.to_string(), sha256_hex(bytes));
    Ok(())
}

/// Runs the experiment and writes all artifacts into `out_dir`.
pub fn run_experiment(exp: &Experiment, out_dir: &Path) -> Result<RunArtifacts> {
    fs::create_dir_all(out_dir)?;
    let cfg = &exp.config;
    log::info!(
        "running {} seeds x {} steps ({}) into {}",
        cfg.run.n_seeds,
        cfg.run.n_steps,
        exp.adapter.name(),
        out_dir.display()
    );
    let traces = run_chains(exp)?;

    let written: Vec<Vec<(String, String)>> = traces
        .par_iter()
        .map(|tr| -> Result<Vec<(String, String)>> {
            let trace_bytes = tr.to_csv_bytes()?;
            let mut params = Vec::new();
            tr.write_params_csv(&mut params)?;
            let mut out = Vec::with_capacity(2);
            for (name, bytes) in [
                (trace_file(tr.seed), trace_bytes),
                (params_file(tr.seed), params),
            ] {
                fs::write(out_dir.join(&name), &bytes)?;
                out.push((name, sha256_hex(&bytes)));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut files: BTreeMap<String, String> = written.into_iter().flatten().collect();

    let report = build_report(exp, &traces)?;
    write_hashed(
        out_dir,
        REPORT_FILE,
        report.to_json()?.as_bytes(),
        &mut files,
    )?;
    write_hashed(
        out_dir,
        ENVELOPES_FILE,
        &report.envelopes_csv()?,
        &mut files,
    )?;
    write_hashed(out_dir, CONFIG_FILE, cfg.to_toml()?.as_bytes(), &mut files)?;

    let manifest = Manifest {
        config_hash: exp.config_hash.clone(),
        adapter: exp.adapter.name().to_string(),
        base_seed: cfg.run.base_seed,
        n_seeds: cfg.run.n_seeds,
        n_steps: cfg.run.n_steps,
        files,
    };
    fs::write(
        out_dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)?,
    )?;

    Ok(RunArtifacts {
        out_dir: out_dir.to_path_buf(),
        traces,
        report,
        manifest,
    })
}

/// Reads back the trace and parameter files of every configured seed.
pub fn load_traces(dir: &Path, exp: &Experiment) -> Result<Vec<ChainTrace>> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if manifest_path.exists() {
        let manifest: Manifest = serde_json::from_slice(&fs::read(&manifest_path)?)?;
        if manifest.config_hash != exp.config_hash {
            log::warn!(
                "{}: config hash {} differs from the given config ({})",
                manifest_path.display(),
                manifest.config_hash,
                exp.config_hash
            );
        }
    }
    let seeds: Vec<u64> = seeds(&exp.config).collect();
    seeds
        .par_iter()
        .map(|&seed| {
            let path = dir.join(trace_file(seed));
            let mut tr =
                ChainTrace::read_csv(fs::File::open(&path)?, &path, seed, &exp.config_hash)?;
            if tr.dim() != exp.target.dim() {
                return Err(Error::Trace {
                    path,
                    message: format!(
                        "dimension {} does not match the config ({})",
                        tr.dim(),
                        exp.target.dim()
                    ),
                });
            }
            let ppath = dir.join(params_file(seed));
            tr.merge_params_csv(fs::File::open(&ppath)?, &ppath)?;
            Ok(tr)
        })
        .collect()
}

/// Rebuilds the report of a finished run from its trace directory.
pub fn report_from_dir(dir: &Path, exp: &Experiment) -> Result<DiagnosticsReport> {
    build_report(exp, &load_traces(dir, exp)?)
}

fn envelope_statistics(adapter: &Adapter) -> &'static [Statistic] {
    match adapter {
        Adapter::Fixed(_) => &[Statistic::StateNormSq],
        Adapter::Am(_) => &[Statistic::StateNormSq, Statistic::CovMaxAbs],
        Adapter::MhCma(_) => &[
            Statistic::StateNormSq,
            Statistic::CovMaxAbs,
            Statistic::SigmaBalance,
            Statistic::PathMahalanobisSq,
        ],
    }
}

/// Computes every monitor the config asks for. Checks that do not fit the
/// run (too few seeds or steps, no analytic moments) are skipped and
/// listed in `notes`.
pub fn build_report(exp: &Experiment, traces: &[ChainTrace]) -> Result<DiagnosticsReport> {
    let cfg = &exp.config;
    let d = &cfg.diagnostics;
    let n = cfg.run.n_steps;
    let burn_in = cfg.run.burn_in;
    let mut flags = BTreeMap::new();
    let mut notes = Vec::new();

    let post_windows = partition(burn_in + 1, n + 1, d.envelope_window);
    let mut envelopes = Vec::new();
    if traces.len() >= MIN_ENVELOPE_TRACES {
        for &stat in envelope_statistics(&exp.adapter) {
            let env = boundedness_envelope(traces, stat, &post_windows, d.drift_limit)?;
            flags.insert(format!("bounded_{}", stat.name()), env.passed);
            envelopes.push(env);
        }
    } else {
        notes.push(format!(
            "envelopes skipped: {} traces, {MIN_ENVELOPE_TRACES} required",
            traces.len()
        ));
    }

    let acceptance_curve = partition(1, n + 1, d.envelope_window)
        .into_iter()
        .map(|w| {
            Ok(AcceptanceRow {
                window_start: w.start,
                window_end: w.end,
                rate: acceptance_rate_pooled(traces, w)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut decay = None;
    let mut pointwise_growth = None;
    match &exp.adapter {
        Adapter::MhCma(mc) => {
            let first = Window::new(d.decay_start, d.decay_start + d.decay_window);
            let last = Window::new((n + 1).saturating_sub(d.decay_window), n + 1);
            if first.end <= last.start {
                let table = adaptation_decay(
                    traces,
                    &[first, last],
                    GapScaling::Raw,
                    DecayCriterion::MinRatio(d.decay_ratio),
                )?;
                flags.insert("adaptation_decay".into(), table.passed);
                decay = Some(table);
            } else {
                notes.push(format!(
                    "adaptation decay skipped: {n} steps leave no disjoint late window"
                ));
            }

            let late = Window::new((n / 2).max(1), n + 1);
            let rate = acceptance_rate_pooled(traces, late)?;
            flags.insert(
                "acceptance_target".into(),
                (rate - mc.p_target).abs() <= d.acceptance_band,
            );
        }
        Adapter::Am(_) => {
            if d.am_growth_start < n {
                let windows = partition(d.am_growth_start, n + 1, d.decay_window);
                let table = adaptation_decay(
                    traces,
                    &windows,
                    GapScaling::TimeScaled,
                    DecayCriterion::BoundedGrowth(d.am_growth_limit),
                )?;
                let growth = pointwise_gap_growth(traces, d.am_growth_start, n, d.am_growth_limit)?;
                flags.insert("adaptation_decay".into(), table.passed);
                flags.insert("adaptation_decay_pointwise".into(), growth.passed);
                decay = Some(table);
                pointwise_growth = Some(growth);
            } else {
                notes.push(format!(
                    "adaptation decay skipped: {n} steps end before t = {}",
                    d.am_growth_start
                ));
            }
        }
        Adapter::Fixed(_) => {}
    }

    let moments = match moment_check(traces, &exp.target, burn_in) {
        Ok(m) => {
            flags.insert(
                "moments".into(),
                m.mean_err <= d.mean_tol && m.cov_err <= d.cov_tol,
            );
            Some(m)
        }
        Err(Error::Unavailable(what)) => {
            notes.push(format!("moment check skipped: {what} unavailable"));
            None
        }
        Err(Error::InsufficientSamples { required, got }) => {
            notes.push(format!(
                "moment check skipped: {got} samples, {required} required"
            ));
            None
        }
        Err(e) => return Err(e),
    };

    let mut tv = Vec::new();
    let range = (d.tv_range[0], d.tv_range[1]);
    for w in &post_windows {
        match tv_histogram_window(traces, &exp.target, d.tv_axis, d.tv_bins, range, *w) {
            Ok(v) => tv.push(TvRow {
                window_start: w.start,
                window_end: w.end,
                axis: d.tv_axis,
                tv: v,
            }),
            Err(Error::InsufficientSamples { required, got }) => notes.push(format!(
                "tv skipped on [{}, {}): {got} samples, {required} required",
                w.start, w.end
            )),
            Err(e) => return Err(e),
        }
    }

    Ok(DiagnosticsReport {
        adapter: exp.adapter.name().to_string(),
        n_traces: traces.len(),
        n_steps: n,
        burn_in,
        envelopes,
        acceptance_curve,
        decay,
        pointwise_growth,
        moments,
        tv,
        flags,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(adapter: &str, n_steps: u64, n_seeds: u64) -> ExperimentConfig {
        ExperimentConfig::parse(&format!(
            r#"
[run]
adapter = "{adapter}"
dim = 2
n_steps = {n_steps}
n_seeds = {n_seeds}
base_seed = 3
burn_in = {}

[target]
kind = "gaussian"
cov = [[1.0, 0.5], [0.5, 2.0]]

[diagnostics]
envelope_window = 500
decay_start = 100
decay_window = 100
am_growth_start = 50
"#,
            n_steps / 10
        ))
        .unwrap()
    }

    #[test]
    fn single_step_fixed_run() {
        let dir = tempfile::tempdir().unwrap();
        let exp = config("fixed", 1, 1).build().unwrap();
        let art = run_experiment(&exp, dir.path()).unwrap();
        assert_eq!(art.traces[0].len(), 1);
        let text = fs::read_to_string(dir.path().join(trace_file(3))).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(dir.path().join(MANIFEST_FILE).exists());
    }

    #[test]
    fn rerun_gives_identical_manifest_and_report_roundtrips() {
        let exp = config("mhcma", 2000, 3).build().unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ra = run_experiment(&exp, a.path()).unwrap();
        let rb = run_experiment(&exp, b.path()).unwrap();
        assert_eq!(ra.manifest, rb.manifest);
        assert_eq!(ra.manifest.files.len(), 3 * 2 + 3);

        let back = report_from_dir(a.path(), &exp).unwrap();
        assert_eq!(back, ra.report);
        assert!(back
            .notes
            .iter()
            .any(|n| n.starts_with("envelopes skipped")));
    }

    #[test]
    fn am_report_has_growth_checks() {
        let exp = config("am", 3000, 4).build().unwrap();
        let traces = run_chains(&exp).unwrap();
        let report = build_report(&exp, &traces).unwrap();
        assert!(report.flags.contains_key("adaptation_decay_pointwise"));
        assert!(report.pointwise_growth.is_some());
        assert!(report.moments.is_some());
    }

    #[test]
    fn cli_path_beats_config() {
        let mut cfg = config("fixed", 10, 1);
        cfg.run.out_dir = Some("from-config".into());
        assert_eq!(
            resolve_out_dir(Some(Path::new("cli")), &cfg),
            PathBuf::from("cli")
        );
    }
}
