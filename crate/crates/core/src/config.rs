//! Experiment configuration: a sectioned key-value (TOML) file.
//!
//! ```toml
//! [run]
//! adapter = "mhcma"       # am | mhcma | fixed
//! dim = 2
//! n_steps = 100000
//! n_seeds = 32
//! base_seed = 1
//! burn_in = 10000
//! x0 = [0.0, 0.0]         # optional, defaults to the origin
//!
//! [target]
//! kind = "gaussian"       # gaussian | banana | mixture
//! mean = [0.0, 0.0]
//! cov = [[1.0, 0.5], [0.5, 2.0]]
//!
//! [mhcma]
//! gamma = 1.01            # every key optional
//!
//! [diagnostics]
//! envelope_window = 10000
//! ```

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::am::AmConfig;
use crate::chain::Adapter;
use crate::error::{Error, Result};
use crate::mh::ProposalParams;
use crate::mhcma::MhCmaConfig;
use crate::spd::SpdMatrix;
use crate::targets::Target;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterKind {
    Am,
    Mhcma,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub adapter: AdapterKind,
    pub dim: usize,
    pub n_steps: u64,
    #[serde(default = "one")]
    pub n_seeds: u64,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub burn_in: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
}

fn one() -> u64 {
    1
}

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    Gaussian {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mean: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cov: Option<Rows>,
    },
    Banana {
        b: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        base_cov: Option<Rows>,
    },
    Mixture {
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        covs: Vec<Rows>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t0: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c0: Option<Rows>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MhCmaSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_target: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1_0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c0: Option<Rows>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Rows>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsSection {
    /// Window length of the boundedness envelopes and acceptance curve.
    pub envelope_window: u64,
    /// Allowed `q99(last) / q99(first)` for every envelope.
    pub drift_limit: f64,
    /// Start and length of the adaptation-gap windows.
    pub decay_start: u64,
    pub decay_window: u64,
    /// MH-CMA: required `q95(first) / q95(last)` of the gap.
    pub decay_ratio: f64,
    /// AM: first time of the `t * gap` growth check, and the allowed
    /// ratio of its running maximum to the value there.
    pub am_growth_start: u64,
    pub am_growth_limit: f64,
    pub mean_tol: f64,
    pub cov_tol: f64,
    /// MH-CMA: late-window acceptance must be within `p_target +- band`.
    pub acceptance_band: f64,
    pub tv_axis: usize,
    pub tv_bins: usize,
    pub tv_range: [f64; 2],
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self {
            envelope_window: 10_000,
            drift_limit: 2.0,
            decay_start: 1_000,
            decay_window: 1_000,
            decay_ratio: 10.0,
            am_growth_start: 100,
            am_growth_limit: 10.0,
            mean_tol: 0.05,
            cov_tol: 0.10,
            acceptance_band: 0.05,
            tv_axis: 0,
            tv_bins: 50,
            tv_range: [-5.0, 5.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub target: TargetSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub am: Option<AmSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mhcma: Option<MhCmaSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed: Option<FixedSection>,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
}

/// A validated configuration, ready to run.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub target: Target,
    pub adapter: Adapter,
    pub x0: DVector<f64>,
    pub config_hash: String,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| format!("bytes {}..{}", s.start, s.end))
                .unwrap_or_else(|| "<document>".into());
            Error::config(field, e.message().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<document>", e.to_string()))
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    pub fn build(&self) -> Result<Experiment> {
        let run = &self.run;
        let dim = run.dim;
        if dim == 0 {
            return Err(Error::config("run.dim", "must be >= 1"));
        }
        if run.n_steps < 1 {
            return Err(Error::config("run.n_steps", "must be >= 1"));
        }
        if run.n_seeds < 1 {
            return Err(Error::config("run.n_seeds", "must be >= 1"));
        }
        if run.base_seed.checked_add(run.n_seeds).is_none() {
            return Err(Error::config("run.base_seed", "seed range overflows u64"));
        }
        if run.burn_in >= run.n_steps {
            return Err(Error::config(
                "run.burn_in",
                "must be smaller than run.n_steps",
            ));
        }
        self.validate_diagnostics()?;

        let target = self.build_target(dim)?;
        let x0 = match &run.x0 {
            Some(v) => {
                expect_len("run.x0", v.len(), dim)?;
                DVector::from_column_slice(v)
            }
            None => DVector::zeros(dim),
        };
        let log_p0 = target.log_density(&x0)?;
        if !log_p0.is_finite() {
            return Err(Error::config(
                "run.x0",
                "target density at x0 must be positive",
            ));
        }

        let adapter = match run.adapter {
            AdapterKind::Am => {
                let sec = self.am.clone().unwrap_or_default();
                let mut cfg = AmConfig::defaults(dim);
                if let Some(v) = sec.t0 {
                    cfg.t0 = v;
                }
                if let Some(v) = sec.s_d {
                    cfg.s_d = v;
                }
                if let Some(v) = sec.eps {
                    cfg.eps = v;
                }
                if let Some(rows) = &sec.c0 {
                    cfg.c0 = spd_field("am.c0", rows, dim)?;
                }
                cfg.validate()?;
                Adapter::Am(cfg)
            }
            AdapterKind::Mhcma => {
                let sec = self.mhcma.clone().unwrap_or_default();
                let mut cfg = MhCmaConfig::defaults(dim);
                let set = |slot: &mut f64, v: Option<f64>| {
                    if let Some(v) = v {
                        *slot = v;
                    }
                };
                set(&mut cfg.p_target, sec.p_target);
                set(&mut cfg.c_c, sec.c_c);
                set(&mut cfg.c1_0, sec.c1_0);
                set(&mut cfg.beta0, sec.beta0);
                set(&mut cfg.gamma, sec.gamma);
                set(&mut cfg.sigma0, sec.sigma0);
                if let Some(rows) = &sec.c0 {
                    cfg.c0 = spd_field("mhcma.c0", rows, dim)?;
                }
                cfg.validate()?;
                Adapter::MhCma(cfg)
            }
            AdapterKind::Fixed => {
                let sec = self.fixed.clone().unwrap_or_default();
                let shape = match &sec.c {
                    Some(rows) => spd_field("fixed.c", rows, dim)?,
                    None => SpdMatrix::identity(dim),
                };
                let sigma = sec.sigma.unwrap_or(1.0);
                Adapter::Fixed(
                    ProposalParams::new(sigma, shape)
                        .map_err(|_| Error::config("fixed.sigma", "must be positive"))?,
                )
            }
        };

        Ok(Experiment {
            config: self.clone(),
            target,
            adapter,
            x0,
            config_hash: self.hash()?,
        })
    }

    fn validate_diagnostics(&self) -> Result<()> {
        let d = &self.diagnostics;
        if d.envelope_window == 0 {
            return Err(Error::config("diagnostics.envelope_window", "must be >= 1"));
        }
        if d.decay_window == 0 {
            return Err(Error::config("diagnostics.decay_window", "must be >= 1"));
        }
        if d.am_growth_start == 0 {
            return Err(Error::config("diagnostics.am_growth_start", "must be >= 1"));
        }
        if d.tv_axis >= self.run.dim {
            return Err(Error::config("diagnostics.tv_axis", "must be < run.dim"));
        }
        if d.tv_bins < crate::diagnostics::MIN_TV_BINS {
            return Err(Error::config("diagnostics.tv_bins", "must be >= 10"));
        }
        if !(d.tv_range[0] < d.tv_range[1]) {
            return Err(Error::config(
                "diagnostics.tv_range",
                "must be an increasing pair",
            ));
        }
        for (name, v) in [
            ("diagnostics.drift_limit", d.drift_limit),
            ("diagnostics.decay_ratio", d.decay_ratio),
            ("diagnostics.am_growth_limit", d.am_growth_limit),
            ("diagnostics.mean_tol", d.mean_tol),
            ("diagnostics.cov_tol", d.cov_tol),
            ("diagnostics.acceptance_band", d.acceptance_band),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(name, "must be positive"));
            }
        }
        Ok(())
    }

    fn build_target(&self, dim: usize) -> Result<Target> {
        match &self.target {
            TargetSpec::Gaussian { mean, cov } => {
                let mean = match mean {
                    Some(m) => {
                        expect_len("target.mean", m.len(), dim)?;
                        DVector::from_column_slice(m)
                    }
                    None => DVector::zeros(dim),
                };
                let cov = match cov {
                    Some(rows) => spd_field("target.cov", rows, dim)?,
                    None => SpdMatrix::identity(dim),
                };
                Target::gaussian(mean, cov)
            }
            TargetSpec::Banana { b, base_cov } => {
                let cov = match base_cov {
                    Some(rows) => spd_field("target.base_cov", rows, dim)?,
                    None => SpdMatrix::identity(dim),
                };
                Target::banana(*b, cov).map_err(|e| Error::config("target", e.to_string()))
            }
            TargetSpec::Mixture {
                weights,
                means,
                covs,
            } => {
                let means = means
                    .iter()
                    .enumerate()
                    .map(|(i, m)| {
                        expect_len(&format!("target.means[{i}]"), m.len(), dim)?;
                        Ok(DVector::from_column_slice(m))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let covs = covs
                    .iter()
                    .enumerate()
                    .map(|(i, c)| spd_field(&format!("target.covs[{i}]"), c, dim))
                    .collect::<Result<Vec<_>>>()?;
                Target::mixture(weights.clone(), means, covs)
                    .map_err(|e| Error::config("target.weights", e.to_string()))
            }
        }
    }
}

fn expect_len(field: &str, got: usize, dim: usize) -> Result<()> {
    if got == dim {
        Ok(())
    } else {
        Err(Error::config(
            field,
            format!("expected length {dim}, got {got}"),
        ))
    }
}

fn spd_field(field: &str, rows: &[Vec<f64>], dim: usize) -> Result<SpdMatrix> {
    expect_len(field, rows.len(), dim)?;
    SpdMatrix::from_rows(rows).map_err(|e| Error::config(field, e.to_string()))
}
