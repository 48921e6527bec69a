//! Per-iteration chain records and their CSV form.
//!
//! The trace file has the fixed columns
//! `t, x_0..x_{dim-1}, alpha, accepted, sigma, log_det_C, adaptation_gap, tau`.
//! Two adapter quantities the trace file does not carry (`max |C_ij|` and
//! `|p_c|^2_C`) go to a companion parameter file with columns
//! `t, c_max_abs, path_mahal_sq`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: u64,
    pub alpha: f64,
    pub accepted: bool,
    /// Global proposal scale after the update (1 for AM and fixed kernels).
    pub sigma: f64,
    pub log_det_c: f64,
    pub adaptation_gap: f64,
    pub tau: u64,
    pub c_max_abs: f64,
    pub path_mahal_sq: f64,
}

/// Append-only record sequence of one chain. States are stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainTrace {
    pub seed: u64,
    pub config_hash: String,
    dim: usize,
    xs: Vec<f64>,
    records: Vec<TraceRecord>,
}

impl ChainTrace {
    pub fn new(dim: usize, seed: u64, config_hash: impl Into<String>) -> Self {
        Self {
            seed,
            config_hash: config_hash.into(),
            dim,
            xs: Vec::new(),
            records: Vec::new(),
        }
    }

    pub fn with_capacity(dim: usize, seed: u64, config_hash: impl Into<String>, n: usize) -> Self {
        let mut tr = Self::new(dim, seed, config_hash);
        tr.xs.reserve(n * dim);
        tr.records.reserve(n);
        tr
    }

    pub fn push(&mut self, x: &[f64], record: TraceRecord) -> Result<()> {
        Error::check_dim(self.dim, x.len())?;
        if let Some(last) = self.records.last() {
            if record.t != last.t + 1 {
                return Err(Error::InvalidState(format!(
                    "trace time must increase by 1: {} after {}",
                    record.t, last.t
                )));
            }
        }
        if !(record.adaptation_gap >= 0.0) {
            return Err(Error::InvalidState(format!(
                "negative or NaN adaptation gap at t = {}",
                record.t
            )));
        }
        self.xs.extend_from_slice(x);
        self.records.push(record);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], &TraceRecord)> {
        self.xs.chunks_exact(self.dim.max(1)).zip(&self.records)
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        h.extend((0..self.dim).map(|i| format!("x_{i}")));
        h.extend(
            [
                "alpha",
                "accepted",
                "sigma",
                "log_det_C",
                "adaptation_gap",
                "tau",
            ]
            .iter()
            .map(|s| s.to_string()),
        );
        h
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(self.header())?;
        let mut row = Vec::with_capacity(self.dim + 7);
        for (x, r) in self.iter() {
            row.clear();
            row.push(r.t.to_string());
            row.extend(x.iter().map(|v| fmt_f64(*v)));
            row.push(fmt_f64(r.alpha));
            row.push(u8::from(r.accepted).to_string());
            row.push(fmt_f64(r.sigma));
            row.push(fmt_f64(r.log_det_c));
            row.push(fmt_f64(r.adaptation_gap));
            row.push(r.tau.to_string());
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_params_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "c_max_abs", "path_mahal_sq"])?;
        for r in &self.records {
            out.write_record([
                r.t.to_string(),
                fmt_f64(r.c_max_abs),
                fmt_f64(r.path_mahal_sq),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(buf)
    }

    /// SHA-256 over the trace CSV and parameter CSV.
    pub fn digest(&self) -> Result<String> {
        let mut hasher = Sha256::new();
        hasher.update(self.to_csv_bytes()?);
        let mut params = Vec::new();
        self.write_params_csv(&mut params)?;
        hasher.update(&params);
        Ok(hex::encode(hasher.finalize()))
    }

    /// Parses a trace CSV; the state dimension is taken from the header.
    pub fn read_csv<R: Read>(r: R, path: &Path, seed: u64, config_hash: &str) -> Result<Self> {
        let bad = |message: String| Error::Trace {
            path: path.to_path_buf(),
            message,
        };
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        let dim = header.iter().filter(|h| h.starts_with("x_")).count();
        let mut trace = Self::new(dim, seed, config_hash);
        if header.len() != dim + 7 || trace.header().iter().ne(header.iter()) {
            return Err(bad(format!("unexpected header {header:?}")));
        }
        let mut x = vec![0.0; dim];
        for (line, row) in rdr.records().enumerate() {
            let row = row?;
            let field = |i: usize| -> Result<&str> {
                row.get(i)
                    .ok_or_else(|| bad(format!("row {line}: missing column {i}")))
            };
            let num = |i: usize| -> Result<f64> {
                field(i)?
                    .parse::<f64>()
                    .map_err(|e| bad(format!("row {line}, column {i}: {e}")))
            };
            let int = |i: usize| -> Result<u64> {
                field(i)?
                    .parse::<u64>()
                    .map_err(|e| bad(format!("row {line}, column {i}: {e}")))
            };
            for (k, xk) in x.iter_mut().enumerate() {
                *xk = num(1 + k)?;
            }
            let accepted = match field(dim + 2)? {
                "1" => true,
                "0" => false,
                other => return Err(bad(format!("row {line}: accepted = {other:?}"))),
            };
            let record = TraceRecord {
                t: int(0)?,
                alpha: num(dim + 1)?,
                accepted,
                sigma: num(dim + 3)?,
                log_det_c: num(dim + 4)?,
                adaptation_gap: num(dim + 5)?,
                tau: int(dim + 6)?,
                c_max_abs: f64::NAN,
                path_mahal_sq: f64::NAN,
            };
            trace
                .push(&x, record)
                .map_err(|e| bad(format!("row {line}: {e}")))?;
        }
        Ok(trace)
    }

    /// Fills `c_max_abs` and `path_mahal_sq` from a parameter CSV.
    pub fn merge_params_csv<R: Read>(&mut self, r: R, path: &Path) -> Result<()> {
        let bad = |message: String| Error::Trace {
            path: path.to_path_buf(),
            message,
        };
        let mut rdr = csv::Reader::from_reader(r);
        let mut n = 0;
        for (i, row) in rdr.records().enumerate() {
            let row = row?;
            let rec = self
                .records
                .get_mut(i)
                .ok_or_else(|| bad("more parameter rows than trace rows".into()))?;
            let parse = |k: usize| -> Result<f64> {
                row.get(k)
                    .ok_or_else(|| bad(format!("row {i}: missing column {k}")))?
                    .parse()
                    .map_err(|e| bad(format!("row {i}: {e}")))
            };
            if parse(0)? as u64 != rec.t {
                return Err(bad(format!("row {i}: time index mismatch")));
            }
            rec.c_max_abs = parse(1)?;
            rec.path_mahal_sq = parse(2)?;
            n += 1;
        }
        if n != self.records.len() {
            return Err(bad(format!(
                "{n} parameter rows for {} trace rows",
                self.records.len()
            )));
        }
        Ok(())
    }
}

/// 17 significant digits; parses back to the identical `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(t: u64) -> TraceRecord {
        TraceRecord {
            t,
            alpha: 0.5,
            accepted: t % 2 == 0,
            sigma: 1.25,
            log_det_c: -0.1,
            adaptation_gap: 0.01,
            tau: t / 2,
            c_max_abs: 1.0,
            path_mahal_sq: 0.3,
        }
    }

    #[test]
    fn push_enforces_invariants() {
        let mut tr = ChainTrace::new(2, 1, "h");
        tr.push(&[0.0, 1.0], record(1)).unwrap();
        assert!(tr.push(&[0.0, 1.0], record(3)).is_err());
        assert!(tr.push(&[0.0], record(2)).is_err());
        let mut r = record(2);
        r.adaptation_gap = -1.0;
        assert!(tr.push(&[0.0, 1.0], r).is_err());
        assert_eq!(tr.len(), 1);
    }

    #[test]
    fn header_layout() {
        let tr = ChainTrace::new(3, 0, "");
        assert_eq!(
            tr.header().join(","),
            "t,x_0,x_1,x_2,alpha,accepted,sigma,log_det_C,adaptation_gap,tau"
        );
    }

    #[test]
    fn rejects_foreign_header() {
        let text = "t,x_0,beta,accepted,sigma,log_det_C,adaptation_gap,tau\n";
        assert!(ChainTrace::read_csv(text.as_bytes(), Path::new("bad.csv"), 0, "").is_err());
    }

    proptest! {
        #[test]
        fn csv_roundtrip_is_exact(
            xs in proptest::collection::vec((any::<f64>().prop_filter("finite", |v| v.is_finite()), -1e300f64..1e300), 1..40),
            alpha in 0.0f64..=1.0,
        ) {
            let mut tr = ChainTrace::new(2, 9, "h");
            for (i, (a, b)) in xs.iter().enumerate() {
                let mut r = record(i as u64 + 1);
                r.alpha = alpha;
                r.sigma = b.abs() + 1e-300;
                tr.push(&[*a, *b], r).unwrap();
            }
            let bytes = tr.to_csv_bytes().unwrap();
            let mut params = Vec::new();
            tr.write_params_csv(&mut params).unwrap();
            let mut back = ChainTrace::read_csv(bytes.as_slice(), Path::new("t.csv"), 9, "h").unwrap();
            back.merge_params_csv(params.as_slice(), Path::new("p.csv")).unwrap();
            prop_assert_eq!(back, tr);
        }
    }
}
