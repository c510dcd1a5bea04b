//! One-parameter sweeps over the MAS weights or the unknown-noise scale.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::{run_cell, with_pool, write_atomic, Setup};
use crate::budget::NoisePolicy;
use crate::error::{Error, Result};
use crate::posterior::{mas_posterior_mean, MasWeights};
use crate::sampler::Method;
use crate::spectral::SpectralOperator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Eta1,
    Eta2,
    K,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::Eta1 => "eta1",
            SweepParam::Eta2 => "eta2",
            SweepParam::K => "k",
        }
    }

    /// Sets the parameter on a MAS method; other methods are left alone and
    /// reported as not applicable.
    pub fn apply(self, method: &mut Method, value: f64) -> bool {
        let Method::Mas(cfg) = method else {
            return false;
        };
        match self {
            SweepParam::Eta1 => cfg.eta1 = value,
            SweepParam::Eta2 => {
                cfg.eta2 = value;
                if value < 0.0 {
                    cfg.allow_negative_eta2 = true;
                }
            }
            SweepParam::K => match &mut cfg.noise {
                NoisePolicy::Unknown { k, .. } => *k = value,
                _ => return false,
            },
        }
        true
    }
}

impl FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "eta1" => Ok(SweepParam::Eta1),
            "eta2" => Ok(SweepParam::Eta2),
            "k" => Ok(SweepParam::K),
            other => Err(format!("unknown sweep parameter {other:?} (expected eta1, eta2 or k)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub method: String,
    pub seed: u64,
    /// `None` on success, otherwise the solver error.
    pub failure: Option<String>,
    pub psnr_db: Option<f64>,
    pub ssim: Option<f64>,
    pub consistency_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToyRow {
    pub eta1: f64,
    pub eta2: f64,
    pub x: Option<[f64; 2]>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub toy: Vec<ToyRow>,
}

/// A `1 × 2` problem whose estimates are easy to plot: the prior mean, the
/// measurement line `x₁ + 0.5·x₂ = 1.5`, and its closest point to `m`.
pub struct ToyInstance {
    pub op: SpectralOperator,
    pub m: [f64; 2],
    pub y: [f64; 1],
}

pub fn toy_instance() -> ToyInstance {
    let h = DMatrix::from_row_slice(1, 2, &[1.0, 0.5]);
    ToyInstance {
        op: SpectralOperator::dense(&h).expect("well-formed 1x2 operator"),
        m: [0.2, 0.8],
        y: [1.5],
    }
}

impl ToyInstance {
    pub fn estimate(&self, eta1: f64, eta2: f64) -> Result<[f64; 2]> {
        let w = if eta2 < 0.0 {
            MasWeights::with_negative_eta2(eta1, eta2)?
        } else {
            MasWeights::new(eta1, eta2)?
        };
        let x = mas_posterior_mean(&self.op, &self.m, &self.y, &w)?;
        Ok([x[0], x[1]])
    }
}

fn toy_row(toy: &ToyInstance, eta1: f64, eta2: f64) -> ToyRow {
    match toy.estimate(eta1, eta2) {
        Ok(x) => ToyRow {
            eta1,
            eta2,
            x: Some(x),
            failure: None,
        },
        Err(e) => ToyRow {
            eta1,
            eta2,
            x: None,
            failure: Some(e.to_string()),
        },
    }
}

/// Runs every MAS method of `cfg` once per grid value and seed. Unstable
/// settings become failed rows instead of aborting the sweep.
pub fn sweep(cfg: &ExperimentConfig, param: SweepParam, grid: &[f64]) -> Result<SweepOutcome> {
    cfg.validate()?;
    if grid.is_empty() {
        return Err(Error::Config {
            path: "grid".into(),
            message: "sweep grid is empty".into(),
        });
    }
    let targets: Vec<usize> = cfg
        .methods
        .iter()
        .enumerate()
        .filter(|(_, m)| param.apply(&mut m.method.clone(), 0.0))
        .map(|(i, _)| i)
        .collect();
    if targets.is_empty() {
        return Err(Error::Config {
            path: "methods".into(),
            message: format!("no method accepts sweep parameter {}", param.as_str()),
        });
    }
    let setup = Setup::build(cfg)?;
    let mut jobs = Vec::new();
    for &v in grid {
        for &i in &targets {
            for &s in &cfg.seeds {
                jobs.push((v, i, s));
            }
        }
    }
    let rows = with_pool(|| {
        jobs.par_iter()
            .map(|&(value, i, seed)| {
                let mut local = cfg.clone();
                param.apply(&mut local.methods[i].method, value);
                let label = local.methods[i].label();
                let result = local.methods[i]
                    .method
                    .validate()
                    .and_then(|_| run_cell(&local, &setup, seed, i));
                match result {
                    Ok(cell) => SweepRow {
                        value,
                        method: label,
                        seed,
                        failure: None,
                        psnr_db: cell.metrics.psnr_db,
                        ssim: cell.metrics.ssim,
                        consistency_residual: Some(cell.metrics.consistency_residual),
                    },
                    Err(e) => SweepRow {
                        value,
                        method: label,
                        seed,
                        failure: Some(e.to_string()),
                        psnr_db: None,
                        ssim: None,
                        consistency_residual: None,
                    },
                }
            })
            .collect::<Vec<_>>()
    })?;

    let toy = toy_instance();
    let base = cfg.methods[targets[0]].method;
    let (e1, e2) = match base {
        Method::Mas(c) => (c.eta1, c.eta2),
        _ => unreachable!("targets are MAS methods"),
    };
    let toy_rows = grid
        .iter()
        .map(|&v| match param {
            SweepParam::Eta1 => toy_row(&toy, v, e2),
            // On the toy problem `k` plays the role of η₂ with a/c = 1.
            SweepParam::Eta2 | SweepParam::K => toy_row(&toy, e1, v),
        })
        .collect();
    Ok(SweepOutcome { rows, toy: toy_rows })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn rows_csv(param: SweepParam, rows: &[SweepRow]) -> String {
    let mut out = format!("{},method,seed,status,psnr_db,ssim,consistency_residual\n", param.as_str());
    for r in rows {
        let status = r.failure.as_deref().map_or("ok".to_string(), |e| format!("failed: {e}"));
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.value,
            csv_field(&r.method),
            r.seed,
            csv_field(&status),
            opt(r.psnr_db),
            opt(r.ssim),
            opt(r.consistency_residual)
        );
    }
    out
}

pub fn toy_csv(rows: &[ToyRow]) -> String {
    let toy = toy_instance();
    let mut out = String::from("eta1,eta2,x1,x2,m1,m2,status\n");
    for r in rows {
        let (x1, x2) = r.x.map_or((None, None), |x| (Some(x[0]), Some(x[1])));
        let status = r.failure.as_deref().map_or("ok".to_string(), |e| format!("failed: {e}"));
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.eta1,
            r.eta2,
            opt(x1),
            opt(x2),
            toy.m[0],
            toy.m[1],
            csv_field(&status)
        );
    }
    out
}

/// Writes `sweep_<param>.csv` and `toy_<param>.csv` under `out_dir`.
pub fn write_sweep(out_dir: &Path, param: SweepParam, outcome: &SweepOutcome) -> Result<()> {
    write_atomic(
        &out_dir.join(format!("sweep_{}.csv", param.as_str())),
        rows_csv(param, &outcome.rows).as_bytes(),
    )?;
    write_atomic(
        &out_dir.join(format!("toy_{}.csv", param.as_str())),
        toy_csv(&outcome.toy).as_bytes(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_limits() {
        let toy = toy_instance();
        let far = toy.estimate(1e6, 0.0).unwrap();
        assert!((far[0] - toy.m[0]).abs() < 1e-3 && (far[1] - toy.m[1]).abs() < 1e-3);
        // η = 0: the orthogonal projection of m onto the measurement line.
        let p = toy.estimate(0.0, 0.0).unwrap();
        assert!((p[0] + 0.5 * p[1] - 1.5).abs() < 1e-12);
        let r = [p[0] - toy.m[0], p[1] - toy.m[1]];
        assert!((r[0] * 0.5 - r[1]).abs() < 1e-12);
        assert!(toy.estimate(-1.5, 0.0).is_err());
    }

    #[test]
    fn parses_params() {
        assert_eq!("k".parse::<SweepParam>().unwrap(), SweepParam::K);
        assert!("eta3".parse::<SweepParam>().is_err());
    }

    #[test]
    fn csv_quotes_commas() {
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("ok"), "ok");
    }
}
