//! File formats: return samples, calibration results, path sets and training
//! reports. CSV floats are written in shortest round-trip form.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibration::{CalibrationResult, DensityRow, TracePoint};
use crate::error::{Error, Result};
use crate::kou::{KouParams, ReturnSample};
use crate::simulation::PathSet;
use crate::stats::DayStats;

pub const RETURNS_HEADER: &str = "log_return";

fn csv_err(e: csv::Error) -> Error {
    if let csv::ErrorKind::Io(io) = e.kind() {
        return Error::Io(io.to_string());
    }
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        line,
        msg: e.to_string(),
    }
}

fn parse_f64(field: &str, line: usize) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|e| Error::Parse {
        line,
        msg: format!("`{field}` is not a number: {e}"),
    })
}

/// Reads a single-column CSV with header `log_return`.
pub fn read_returns_csv(path: &Path, dt: f64) -> Result<ReturnSample> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let mut records = rdr.records();
    let header = match records.next() {
        None => {
            return Err(Error::Parse {
                line: 1,
                msg: "empty file, expected header `log_return`".into(),
            })
        }
        Some(r) => r.map_err(csv_err)?,
    };
    if header.len() != 1 || &header[0] != RETURNS_HEADER {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header `{RETURNS_HEADER}`"),
        });
    }
    let mut values = Vec::new();
    for rec in records {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 1 {
            return Err(Error::Parse {
                line,
                msg: format!("expected one column, found {}", rec.len()),
            });
        }
        let v = parse_f64(&rec[0], line)?;
        if !v.is_finite() {
            return Err(Error::Parse {
                line,
                msg: "non-finite return".into(),
            });
        }
        values.push(v);
    }
    if values.is_empty() {
        return Err(Error::Parse {
            line: 2,
            msg: "no data rows".into(),
        });
    }
    ReturnSample::new(values, dt)
}

pub fn write_returns_csv(path: &Path, values: &[f64]) -> Result<()> {
    let mut out = String::with_capacity(values.len() * 24 + 16);
    out.push_str(RETURNS_HEADER);
    out.push('\n');
    for v in values {
        out.push_str(&format!("{v}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// JSON form of a calibration result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationJson {
    pub mu: f64,
    pub sigma: f64,
    pub lambda: f64,
    pub p: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub alpha: f64,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl From<&CalibrationResult> for CalibrationJson {
    fn from(r: &CalibrationResult) -> Self {
        let p = r.params;
        Self {
            mu: p.mu,
            sigma: p.sigma,
            lambda: p.lambda,
            p: p.p,
            eta1: p.eta1,
            eta2: p.eta2,
            alpha: p.alpha,
            log_likelihood: r.log_likelihood,
            iterations: r.iterations,
            converged: r.converged,
        }
    }
}

pub fn calibration_json(result: &CalibrationResult) -> String {
    serde_json::to_string_pretty(&CalibrationJson::from(result)).expect("serialisable")
}

/// Reads parameters from a JSON object with at least the seven parameter
/// fields (a `params.json` written by calibration qualifies).
pub fn read_params_json(path: &Path) -> Result<KouParams> {
    let text = std::fs::read_to_string(path)?;
    let params: KouParams = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        msg: e.to_string(),
    })?;
    params.validate()?;
    Ok(params)
}

fn write_lines(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    let mut f = std::io::BufWriter::new(File::create(path)?);
    writeln!(f, "{header}")?;
    for r in rows {
        writeln!(f, "{r}")?;
    }
    f.flush()?;
    Ok(())
}

pub fn write_trace_csv(path: &Path, trace: &[TracePoint]) -> Result<()> {
    write_lines(
        path,
        "iteration,log_likelihood,best_log_likelihood",
        trace
            .iter()
            .map(|t| format!("{},{},{}", t.iteration, t.log_likelihood, t.best_log_likelihood)),
    )
}

pub fn write_density_csv(path: &Path, rows: &[DensityRow]) -> Result<()> {
    write_lines(
        path,
        "x,model_density,kde_density",
        rows.iter()
            .map(|r| format!("{},{},{}", r.x, r.model_density, r.kde_density)),
    )
}

/// Metadata stored next to a path CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSidecar {
    pub params: KouParams,
    pub seed: u64,
    pub dt: f64,
    pub s0: f64,
    pub n_days: usize,
    pub n_paths: usize,
}

impl PathSidecar {
    pub fn of(paths: &PathSet) -> Self {
        Self {
            params: paths.params,
            seed: paths.seed,
            dt: paths.dt,
            s0: paths.s0(),
            n_days: paths.n_days(),
            n_paths: paths.n_paths(),
        }
    }
}

/// Conventional sidecar location: `paths.csv` -> `paths.json`.
pub fn sidecar_path(csv_path: &Path) -> std::path::PathBuf {
    csv_path.with_extension("json")
}

/// Writes `day,path_0,...,path_{n-1}` with one row per day.
pub fn write_paths_csv(path: &Path, paths: &PathSet) -> Result<()> {
    let n = paths.n_paths();
    let header = std::iter::once("day".to_string())
        .chain((0..n).map(|i| format!("path_{i}")))
        .collect::<Vec<_>>()
        .join(",");
    write_lines(
        path,
        &header,
        (0..=paths.n_days()).map(|d| {
            let mut line = d.to_string();
            for row in &paths.prices {
                line.push(',');
                line.push_str(&row[d].to_string());
            }
            line
        }),
    )
}

pub fn write_paths_sidecar(path: &Path, paths: &PathSet) -> Result<()> {
    let text = serde_json::to_string_pretty(&PathSidecar::of(paths)).expect("serialisable");
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_sidecar(path: &Path) -> Result<PathSidecar> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        msg: e.to_string(),
    })
}

/// Reads a path CSV. Metadata comes from `sidecar` when given; otherwise the
/// paper parameters, seed 0 and `fallback_dt` are recorded.
pub fn read_paths_csv(path: &Path, sidecar: Option<&PathSidecar>, fallback_dt: f64) -> Result<PathSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let mut records = rdr.records();
    let header = match records.next() {
        None => {
            return Err(Error::Parse {
                line: 1,
                msg: "empty path file".into(),
            })
        }
        Some(r) => r.map_err(csv_err)?,
    };
    if header.is_empty() || &header[0] != "day" {
        return Err(Error::Parse {
            line: 1,
            msg: "expected header starting with `day`".into(),
        });
    }
    for (i, name) in header.iter().skip(1).enumerate() {
        if name != format!("path_{i}") {
            return Err(Error::Parse {
                line: 1,
                msg: format!("column {} should be `path_{i}`, found `{name}`", i + 1),
            });
        }
    }
    let n_paths = header.len() - 1;
    if n_paths == 0 {
        return Err(Error::Parse {
            line: 1,
            msg: "no path columns".into(),
        });
    }
    let mut prices = vec![Vec::new(); n_paths];
    for (expected_day, rec) in records.enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != n_paths + 1 {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", n_paths + 1, rec.len()),
            });
        }
        let day = parse_f64(&rec[0], line)?;
        if day != expected_day as f64 {
            return Err(Error::Parse {
                line,
                msg: format!("expected day {expected_day}"),
            });
        }
        for (i, field) in rec.iter().skip(1).enumerate() {
            prices[i].push(parse_f64(field, line)?);
        }
    }
    if prices[0].len() < 2 {
        return Err(Error::Parse {
            line: 2,
            msg: "need at least two days of prices".into(),
        });
    }
    let (params, seed, dt) = match sidecar {
        Some(s) => (s.params, s.seed, s.dt),
        None => (KouParams::paper(), 0, fallback_dt),
    };
    let set = PathSet {
        prices,
        seed,
        params,
        dt,
    };
    set.validate()?;
    if let Some(s) = sidecar {
        if s.n_paths != set.n_paths() || s.n_days != set.n_days() {
            return Err(Error::Config("sidecar shape does not match the path file".into()));
        }
    }
    Ok(set)
}

pub fn write_utility_trace_csv(path: &Path, trace: &[f64]) -> Result<()> {
    write_lines(
        path,
        "epoch,expected_utility",
        trace.iter().enumerate().map(|(e, u)| format!("{e},{u}")),
    )
}

pub fn write_terminal_wealth_csv(path: &Path, wealth: &[f64]) -> Result<()> {
    write_lines(
        path,
        "path,terminal_wealth",
        wealth.iter().enumerate().map(|(i, w)| format!("{i},{w}")),
    )
}

pub fn write_day_stats_csv(path: &Path, stats: &[DayStats]) -> Result<()> {
    write_lines(
        path,
        "day,mean,p10,p90",
        stats
            .iter()
            .map(|s| format!("{},{},{},{}", s.day, s.mean, s.p10, s.p90)),
    )
}
