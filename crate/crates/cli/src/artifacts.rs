//! On-disk artifacts. Every CSV has a header row and ends with a newline.

use std::fs;
use std::path::Path;
use std::process::Command;

use anyhow::{Context, Result};
use nlmcmc::{State, TraceRow};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;

/// Column order of trace.csv.
pub const TRACE_HEADER: [&str; 7] = ["step", "seed", "mmd2", "tv_beta", "jump_rate", "mean_log_G", "diverged_count"];

/// One trace.csv row; `None` fields are written as empty cells.
#[derive(Clone, Debug, Default)]
pub struct TraceLine {
    pub step: usize,
    pub seed: u64,
    pub mmd2: Option<f64>,
    pub tv_beta: Option<f64>,
    pub jump_rate: Option<f64>,
    pub mean_log_g: Option<f64>,
    pub diverged_count: usize,
}

impl TraceLine {
    pub fn from_row(seed: u64, r: &TraceRow) -> Self {
        Self {
            step: r.step,
            seed,
            mmd2: r.mmd2,
            tv_beta: r.tv,
            jump_rate: Some(r.jump_rate),
            mean_log_g: Some(r.mean_log_g),
            diverged_count: r.diverged_count,
        }
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_trace(path: &Path, lines: &[TraceLine]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(TRACE_HEADER)?;
    for l in lines {
        w.write_record([
            l.step.to_string(),
            l.seed.to_string(),
            cell(l.mmd2),
            cell(l.tv_beta),
            cell(l.jump_rate),
            cell(l.mean_log_g),
            l.diverged_count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Final ensembles as `seed,ensemble,index,x0,...`.
pub fn write_samples(path: &Path, dim: usize, sets: &[(u64, &str, &[State])]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let mut header = vec!["seed".to_string(), "ensemble".into(), "index".into()];
    header.extend((0..dim).map(|d| format!("x{d}")));
    w.write_record(&header)?;
    for (seed, name, states) in sets {
        for (i, s) in states.iter().enumerate() {
            let mut rec = vec![seed.to_string(), name.to_string(), i.to_string()];
            rec.extend(s.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Generic CSV from a header and rows of already formatted cells.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, v: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn git_revision() -> String {
    Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

/// manifest.json: resolved config, seeds, revision and run status.
pub fn write_manifest(dir: &Path, cfg: &RunConfig, label: &str, status: &str, extra: Value) -> Result<()> {
    let m = json!({
        "tool": "nlmcmc",
        "version": env!("CARGO_PKG_VERSION"),
        "git_revision": git_revision(),
        "experiment": cfg.experiment,
        "label": label,
        "seeds": cfg.seeds,
        "status": status,
        "config": cfg,
        "details": extra,
    });
    write_json(&dir.join("manifest.json"), &m)
}
