//! Grid sweeps: one run directory per (point, seed) and a summary table.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Result};
use serde::Serialize;

use crate::config::RunConfig;
use crate::metrics::MetricsTable;
use crate::train::train;

/// `key=v1,v2,...`; commas inside brackets belong to the value.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub key: String,
    pub values: Vec<String>,
}

impl FromStr for Axis {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let Some((key, rest)) = s.split_once('=') else {
            bail!("axis `{s}` is not key=v1,v2,...");
        };
        let mut values = Vec::new();
        let mut depth = 0i32;
        let mut cur = String::new();
        for ch in rest.chars() {
            match ch {
                '[' | '{' => depth += 1,
                ']' | '}' => depth -= 1,
                _ => {}
            }
            if ch == ',' && depth == 0 {
                values.push(std::mem::take(&mut cur).trim().to_string());
            } else {
                cur.push(ch);
            }
        }
        values.push(cur.trim().to_string());
        if key.trim().is_empty() || values.iter().any(String::is_empty) {
            bail!("axis `{s}` has an empty key or value");
        }
        Ok(Axis {
            key: key.trim().to_string(),
            values,
        })
    }
}

/// Every combination of axis values, as override lists.
pub fn grid(axes: &[Axis]) -> Vec<Vec<String>> {
    let mut points = vec![Vec::new()];
    for axis in axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(format!("{}={v}", axis.key));
                    q
                })
            })
            .collect();
    }
    points
}

#[derive(Debug, Clone, Serialize)]
pub struct PointResult {
    pub point: usize,
    pub overrides: Vec<String>,
    pub seed: u64,
    pub run_dir: PathBuf,
    /// `ok`, `stopped`, `diverged: ...` or `error: ...`.
    pub status: String,
    pub env_steps: Option<u64>,
    pub grad_steps: Option<u64>,
    pub final_tracking: Option<f64>,
    pub best_tracking: Option<f64>,
    /// First logged `env_steps` with `tracking_mean` at or above `train.target_tracking`.
    pub steps_to_target: Option<u64>,
    pub last_eval_completion: Option<f64>,
}

/// Runs every grid point for `seeds` consecutive seeds starting at the base
/// seed. Each point's runs share those seeds. A failing point is recorded
/// and the sweep continues.
pub fn sweep(base: &RunConfig, axes: &[Axis], seeds: usize, out_dir: &Path) -> Result<Vec<PointResult>> {
    if seeds == 0 {
        bail!("a sweep needs at least one seed");
    }
    std::fs::create_dir_all(out_dir)?;
    let mut results = Vec::new();
    for (i, overrides) in grid(axes).into_iter().enumerate() {
        for k in 0..seeds as u64 {
            let seed = base.train.seed + k;
            let run_dir = out_dir.join(format!("point_{i:03}_seed_{seed}"));
            let mut all = overrides.clone();
            all.push(format!("train.seed={seed}"));
            let mut r = PointResult {
                point: i,
                overrides: overrides.clone(),
                seed,
                run_dir: run_dir.clone(),
                status: String::new(),
                env_steps: None,
                grad_steps: None,
                final_tracking: None,
                best_tracking: None,
                steps_to_target: None,
                last_eval_completion: None,
            };
            let outcome = base.with_overrides(&all).and_then(|cfg| {
                let target = cfg.train.target_tracking;
                let s = train(cfg, &run_dir)?;
                Ok((s, target))
            });
            match outcome {
                Ok((s, target)) => {
                    r.status = match (&s.diverged, s.stopped_early) {
                        (Some(msg), _) => format!("diverged: {msg}"),
                        (None, true) => "stopped".into(),
                        (None, false) => "ok".into(),
                    };
                    r.env_steps = Some(s.env_steps);
                    r.grad_steps = Some(s.grad_steps);
                    r.final_tracking = s.final_tracking;
                    r.best_tracking = s.best_tracking;
                    let table = MetricsTable::read(&run_dir.join("metrics.csv"))?;
                    if let Some(x) = target {
                        r.steps_to_target = table.first_reaching("tracking_mean", x)?;
                    }
                    r.last_eval_completion = table.last("eval_completion")?;
                }
                Err(e) => r.status = format!("error: {e:#}"),
            }
            results.push(r);
        }
    }
    write_summary(&out_dir.join("summary.csv"), &results)?;
    Ok(results)
}

fn write_summary(path: &Path, results: &[PointResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "point",
        "overrides",
        "seed",
        "run_dir",
        "status",
        "env_steps",
        "grad_steps",
        "final_tracking",
        "best_tracking",
        "steps_to_target",
        "last_eval_completion",
    ])?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    for r in results {
        w.write_record([
            r.point.to_string(),
            r.overrides.join(";"),
            r.seed.to_string(),
            r.run_dir.display().to_string(),
            r.status.clone(),
            opt(r.env_steps.map(|x| x.to_string())),
            opt(r.grad_steps.map(|x| x.to_string())),
            opt(r.final_tracking.map(|x| x.to_string())),
            opt(r.best_tracking.map(|x| x.to_string())),
            opt(r.steps_to_target.map(|x| x.to_string())),
            opt(r.last_eval_completion.map(|x| x.to_string())),
        ])?;
    }
    w.flush()?;
    Ok(())
}
