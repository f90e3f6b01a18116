//! `metrics.csv`: one row per logging window with a schema that never
//! depends on the run's configuration.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fastrl_core::UpdateMetrics;
use fastrl_envlab::{EpisodeSummary, StepOutput, CHAIN_TERMS, LOCO_TERMS};
use serde::{Deserialize, Serialize};

use crate::eval::EvalStats;

const HEAD: [&str; 12] = [
    "wall_clock_s",
    "env_steps",
    "vector_steps",
    "grad_steps",
    "episodes",
    "mean_ep_length",
    "mean_ep_return",
    "tracking_mean",
    "completion_rate",
    "fall_rate",
    "ramp",
    "reward_mean",
];

const TAIL: [&str; 12] = [
    "critic_loss",
    "actor_loss",
    "alpha",
    "alpha_loss",
    "entropy",
    "mean_q",
    "eval_return",
    "eval_tracking",
    "eval_length",
    "eval_completion",
    "eval_fall_rate",
    "incidents",
];

/// Reward term names of every environment, each once, in a fixed order.
pub fn term_union() -> Vec<&'static str> {
    let mut out: Vec<&'static str> = LOCO_TERMS.to_vec();
    for t in CHAIN_TERMS {
        if !out.contains(&t) {
            out.push(t);
        }
    }
    out
}

/// The full column list.
pub fn columns() -> Vec<String> {
    HEAD.iter()
        .map(|s| s.to_string())
        .chain(term_union().into_iter().map(|t| format!("term_{t}")))
        .chain(TAIL.iter().map(|s| s.to_string()))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct Mean {
    sum: f64,
    n: u64,
}

impl Mean {
    fn add(&mut self, v: f64) {
        self.sum += v;
        self.n += 1;
    }

    fn add_opt(&mut self, v: Option<f64>) {
        if let Some(v) = v {
            self.add(v);
        }
    }

    fn get(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }
}

/// Sums over the current logging window. Checkpointed with the run so a
/// resumed run closes the window exactly as an uninterrupted one would.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Window {
    transitions: u64,
    reward: f64,
    tracking: f64,
    /// Sums per term of the active env, in its own term order.
    terms: Vec<f64>,
    episodes: u64,
    length: f64,
    ret: f64,
    completed: u64,
    terminated: u64,
    incidents: u64,
    critic_loss: Mean,
    actor_loss: Mean,
    alpha: Mean,
    alpha_loss: Mean,
    entropy: Mean,
    mean_q: Mean,
    eval: Option<EvalStats>,
}

impl Window {
    pub fn record_step(&mut self, out: &StepOutput, tracking: impl Fn(&[f64]) -> f64) {
        let n_terms = out.terms.cols();
        if self.terms.len() != n_terms {
            self.terms = vec![0.0; n_terms];
        }
        for (i, &r) in out.reward.iter().enumerate() {
            let row = out.terms.row(i);
            self.reward += r;
            self.tracking += tracking(row);
            for (acc, v) in self.terms.iter_mut().zip(row) {
                *acc += v;
            }
        }
        self.transitions += out.reward.len() as u64;
        self.incidents += out.incidents as u64;
        for e in &out.episodes {
            self.record_episode(e);
        }
    }

    fn record_episode(&mut self, e: &EpisodeSummary) {
        self.episodes += 1;
        self.length += e.length as f64;
        self.ret += e.ret;
        self.completed += e.completed as u64;
        self.terminated += e.reason.is_some() as u64;
    }

    pub fn record_updates(&mut self, updates: &[UpdateMetrics]) {
        for u in updates {
            self.critic_loss.add(u.critic_loss);
            self.actor_loss.add_opt(u.actor_loss);
            self.alpha.add_opt(u.alpha);
            self.alpha_loss.add_opt(u.alpha_loss);
            self.entropy.add_opt(u.entropy);
            self.mean_q.add(u.mean_q);
        }
    }

    pub fn record_eval(&mut self, stats: EvalStats) {
        self.eval = Some(stats);
    }

    pub fn is_empty(&self) -> bool {
        self.transitions == 0
    }

    pub fn tracking_mean(&self) -> Option<f64> {
        (self.transitions > 0).then(|| self.tracking / self.transitions as f64)
    }

    /// Closes the window into a row and resets it.
    pub fn close(&mut self, counters: RowCounters, term_names: &[&str], ramp: f64) -> Row {
        let w = std::mem::take(self);
        let mut row = Row::empty();
        let t = w.transitions as f64;
        let per_t = |v: f64| (w.transitions > 0).then(|| v / t);
        let e = w.episodes as f64;
        let per_e = |v: f64| (w.episodes > 0).then(|| v / e);
        row.set("wall_clock_s", counters.wall_clock_s);
        row.set("env_steps", Some(counters.env_steps as f64));
        row.set("vector_steps", Some(counters.vector_steps as f64));
        row.set("grad_steps", Some(counters.grad_steps as f64));
        row.set("episodes", Some(e));
        row.set("mean_ep_length", per_e(w.length));
        row.set("mean_ep_return", per_e(w.ret));
        row.set("tracking_mean", per_t(w.tracking));
        row.set("completion_rate", per_e(w.completed as f64));
        row.set("fall_rate", per_e(w.terminated as f64));
        row.set("ramp", Some(ramp));
        row.set("reward_mean", per_t(w.reward));
        for (name, sum) in term_names.iter().zip(&w.terms) {
            row.set(&format!("term_{name}"), per_t(*sum));
        }
        row.set("critic_loss", w.critic_loss.get());
        row.set("actor_loss", w.actor_loss.get());
        row.set("alpha", w.alpha.get());
        row.set("alpha_loss", w.alpha_loss.get());
        row.set("entropy", w.entropy.get());
        row.set("mean_q", w.mean_q.get());
        if let Some(ev) = w.eval {
            row.set("eval_return", Some(ev.mean_return));
            row.set("eval_tracking", Some(ev.mean_tracking));
            row.set("eval_length", Some(ev.mean_length));
            row.set("eval_completion", Some(ev.completion_rate));
            row.set("eval_fall_rate", Some(ev.fall_rate));
        }
        row.set("incidents", Some(w.incidents as f64));
        row
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RowCounters {
    pub wall_clock_s: Option<f64>,
    pub env_steps: u64,
    pub vector_steps: u64,
    pub grad_steps: u64,
}

/// One metrics row, aligned with [`columns`].
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub values: Vec<Option<f64>>,
}

impl Row {
    pub fn empty() -> Self {
        Self {
            values: vec![None; columns().len()],
        }
    }

    pub fn set(&mut self, column: &str, v: Option<f64>) {
        let i = column_index(column).unwrap_or_else(|| panic!("no metrics column `{column}`"));
        self.values[i] = v;
    }

    pub fn get(&self, column: &str) -> Option<f64> {
        column_index(column).and_then(|i| self.values[i])
    }

    fn record(&self) -> Vec<String> {
        self.values
            .iter()
            .map(|v| v.map(|x| format!("{x}")).unwrap_or_default())
            .collect()
    }
}

fn column_index(name: &str) -> Option<usize> {
    columns().iter().position(|c| c == name)
}

/// Appends rows to `metrics.csv`, flushing after each.
pub struct MetricsWriter {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl MetricsWriter {
    /// Starts a fresh file with the header row.
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut writer = csv::Writer::from_writer(file);
        writer.write_record(columns())?;
        writer.flush()?;
        Ok(Self {
            path: path.to_path_buf(),
            writer,
        })
    }

    /// Reopens an existing file, dropping rows past `env_steps`.
    pub fn resume(path: &Path, env_steps: u64) -> Result<Self> {
        let table = MetricsTable::read(path)?;
        let kept: Vec<&Row> = table
            .rows
            .iter()
            .take_while(|r| r.get("env_steps").is_some_and(|s| s <= env_steps as f64))
            .collect();
        let mut out = Self::create(path)?;
        for r in kept {
            out.write(r)?;
        }
        Ok(out)
    }

    pub fn write(&mut self, row: &Row) -> Result<()> {
        self.writer.write_record(row.record())?;
        self.writer.flush()?;
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// A parsed metrics file.
#[derive(Debug, Clone)]
pub struct MetricsTable {
    pub rows: Vec<Row>,
}

impl MetricsTable {
    pub fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        let expected = columns();
        for c in &expected {
            if !header.contains(c) {
                bail!("{}: missing column `{c}`", path.display());
            }
        }
        if header != expected {
            bail!("{}: column schema differs from this build's", path.display());
        }
        let mut rows = Vec::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec?;
            let mut values = Vec::with_capacity(rec.len());
            for (field, name) in rec.iter().zip(&expected) {
                values.push(if field.is_empty() {
                    None
                } else {
                    Some(field.parse::<f64>().with_context(|| {
                        format!("{} row {}: bad value `{field}` in `{name}`", path.display(), line + 1)
                    })?)
                });
            }
            rows.push(Row { values });
        }
        Ok(Self { rows })
    }

    pub fn column(&self, name: &str) -> Result<Vec<Option<f64>>> {
        let i = column_index(name).with_context(|| format!("no metrics column `{name}`"))?;
        Ok(self.rows.iter().map(|r| r.values[i]).collect())
    }

    /// First `env_steps` at which `column` reaches `threshold`.
    pub fn first_reaching(&self, column: &str, threshold: f64) -> Result<Option<u64>> {
        let vals = self.column(column)?;
        let steps = self.column("env_steps")?;
        Ok(vals
            .iter()
            .zip(&steps)
            .find(|(v, _)| v.is_some_and(|v| v >= threshold))
            .and_then(|(_, s)| s.map(|s| s as u64)))
    }

    pub fn best(&self, column: &str) -> Result<Option<f64>> {
        Ok(self.column(column)?.into_iter().flatten().reduce(f64::max))
    }

    pub fn last(&self, column: &str) -> Result<Option<f64>> {
        Ok(self.column(column)?.into_iter().flatten().last())
    }
}

/// `timing.csv` keeps wall-clock time out of the deterministic metrics.
pub struct TimingWriter {
    file: File,
}

impl TimingWriter {
    pub fn open(path: &Path, fresh: bool, keep_upto: Option<u64>) -> Result<Self> {
        if fresh || !path.exists() {
            let mut file = File::create(path)?;
            writeln!(file, "env_steps,wall_clock_s")?;
            return Ok(Self { file });
        }
        let text = std::fs::read_to_string(path)?;
        let mut kept = String::new();
        for (i, line) in text.lines().enumerate() {
            let keep = i == 0
                || line
                    .split(',')
                    .next()
                    .and_then(|s| s.parse::<u64>().ok())
                    .is_some_and(|s| keep_upto.is_none_or(|k| s <= k));
            if keep {
                kept.push_str(line);
                kept.push('\n');
            }
        }
        std::fs::write(path, kept)?;
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(Self { file })
    }

    pub fn write(&mut self, env_steps: u64, wall_clock_s: f64) -> Result<()> {
        writeln!(self.file, "{env_steps},{wall_clock_s}")?;
        Ok(())
    }
}

/// Wall-clock seconds per `env_steps` from a run's `timing.csv`.
pub fn read_timing(path: &Path) -> Result<Vec<(u64, f64)>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let s: u64 = rec.get(0).context("timing row")?.parse()?;
        let w: f64 = rec.get(1).context("timing row")?.parse()?;
        out.push((s, w));
    }
    Ok(out)
}
