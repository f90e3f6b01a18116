//! Run configuration: a TOML document with `[train]`, `[agent]` and `[env]`
//! sections, plus dotted `key=value` overrides.

use std::path::Path;

use anyhow::{bail, Context, Result};
use fastrl_core::{AgentConfig, NoiseSchedule};
use fastrl_envlab::{ChainConfig, LocoConfig, PushProfile};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Fastsac,
    Fasttd3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    PlanarLoco,
    ChainTrack,
}

/// How mirrored transitions enter a sampled minibatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymmetryMode {
    /// Append the mirrored copy, doubling the batch.
    Double,
    /// Mirror the second half of the batch in place.
    ReplaceHalf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub algorithm: Algorithm,
    pub env: EnvKind,
    pub num_envs: usize,
    /// Transitions to collect; the loop stops at the first vector step reaching it.
    pub total_env_steps: u64,
    pub batch_size: usize,
    /// Gradient updates per vector step.
    pub num_updates: usize,
    pub seed: u64,
    /// Keep wall-clock time out of `metrics.csv` so repeated runs match byte for byte.
    pub deterministic: bool,
    /// Replay slots per env.
    pub buffer_capacity: usize,
    pub learning_starts: u64,
    pub obs_norm: bool,
    /// Transitions observed before normalization switches on.
    pub obs_norm_warmup: f64,
    pub symmetry: bool,
    pub symmetry_mode: SymmetryMode,
    /// Overrides the env section's push profile when set.
    pub push_profile: Option<PushProfile>,
    /// Raw Gaussian actions offset from the default pose, no squashing or limits.
    pub unbounded_actions: bool,
    pub log_interval: u64,
    /// 0 disables periodic evaluation.
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub eval_seed: u64,
    /// 0 checkpoints only at the end of the run.
    pub checkpoint_interval: u64,
    /// Stop once a logged `tracking_mean` reaches this.
    pub target_tracking: Option<f64>,
    /// Stop once a periodic evaluation's completion rate reaches this.
    pub target_eval_completion: Option<f64>,
    pub noise: NoiseSchedule,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Fastsac,
            env: EnvKind::PlanarLoco,
            num_envs: 256,
            total_env_steps: 300_000,
            batch_size: 1024,
            num_updates: 2,
            seed: 0,
            deterministic: true,
            buffer_capacity: 1024,
            learning_starts: 0,
            obs_norm: true,
            obs_norm_warmup: 0.0,
            symmetry: false,
            symmetry_mode: SymmetryMode::Double,
            push_profile: None,
            unbounded_actions: false,
            log_interval: 1000,
            eval_interval: 0,
            eval_episodes: 20,
            eval_seed: 1_000_003,
            checkpoint_interval: 0,
            target_tracking: None,
            target_eval_completion: None,
            noise: NoiseSchedule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub loco: LocoConfig,
    pub chain: ChainConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainSection,
    pub agent: AgentConfig,
    pub env: EnvSection,
}

impl RunConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(text).context("parsing config TOML")?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(doc).try_into().context("config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text, overrides).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Applies overrides to a copy of this config.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        Self::from_toml(&self.to_toml()?, overrides)
    }

    /// Agent settings after folding in the run-level toggles.
    pub fn effective_agent(&self) -> AgentConfig {
        let mut a = self.agent.clone();
        if self.train.unbounded_actions {
            a.squash = false;
        }
        a
    }

    pub fn effective_loco(&self) -> LocoConfig {
        let mut c = self.env.loco.clone();
        if let Some(p) = self.train.push_profile {
            c.push_profile = p;
        }
        c
    }

    pub fn effective_chain(&self) -> ChainConfig {
        let mut c = self.env.chain.clone();
        if let Some(p) = self.train.push_profile {
            c.push_profile = p;
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        if t.num_envs == 0 {
            bail!("train.num_envs must be positive");
        }
        if t.batch_size == 0 {
            bail!("train.batch_size must be positive");
        }
        if t.num_updates == 0 {
            bail!("train.num_updates must be positive");
        }
        if t.buffer_capacity == 0 {
            bail!("train.buffer_capacity must be positive");
        }
        if t.log_interval == 0 {
            bail!("train.log_interval must be positive");
        }
        if t.eval_episodes == 0 {
            bail!("train.eval_episodes must be positive");
        }
        if !(t.obs_norm_warmup >= 0.0) {
            bail!("train.obs_norm_warmup must be non-negative");
        }
        if t.seed > i64::MAX as u64 || t.eval_seed > i64::MAX as u64 {
            bail!("seeds must fit in a signed 64-bit integer");
        }
        for (name, v) in [
            ("target_tracking", t.target_tracking),
            ("target_eval_completion", t.target_eval_completion),
        ] {
            if v.is_some_and(|x| !x.is_finite()) {
                bail!("train.{name} must be finite");
            }
        }
        if t.target_eval_completion.is_some() && t.eval_interval == 0 {
            bail!("train.target_eval_completion needs train.eval_interval > 0");
        }
        if t.symmetry && t.env != EnvKind::PlanarLoco {
            bail!("train.symmetry is only defined for planar_loco");
        }
        if t.unbounded_actions && t.algorithm == Algorithm::Fasttd3 {
            bail!("train.unbounded_actions applies to fastsac only");
        }
        t.noise.validate()?;
        self.effective_agent().validate()?;
        match t.env {
            EnvKind::PlanarLoco => self.effective_loco().validate()?,
            EnvKind::ChainTrack => self.effective_chain().validate()?,
        }
        Ok(())
    }
}

/// Sets `key=value` in a TOML table. The value is parsed as a TOML literal,
/// falling back to a bare string. Keys without a dot are looked up in the
/// `train` and `agent` sections.
pub fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .with_context(|| format!("override `{spec}` is not key=value"))?;
    let key = resolve_key(key.trim())?;
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.split('.').collect();
    let mut table = doc;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .with_context(|| format!("override `{key}`: `{p}` is not a table"))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

pub fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn resolve_key(key: &str) -> Result<String> {
    if key.is_empty() || key.split('.').any(str::is_empty) {
        bail!("empty override key `{key}`");
    }
    if key.contains('.') {
        return Ok(key.to_string());
    }
    let defaults = toml::Value::try_from(RunConfig::default())?;
    let hits: Vec<&str> = ["train", "agent"]
        .into_iter()
        .filter(|s| defaults.get(s).and_then(|t| t.get(key)).is_some() || (*s == "train" && key == "push_profile"))
        .collect();
    match hits.as_slice() {
        [one] => Ok(format!("{one}.{key}")),
        [] => bail!("unknown override key `{key}`; use a dotted path such as train.{key}"),
        _ => bail!("ambiguous override key `{key}`; use a dotted path"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use fastrl_core::CombineMode;

    #[test]
    fn empty_document_is_the_default() {
        let cfg = RunConfig::from_toml("", &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.agent.gamma, 0.97);
        assert_eq!(cfg.agent.beta2, 0.95);
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.train.push_profile = Some(PushProfile::Strong);
        cfg.train.target_tracking = Some(0.7);
        cfg.agent.gamma = 0.99;
        cfg.env.chain.bank_path = Some("/tmp/bank.frmb".into());
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text, &[]).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("[train]\nnum_env = 3\n", &[]).is_err());
        assert!(RunConfig::from_toml("[agent]\nlr = 3\n", &[]).is_err());
        assert!(RunConfig::from_toml("[extra]\n", &[]).is_err());
        assert!(RunConfig::from_toml("", &["train.bogus=1".into()]).is_err());
    }

    #[test]
    fn overrides_parse_typed_values() {
        let cfg = RunConfig::from_toml(
            "",
            &[
                "train.num_envs=64".into(),
                "agent.cdq_mode=min_expectation".into(),
                "agent.critic_hidden=[32, 32]".into(),
                "gamma=0.99".into(),
                "push_profile=strong".into(),
                "env.loco.dr.slope=[-0.1, 0.1]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.train.num_envs, 64);
        assert_eq!(cfg.agent.cdq_mode, CombineMode::MinExpectation);
        assert_eq!(cfg.agent.critic_hidden, vec![32, 32]);
        assert_eq!(cfg.agent.gamma, 0.99);
        assert_eq!(cfg.train.push_profile, Some(PushProfile::Strong));
        assert_eq!(cfg.effective_loco().push_profile, PushProfile::Strong);
        assert_eq!(cfg.env.loco.dr.slope.lo, -0.1);
    }

    #[test]
    fn bad_values_are_rejected() {
        for o in [
            "train.num_envs=0",
            "agent.gamma=1.5",
            "train.batch_size=-1",
            "nonsense",
            "zzz=1",
            "train.num_updates=0",
        ] {
            assert!(RunConfig::from_toml("", &[o.into()]).is_err(), "{o}");
        }
        assert!(RunConfig::from_toml("", &["train.env=chain_track".into(), "train.symmetry=true".into()]).is_err());
        assert!(RunConfig::from_toml(
            "",
            &["train.algorithm=fasttd3".into(), "train.unbounded_actions=true".into()]
        )
        .is_err());
    }

    #[test]
    fn unbounded_toggle_disables_squashing() {
        let cfg = RunConfig::from_toml("[train]\nunbounded_actions = true\n", &[]).unwrap();
        assert!(!cfg.effective_agent().squash);
        assert!(cfg.agent.squash);
    }
}
