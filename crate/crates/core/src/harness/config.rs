use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use serde::{Deserialize, Serialize};

use crate::agents::Hyperparams;
use crate::envs::EnvKind;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    Dac,
    Sac,
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgentKind::Dac => "dac",
            AgentKind::Sac => "sac",
        })
    }
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dac" => Ok(AgentKind::Dac),
            "sac" => Ok(AgentKind::Sac),
            other => Err(Error::Usage(format!("unknown agent {other:?} (expected dac or sac)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub agent: AgentKind,
    pub env: EnvKind,
    pub seed: u64,
    /// Environment steps.
    pub steps: usize,
    /// Gradient updates per environment step.
    pub replay_ratio: usize,
    /// Environment steps between full resets; 0 disables them. `None`
    /// resolves to `steps / 6` at replay ratio 16 and above, else 0.
    pub reset_interval: Option<usize>,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub replay_capacity: usize,
    /// Metrics CSV; the final snapshot goes next to it.
    pub out: PathBuf,
    pub hyperparams: Hyperparams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            agent: AgentKind::Dac,
            env: EnvKind::Pendulum,
            seed: 0,
            steps: 30_000,
            replay_ratio: 2,
            reset_interval: None,
            eval_every: 1000,
            eval_episodes: 5,
            replay_capacity: 1_000_000,
            out: PathBuf::from("metrics.csv"),
            hyperparams: Hyperparams::default(),
        }
    }
}

impl RunConfig {
    pub const HIGH_REPLAY_RATIO: usize = 16;

    pub fn validate(&self) -> Result<()> {
        if self.replay_ratio == 0 {
            return Err(Error::Usage("replay_ratio must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Usage("eval_every must be positive".into()));
        }
        if self.eval_episodes == 0 {
            return Err(Error::Usage("eval_episodes must be positive".into()));
        }
        if self.replay_capacity == 0 {
            return Err(Error::Usage("replay_capacity must be positive".into()));
        }
        self.hyperparams
            .validate()
            .map_err(|e| Error::Usage(format!("hyperparams: {e}")))
    }

    pub fn resolved_reset_interval(&self) -> usize {
        match self.reset_interval {
            Some(n) => n,
            None if self.replay_ratio >= Self::HIGH_REPLAY_RATIO => self.steps / 6,
            None => 0,
        }
    }

    pub fn snapshot_path(&self) -> PathBuf {
        self.out.with_extension("snapshot")
    }

    /// Fills in the derived reset interval so the header states it.
    pub fn resolved(mut self) -> Self {
        self.reset_interval = Some(self.resolved_reset_interval());
        self
    }
}

/// Command-line form of [`RunConfig`]. Flags override the file.
#[derive(Args, Clone, Debug, Default, PartialEq)]
pub struct TrainArgs {
    /// TOML file with run settings and a `[hyperparams]` table.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub agent: Option<AgentKind>,
    #[arg(long)]
    pub env: Option<EnvKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub replay_ratio: Option<usize>,
    /// 0 disables resets.
    #[arg(long)]
    pub reset_interval: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub eval_episodes: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `key=value`; keys name run settings or hyperparameters, values are
    /// TOML literals (`hidden=[64,64]`, `kl_target=0.3`).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

const RUN_KEYS: &[&str] = &[
    "agent",
    "env",
    "seed",
    "steps",
    "replay_ratio",
    "reset_interval",
    "eval_every",
    "eval_episodes",
    "replay_capacity",
    "out",
];

fn parse_literal(key: &str, raw: &str) -> Result<toml::Value> {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => Ok(t.remove("v").expect("key written above")),
        Err(_) if !raw.is_empty() => Ok(toml::Value::String(raw.to_string())),
        Err(_) => Err(Error::Usage(format!("empty value for {key}"))),
    }
}

fn set(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    if RUN_KEYS.contains(&key) {
        table.insert(key.to_string(), value);
        return Ok(());
    }
    let hp = table
        .entry("hyperparams")
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    match hp {
        toml::Value::Table(t) => {
            t.insert(key.to_string(), value);
            Ok(())
        }
        _ => Err(Error::Usage("hyperparams must be a table".into())),
    }
}

fn load_table(path: &Path) -> Result<toml::Table> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Usage(format!("cannot read config {}: {e}", path.display())))?;
    text.parse::<toml::Table>()
        .map_err(|e| Error::Usage(format!("config {}: {e}", path.display())))
}

/// Defaults, then the config file, then flags and `--set` overrides.
pub fn parse_config(args: &TrainArgs) -> Result<RunConfig> {
    let mut table = match &args.config {
        Some(path) => load_table(path)?,
        None => toml::Table::new(),
    };
    let flags: [(&str, Option<toml::Value>); 9] = [
        ("agent", args.agent.map(|a| a.to_string().into())),
        ("env", args.env.map(|e| e.name().into())),
        ("seed", args.seed.map(|v| (v as i64).into())),
        ("steps", args.steps.map(|v| (v as i64).into())),
        ("replay_ratio", args.replay_ratio.map(|v| (v as i64).into())),
        ("reset_interval", args.reset_interval.map(|v| (v as i64).into())),
        ("eval_every", args.eval_every.map(|v| (v as i64).into())),
        ("eval_episodes", args.eval_episodes.map(|v| (v as i64).into())),
        ("out", args.out.as_ref().map(|p| p.display().to_string().into())),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            set(&mut table, key, v)?;
        }
    }
    for item in &args.overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("override {item:?} is not key=value")))?;
        let key = key.trim();
        set(&mut table, key, parse_literal(key, raw.trim())?)?;
    }
    let config: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Usage(e.message().to_string()))?;
    config.validate()?;
    Ok(config)
}
