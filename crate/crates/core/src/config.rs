//! Experiment configuration: a flat `key = value` file plus CLI overrides.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! rejected. Example:
//!
//! ```text
//! kind = train
//! env = mountain-car
//! agent = dqn
//! strategy = model-based
//! episodes = 400
//! seeds = 1, 2, 3
//! out = runs/mc-model-based
//! ```

use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::agent::{DqnConfig, ReinforceConfig};
use crate::envs::EnvKind;
use crate::explore::{BandwidthPolicy, ExplorationStrategy};
use crate::nn::Optimizer;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    /// Every action chosen by the exploration strategy; Q is never trained.
    ExplorationOnly,
    Training,
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "explore" | "exploration-only" => Ok(ExperimentKind::ExplorationOnly),
            "train" | "training" => Ok(ExperimentKind::Training),
            other => Err(Error::Config(format!("unknown experiment kind `{other}`"))),
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentKind::ExplorationOnly => "explore",
            ExperimentKind::Training => "train",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentKind {
    Dqn,
    Reinforce,
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dqn" => Ok(AgentKind::Dqn),
            "reinforce" => Ok(AgentKind::Reinforce),
            other => Err(Error::Config(format!("unknown agent `{other}` (expected dqn or reinforce)"))),
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgentKind::Dqn => "dqn",
            AgentKind::Reinforce => "reinforce",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub env: EnvKind,
    pub agent: AgentKind,
    pub strategy: ExplorationStrategy,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub dqn: DqnConfig,
    pub reinforce: ReinforceConfig,
    /// Number of recent states the exploration model is fit to.
    pub recent_states: usize,
    /// Bandwidth rule for the `kernel` strategy.
    pub kernel_bandwidth: BandwidthPolicy,
    pub running_avg_window: usize,
    /// Coverage grid resolution per state dimension.
    pub coverage_bins: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::Training,
            env: EnvKind::MountainCar,
            agent: AgentKind::Dqn,
            strategy: ExplorationStrategy::model_based(50),
            episodes: 400,
            seeds: vec![1, 2, 3],
            out: PathBuf::from("runs"),
            dqn: DqnConfig::default(),
            reinforce: ReinforceConfig::default(),
            recent_states: 50,
            kernel_bandwidth: BandwidthPolicy::IsotropicStd,
            running_avg_window: 50,
            coverage_bins: 20,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

impl ExperimentConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "kind" => self.kind = value.parse()?,
            "env" => self.env = value.parse()?,
            "agent" => self.agent = value.parse()?,
            "strategy" => self.strategy = value.parse()?,
            "episodes" => self.episodes = parse(key, value)?,
            "seeds" => {
                self.seeds = value
                    .split(',')
                    .map(|s| parse::<u64>(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "out" => self.out = PathBuf::from(value),
            "epsilon_start" => self.dqn.epsilon_start = parse(key, value)?,
            "epsilon_min" => self.dqn.epsilon_min = parse(key, value)?,
            "epsilon_decay" => self.dqn.epsilon_decay = parse(key, value)?,
            "gamma" => self.dqn.gamma = parse(key, value)?,
            "lr_q" => self.dqn.lr_q = parse(key, value)?,
            "lr_dynamics" => self.dqn.lr_dynamics = parse(key, value)?,
            "target_sync" => self.dqn.target_sync = parse(key, value)?,
            "warmup_steps" => self.dqn.warmup_steps = parse(key, value)?,
            "batch_q" => self.dqn.batch_q = parse(key, value)?,
            "batch_dynamics" => self.dqn.batch_dynamics = parse(key, value)?,
            "replay_capacity" => self.dqn.replay_capacity = parse(key, value)?,
            "q_hidden" => self.dqn.q_hidden = parse(key, value)?,
            "dynamics_hidden" => self.dqn.dynamics_hidden = parse(key, value)?,
            "normalize_dynamics" => self.dqn.normalize_dynamics = parse_bool(key, value)?,
            "optimizer" => {
                self.dqn.optimizer = Optimizer::parse(value)?;
                self.reinforce.optimizer = self.dqn.optimizer;
            }
            "error_clip" => self.dqn.error_clip = parse(key, value)?,
            "recent_states" => self.recent_states = parse(key, value)?,
            "kernel_bandwidth" => {
                let policy = match value {
                    "isotropic" => BandwidthPolicy::IsotropicStd,
                    "per-dimension" => BandwidthPolicy::SampleStd,
                    other => {
                        return Err(Error::Config(format!(
                            "unknown kernel_bandwidth `{other}` (expected isotropic or per-dimension)"
                        )))
                    }
                };
                self.kernel_bandwidth = policy;
            }
            "pg_lr" => self.reinforce.lr = parse(key, value)?,
            "pg_gamma" => self.reinforce.gamma = parse(key, value)?,
            "pg_hidden" => self.reinforce.hidden = parse(key, value)?,
            "pg_normalize_returns" => self.reinforce.normalize_returns = parse_bool(key, value)?,
            "running_avg_window" => self.running_avg_window = parse(key, value)?,
            "coverage_bins" => self.coverage_bins = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Parses a config file body on top of the defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut config = Self::default();
        let mut seen = HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", lineno + 1)));
            }
            config
                .set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(config)
    }

    /// Checks every invariant; the strategy's recent-state count is synced here.
    pub fn validate(&mut self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::Config("episodes must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let mut unique = HashSet::new();
        for s in &self.seeds {
            if !unique.insert(s) {
                return Err(Error::Config(format!("duplicate seed {s}")));
            }
        }
        if self.running_avg_window == 0 || self.coverage_bins == 0 {
            return Err(Error::Config("window and bin counts must be positive".into()));
        }
        self.strategy = match self.strategy.clone().with_recent(self.recent_states) {
            ExplorationStrategy::KernelNovelty { recent, .. } => ExplorationStrategy::KernelNovelty {
                recent,
                bandwidth: self.kernel_bandwidth.clone(),
            },
            other => other,
        };
        self.strategy.validate()?;
        self.dqn.validate()?;
        self.reinforce.validate()?;
        if self.kind == ExperimentKind::ExplorationOnly && self.agent == AgentKind::Reinforce {
            return Err(Error::Config("exploration-only runs use the dqn exploration strategies".into()));
        }
        Ok(())
    }
}
