//! Exploratory action selection.
//!
//! [`ExplorationStrategy::ModelBased`] predicts the successor of every action
//! with the dynamics model, fits a Gaussian to the last `f` visited states,
//! and takes the action whose predicted successor has the lowest
//! log-density. [`ExplorationStrategy::KernelNovelty`] does the same with
//! mean kernel similarity in place of the density.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};

use crate::agent::EpisodeStats;
use crate::dynamics::DynamicsPredictor;
use crate::envs::Environment;
use crate::replay::{ReplayMemory, Transition};
use crate::statemodel::{default_bandwidths, isotropic_bandwidths, kernel_similarity, GaussianModel};
use crate::{Error, Result};

pub const DEFAULT_RECENT_STATES: usize = 50;

/// Anything that can predict the state an action leads to.
pub trait NextStatePredictor {
    fn predict_next(&self, s: &[f64], a: usize) -> Result<Vec<f64>>;
}

impl NextStatePredictor for DynamicsPredictor {
    fn predict_next(&self, s: &[f64], a: usize) -> Result<Vec<f64>> {
        DynamicsPredictor::predict_next(self, s, a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BandwidthPolicy {
    /// Per-dimension sample std of the recent states, floored at 1e-6.
    SampleStd,
    /// One shared bandwidth for every dimension: the root mean per-dimension
    /// variance of the recent states, floored at 1e-6.
    IsotropicStd,
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExplorationStrategy {
    Random,
    KernelNovelty {
        recent: usize,
        bandwidth: BandwidthPolicy,
    },
    ModelBased {
        recent: usize,
    },
}

impl ExplorationStrategy {
    /// Kernel novelty with one shared bandwidth across dimensions.
    pub fn kernel(recent: usize) -> Self {
        ExplorationStrategy::KernelNovelty {
            recent,
            bandwidth: BandwidthPolicy::IsotropicStd,
        }
    }

    pub fn model_based(recent: usize) -> Self {
        ExplorationStrategy::ModelBased { recent }
    }

    /// Whether this strategy consults the dynamics model.
    pub fn uses_model(&self) -> bool {
        !matches!(self, ExplorationStrategy::Random)
    }

    pub fn with_recent(self, recent: usize) -> Self {
        match self {
            ExplorationStrategy::Random => ExplorationStrategy::Random,
            ExplorationStrategy::KernelNovelty { bandwidth, .. } => {
                ExplorationStrategy::KernelNovelty { recent, bandwidth }
            }
            ExplorationStrategy::ModelBased { .. } => ExplorationStrategy::ModelBased { recent },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ExplorationStrategy::Random => Ok(()),
            ExplorationStrategy::KernelNovelty { recent, bandwidth } => {
                if *recent < 2 {
                    return Err(Error::Config("recent-state count must be at least 2".into()));
                }
                if let BandwidthPolicy::Fixed(h) = bandwidth {
                    if h.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                        return Err(Error::Config("kernel bandwidths must be positive".into()));
                    }
                }
                Ok(())
            }
            ExplorationStrategy::ModelBased { recent } => {
                if *recent < 2 {
                    return Err(Error::Config("recent-state count must be at least 2".into()));
                }
                Ok(())
            }
        }
    }
}

impl FromStr for ExplorationStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(ExplorationStrategy::Random),
            "kernel" => Ok(ExplorationStrategy::kernel(DEFAULT_RECENT_STATES)),
            "model-based" => Ok(ExplorationStrategy::model_based(DEFAULT_RECENT_STATES)),
            other => Err(Error::Config(format!(
                "unknown strategy `{other}` (expected random, kernel or model-based)"
            ))),
        }
    }
}

impl fmt::Display for ExplorationStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExplorationStrategy::Random => "random",
            ExplorationStrategy::KernelNovelty { .. } => "kernel",
            ExplorationStrategy::ModelBased { .. } => "model-based",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExplorationPick {
    pub action: usize,
    /// The strategy could not fit its model and chose uniformly instead.
    pub fell_back: bool,
}

/// Index of the smallest score; ties go to the lowest index.
fn argmin(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in scores.iter().enumerate().skip(1) {
        if *v < scores[best] {
            best = i;
        }
    }
    best
}

pub fn pick_exploratory_action<R: Rng + ?Sized>(
    strategy: &ExplorationStrategy,
    state: &[f64],
    dynamics: &dyn NextStatePredictor,
    memory: &ReplayMemory,
    n_actions: usize,
    rng: &mut R,
) -> Result<ExplorationPick> {
    if n_actions == 0 {
        return Err(Error::Usage("action space is empty".into()));
    }
    let uniform = |rng: &mut R, fell_back| ExplorationPick {
        action: rng.random_range(0..n_actions),
        fell_back,
    };
    if n_actions == 1 {
        return Ok(ExplorationPick {
            action: 0,
            fell_back: false,
        });
    }
    let recent = match strategy {
        ExplorationStrategy::Random => return Ok(uniform(rng, false)),
        ExplorationStrategy::KernelNovelty { recent, .. }
        | ExplorationStrategy::ModelBased { recent } => *recent,
    };
    if memory.len() < 2 || recent < 2 {
        return Ok(uniform(rng, true));
    }
    let states = memory.recent_states(recent)?;
    let predictions = (0..n_actions)
        .map(|a| dynamics.predict_next(state, a))
        .collect::<Result<Vec<_>>>()?;

    let scores: Vec<f64> = match strategy {
        ExplorationStrategy::ModelBased { .. } => {
            let model = match GaussianModel::fit(&states) {
                Ok(m) => m,
                Err(Error::Numerical(_)) => return Ok(uniform(rng, true)),
                Err(e) => return Err(e),
            };
            predictions
                .iter()
                .map(|p| model.log_density(p))
                .collect::<Result<_>>()?
        }
        ExplorationStrategy::KernelNovelty { bandwidth, .. } => {
            let h = match bandwidth {
                BandwidthPolicy::SampleStd => default_bandwidths(&states)?,
                BandwidthPolicy::IsotropicStd => isotropic_bandwidths(&states)?,
                BandwidthPolicy::Fixed(h) => h.clone(),
            };
            predictions
                .iter()
                .map(|p| kernel_similarity(&states, p, &h))
                .collect::<Result<_>>()?
        }
        ExplorationStrategy::Random => unreachable!("handled above"),
    };
    if scores.iter().any(|s| s.is_nan()) {
        return Ok(uniform(rng, true));
    }
    Ok(ExplorationPick {
        action: argmin(&scores),
        fell_back: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExploreSettings {
    pub lr_dynamics: f64,
    pub batch_dynamics: usize,
    pub replay_capacity: usize,
}

impl Default for ExploreSettings {
    fn default() -> Self {
        Self {
            lr_dynamics: 0.02,
            batch_dynamics: 64,
            replay_capacity: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplorationRun {
    /// Every state arrived at, in order.
    pub states: Vec<Vec<f64>>,
    pub episodes: Vec<EpisodeStats>,
    /// Steps where the strategy fell back to a uniform action.
    pub fallbacks: usize,
}

/// Runs whole episodes with every action chosen by `strategy`, training the
/// dynamics model online when the strategy uses it.
pub fn exploration_only_run<R: Rng>(
    env: &mut dyn Environment,
    strategy: &ExplorationStrategy,
    dynamics: &mut DynamicsPredictor,
    episodes: usize,
    settings: &ExploreSettings,
    rng: &mut R,
) -> Result<ExplorationRun> {
    if episodes == 0 {
        return Err(Error::Usage("exploration run needs at least one episode".into()));
    }
    strategy.validate()?;
    let n_actions = env.n_actions();
    let mut memory = ReplayMemory::new(settings.replay_capacity)?;
    let mut run = ExplorationRun {
        states: Vec::with_capacity(episodes * env.max_steps()),
        episodes: Vec::with_capacity(episodes),
        fallbacks: 0,
    };
    for episode in 0..episodes {
        let mut state = env.reset(rng as &mut dyn RngCore);
        let mut total = 0.0;
        let mut steps = 0;
        loop {
            let pick =
                pick_exploratory_action(strategy, &state, &*dynamics, &memory, n_actions, rng)?;
            if pick.fell_back {
                run.fallbacks += 1;
            }
            let out = env.step(pick.action)?;
            total += out.reward;
            steps += 1;
            run.states.push(out.state.clone());
            memory.push(Transition {
                state: std::mem::take(&mut state),
                action: pick.action,
                reward: out.reward,
                next_state: out.state.clone(),
                done: out.done,
            })?;
            if strategy.uses_model() && memory.len() >= settings.batch_dynamics {
                let batch = memory.sample_uniform(settings.batch_dynamics, rng)?;
                dynamics.train(&batch, settings.lr_dynamics)?;
            }
            state = out.state;
            if out.done {
                run.episodes.push(EpisodeStats {
                    episode,
                    total_reward: total,
                    steps,
                    exploration_fraction: 1.0,
                    reached_goal: !out.truncated,
                });
                break;
            }
        }
    }
    Ok(run)
}
