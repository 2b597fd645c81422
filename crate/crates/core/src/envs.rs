//! Episodic environments with discrete actions.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: Vec<f64>,
    pub reward: f64,
    /// Goal reached or step cap hit.
    pub done: bool,
    /// `done` because of the step cap rather than the goal.
    pub truncated: bool,
}

impl StepOutcome {
    pub fn reached_goal(&self) -> bool {
        self.done && !self.truncated
    }
}

pub trait Environment: Send {
    fn state_dim(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn max_steps(&self) -> usize;
    /// Per-dimension `(low, high)` bounds of the observation space.
    fn bounds(&self) -> Vec<(f64, f64)>;
    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64>;
    fn step(&mut self, action: usize) -> Result<StepOutcome>;
}

pub const MC_MIN_POSITION: f64 = -1.2;
pub const MC_MAX_POSITION: f64 = 0.6;
pub const MC_MAX_SPEED: f64 = 0.07;
pub const MC_GOAL_POSITION: f64 = 0.5;
pub const MC_FORCE: f64 = 0.001;
pub const MC_GRAVITY: f64 = 0.0025;
pub const MC_MAX_STEPS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MountainCarState {
    pub position: f64,
    pub velocity: f64,
}

impl MountainCarState {
    /// One application of the car's difference equations.
    pub fn advance(self, action: usize) -> Self {
        let mut velocity = self.velocity + (action as f64 - 1.0) * MC_FORCE
            - MC_GRAVITY * (3.0 * self.position).cos();
        velocity = velocity.clamp(-MC_MAX_SPEED, MC_MAX_SPEED);
        let position = (self.position + velocity).clamp(MC_MIN_POSITION, MC_MAX_POSITION);
        if position == MC_MIN_POSITION && velocity < 0.0 {
            velocity = 0.0;
        }
        Self { position, velocity }
    }
}

/// Discrete-action Mountain Car: push left (0), no push (1), push right (2).
#[derive(Debug, Clone)]
pub struct MountainCar {
    state: MountainCarState,
    steps: usize,
    done: bool,
}

impl Default for MountainCar {
    fn default() -> Self {
        Self::new()
    }
}

impl MountainCar {
    pub fn new() -> Self {
        Self {
            state: MountainCarState {
                position: -0.5,
                velocity: 0.0,
            },
            steps: 0,
            done: false,
        }
    }

    pub fn state(&self) -> MountainCarState {
        self.state
    }

    /// Starts a fresh episode from an explicit state.
    pub fn reset_to(&mut self, state: MountainCarState) -> Vec<f64> {
        self.state = state;
        self.steps = 0;
        self.done = false;
        vec![state.position, state.velocity]
    }
}

impl Environment for MountainCar {
    fn state_dim(&self) -> usize {
        2
    }

    fn n_actions(&self) -> usize {
        3
    }

    fn max_steps(&self) -> usize {
        MC_MAX_STEPS
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        vec![
            (MC_MIN_POSITION, MC_MAX_POSITION),
            (-MC_MAX_SPEED, MC_MAX_SPEED),
        ]
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        let position = rng.random_range(-0.6..-0.4);
        self.reset_to(MountainCarState {
            position,
            velocity: 0.0,
        })
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        if action >= 3 {
            return Err(Error::Usage(format!("mountain car has 3 actions, got {action}")));
        }
        if self.done {
            return Err(Error::Usage("step called after the episode ended".into()));
        }
        self.state = self.state.advance(action);
        self.steps += 1;
        let goal = self.state.position >= MC_GOAL_POSITION;
        let truncated = !goal && self.steps >= MC_MAX_STEPS;
        self.done = goal || truncated;
        Ok(StepOutcome {
            state: vec![self.state.position, self.state.velocity],
            reward: -1.0,
            done: self.done,
            truncated,
        })
    }
}

/// A 1-D corridor `0..=length`: action 0 steps left, action 1 steps right.
/// Reward is 0 everywhere except +1 on reaching `length`.
#[derive(Debug, Clone)]
pub struct SparseCorridor {
    length: usize,
    x: usize,
    steps: usize,
    done: bool,
}

impl SparseCorridor {
    pub fn new(length: usize) -> Result<Self> {
        if length == 0 {
            return Err(Error::Config("corridor length must be positive".into()));
        }
        Ok(Self {
            length,
            x: 0,
            steps: 0,
            done: false,
        })
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn position(&self) -> usize {
        self.x
    }

    /// Starts a fresh episode at `x`.
    pub fn reset_to(&mut self, x: usize) -> Result<Vec<f64>> {
        if x > self.length {
            return Err(Error::Usage(format!("position {x} outside corridor")));
        }
        self.x = x;
        self.steps = 0;
        self.done = false;
        Ok(vec![x as f64])
    }
}

impl Environment for SparseCorridor {
    fn state_dim(&self) -> usize {
        1
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn max_steps(&self) -> usize {
        4 * self.length
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        vec![(0.0, self.length as f64)]
    }

    fn reset(&mut self, _rng: &mut dyn RngCore) -> Vec<f64> {
        self.x = 0;
        self.steps = 0;
        self.done = false;
        vec![0.0]
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        if action >= 2 {
            return Err(Error::Usage(format!("corridor has 2 actions, got {action}")));
        }
        if self.done {
            return Err(Error::Usage("step called after the episode ended".into()));
        }
        self.x = if action == 0 {
            self.x.saturating_sub(1)
        } else {
            (self.x + 1).min(self.length)
        };
        self.steps += 1;
        let goal = self.x == self.length;
        let truncated = !goal && self.steps >= self.max_steps();
        self.done = goal || truncated;
        Ok(StepOutcome {
            state: vec![self.x as f64],
            reward: if goal { 1.0 } else { 0.0 },
            done: self.done,
            truncated,
        })
    }
}

/// Environment names accepted on the command line and in config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    MountainCar,
    SparseCorridor(usize),
}

impl EnvKind {
    pub fn build(self) -> Result<Box<dyn Environment>> {
        Ok(match self {
            EnvKind::MountainCar => Box::new(MountainCar::new()),
            EnvKind::SparseCorridor(n) => Box::new(SparseCorridor::new(n)?),
        })
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "mountain-car" {
            return Ok(EnvKind::MountainCar);
        }
        if let Some(len) = s.strip_prefix("sparse-corridor:") {
            let n: usize = len
                .parse()
                .map_err(|_| Error::Config(format!("bad corridor length in `{s}`")))?;
            if n == 0 {
                return Err(Error::Config("corridor length must be positive".into()));
            }
            return Ok(EnvKind::SparseCorridor(n));
        }
        Err(Error::Config(format!(
            "unknown environment `{s}` (expected mountain-car or sparse-corridor:<n>)"
        )))
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvKind::MountainCar => write!(f, "mountain-car"),
            EnvKind::SparseCorridor(n) => write!(f, "sparse-corridor:{n}"),
        }
    }
}
