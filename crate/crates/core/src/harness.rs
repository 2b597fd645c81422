//! Experiment runner: per-seed runs, metrics, and CSV artifacts.
//!
//! Each seed writes `rewards_<seed>.csv` and `states_<seed>.csv`; after all
//! seeds finish, `summary.csv` aggregates episode rewards across the seeds
//! that succeeded. Floats are written with 9 significant digits.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::agent::{DqnAgent, EpisodeStats, ReinforceAgent};
use crate::config::{AgentKind, ExperimentConfig, ExperimentKind};
use crate::dynamics::{DynamicsPredictor, StateScaler};
use crate::explore::{exploration_only_run, ExploreSettings};
use crate::{seeded_rng, Error, Result};

pub const THREADS_ENV: &str = "SPARSE_EXPLORER_THREADS";

/// A regular grid over a box; cells are indexed row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageGrid {
    ranges: Vec<(f64, f64)>,
    bins: Vec<usize>,
}

impl CoverageGrid {
    pub fn new(ranges: Vec<(f64, f64)>, bins: Vec<usize>) -> Result<Self> {
        if ranges.len() != bins.len() || ranges.is_empty() {
            return Err(Error::Config("coverage grid needs one bin count per range".into()));
        }
        if bins.contains(&0) {
            return Err(Error::Config("coverage grid bins must be at least 1".into()));
        }
        if ranges
            .iter()
            .any(|&(lo, hi)| !(lo.is_finite() && hi.is_finite() && hi > lo))
        {
            return Err(Error::Config("coverage grid ranges must be finite and nonempty".into()));
        }
        Ok(Self { ranges, bins })
    }

    /// Same number of bins along every dimension.
    pub fn uniform(ranges: Vec<(f64, f64)>, bins: usize) -> Result<Self> {
        let n = ranges.len();
        Self::new(ranges, vec![bins; n])
    }

    pub fn total_cells(&self) -> usize {
        self.bins.iter().product()
    }

    /// Out-of-range values land in the edge cells.
    pub fn cell(&self, state: &[f64]) -> usize {
        let mut index = 0;
        for ((&(lo, hi), &bins), &v) in self.ranges.iter().zip(&self.bins).zip(state) {
            let t = ((v - lo) / (hi - lo) * bins as f64).floor();
            let b = if t.is_nan() { 0 } else { t.clamp(0.0, (bins - 1) as f64) as usize };
            index = index * bins + b;
        }
        index
    }
}

/// Fraction of grid cells containing at least one state.
pub fn coverage(states: &[Vec<f64>], grid: &CoverageGrid) -> f64 {
    let cells: HashSet<usize> = states.iter().map(|s| grid.cell(s)).collect();
    cells.len() as f64 / grid.total_cells() as f64
}

/// Element `i` is the mean of `rewards[max(0, i+1-window)..=i]`.
pub fn running_average(rewards: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    // Summed per window so values do not depend on accumulated rounding.
    (0..rewards.len())
        .map(|i| {
            let n = (i + 1).min(window);
            rewards[i + 1 - n..=i].iter().sum::<f64>() / n as f64
        })
        .collect()
}

/// `%.9g`-style formatting: 9 significant digits, trailing zeros trimmed.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if !(-4..9).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (8 - exp) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn rewards_csv(stats: &[EpisodeStats], window: usize) -> String {
    let totals: Vec<f64> = stats.iter().map(|s| s.total_reward).collect();
    let avg = running_average(&totals, window);
    let mut out = String::from("episode,total_reward,steps,exploration_fraction,running_avg\n");
    for (s, a) in stats.iter().zip(avg) {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            s.episode,
            format_float(s.total_reward),
            s.steps,
            format_float(s.exploration_fraction),
            format_float(a)
        );
    }
    out
}

pub fn states_csv(states: &[Vec<f64>]) -> String {
    let dim = states.first().map_or(0, Vec::len);
    let mut out = String::from("step");
    for d in 0..dim {
        let _ = write!(out, ",dim{d}");
    }
    out.push('\n');
    for (i, s) in states.iter().enumerate() {
        let _ = write!(out, "{i}");
        for v in s {
            out.push(',');
            out.push_str(&format_float(*v));
        }
        out.push('\n');
    }
    out
}

/// Per-episode mean, min, and max total reward across runs.
pub fn summary_csv(per_seed_rewards: &[Vec<f64>]) -> String {
    let episodes = per_seed_rewards.iter().map(Vec::len).min().unwrap_or(0);
    let mut out = String::from("episode,mean_reward,min_reward,max_reward\n");
    for e in 0..episodes {
        let values: Vec<f64> = per_seed_rewards.iter().map(|r| r[e]).collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let _ = writeln!(
            out,
            "{e},{},{},{}",
            format_float(mean),
            format_float(min),
            format_float(max)
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub episodes: Vec<EpisodeStats>,
    /// Every state arrived at, in order.
    pub states: Vec<Vec<f64>>,
    pub coverage: f64,
    /// Exploration steps that fell back to uniform actions.
    pub fallbacks: usize,
}

impl SeedRun {
    pub fn rewards(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.total_reward).collect()
    }
}

/// Executes one seed of `config` entirely in memory.
pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    let mut config = config.clone();
    config.validate()?;
    let mut rng = seeded_rng(seed);
    let mut env = config.env.build()?;
    let grid = CoverageGrid::uniform(env.bounds(), config.coverage_bins)?;

    let (episodes, states, fallbacks) = match (config.kind, config.agent) {
        (ExperimentKind::ExplorationOnly, _) => {
            let mut dynamics = DynamicsPredictor::new(
                env.state_dim(),
                env.n_actions(),
                config.dqn.dynamics_hidden,
                &mut rng,
            )?
            .with_optimizer(config.dqn.optimizer);
            if config.dqn.normalize_dynamics {
                dynamics = dynamics.with_scaler(StateScaler::from_bounds(&env.bounds())?)?;
            }
            let settings = ExploreSettings {
                lr_dynamics: config.dqn.lr_dynamics,
                batch_dynamics: config.dqn.batch_dynamics,
                replay_capacity: config.dqn.replay_capacity,
            };
            let run = exploration_only_run(
                env.as_mut(),
                &config.strategy,
                &mut dynamics,
                config.episodes,
                &settings,
                &mut rng,
            )?;
            (run.episodes, run.states, run.fallbacks)
        }
        (ExperimentKind::Training, AgentKind::Dqn) => {
            let mut agent = DqnAgent::new(config.dqn.clone(), config.strategy.clone(), env.as_ref(), &mut rng)?;
            let mut states = Vec::new();
            let stats = agent.train_observed(env.as_mut(), config.episodes, &mut rng, |s| {
                states.push(s.to_vec())
            })?;
            (stats, states, 0)
        }
        (ExperimentKind::Training, AgentKind::Reinforce) => {
            let mut agent = ReinforceAgent::new(
                config.reinforce.clone(),
                env.state_dim(),
                env.n_actions(),
                &mut rng,
            )?;
            let mut states = Vec::new();
            let stats = agent.train_observed(env.as_mut(), config.episodes, &mut rng, |s| {
                states.push(s.to_vec())
            })?;
            (stats, states, 0)
        }
    };
    let coverage = coverage(&states, &grid);
    Ok(SeedRun {
        seed,
        episodes,
        states,
        coverage,
        fallbacks,
    })
}

#[derive(Debug)]
pub struct ExperimentReport {
    /// In config seed order.
    pub runs: Vec<(u64, Result<SeedRun>)>,
}

impl ExperimentReport {
    pub fn succeeded(&self) -> impl Iterator<Item = &SeedRun> {
        self.runs.iter().filter_map(|(_, r)| r.as_ref().ok())
    }

    pub fn all_failed(&self) -> bool {
        self.runs.iter().all(|(_, r)| r.is_err())
    }
}

/// Worker count: `SPARSE_EXPLORER_THREADS` if set and positive, else all cores.
pub fn worker_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(0)
}

/// Runs every seed (concurrently), writes the per-seed CSVs and the summary.
///
/// A seed that fails is recorded in the report; the others still run.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut config = config.clone();
    config.validate()?;
    fs::create_dir_all(&config.out)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .map_err(|e| Error::Io(format!("thread pool: {e}")))?;
    let out = config.out.clone();
    let runs: Vec<(u64, Result<SeedRun>)> = pool.install(|| {
        config
            .seeds
            .par_iter()
            .map(|&seed| {
                let result = run_seed(&config, seed).and_then(|run| {
                    write_seed_files(&out, &run, config.running_avg_window)?;
                    Ok(run)
                });
                (seed, result)
            })
            .collect()
    });

    let rewards: Vec<Vec<f64>> = runs
        .iter()
        .filter_map(|(_, r)| r.as_ref().ok().map(SeedRun::rewards))
        .collect();
    fs::write(out.join("summary.csv"), summary_csv(&rewards))?;
    Ok(ExperimentReport { runs })
}

fn write_seed_files(dir: &Path, run: &SeedRun, window: usize) -> Result<()> {
    fs::write(
        dir.join(format!("rewards_{}.csv", run.seed)),
        rewards_csv(&run.episodes, window),
    )?;
    fs::write(dir.join(format!("states_{}.csv", run.seed)), states_csv(&run.states))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn running_average_hand_cases() {
        assert_eq!(running_average(&[1.0, 2.0, 3.0], 2), vec![1.0, 1.5, 2.5]);
        let r = [3.0, -1.0, 4.0, 1.5];
        assert_eq!(running_average(&r, 1), r.to_vec());
        assert_eq!(running_average(&r, 10), vec![3.0, 1.0, 2.0, 1.875]);
    }

    #[test]
    fn coverage_hand_cases() {
        let grid = CoverageGrid::uniform(vec![(0.0, 1.0), (0.0, 1.0)], 2).unwrap();
        assert_eq!(coverage(&[vec![0.1, 0.9]], &grid), 0.25);
        let all = vec![vec![0.1, 0.1], vec![0.1, 0.9], vec![0.9, 0.1], vec![0.9, 0.9]];
        assert_eq!(coverage(&all, &grid), 1.0);
        // Clamped to the edge cells.
        assert_eq!(coverage(&[vec![-5.0, 7.0], vec![0.2, 0.99]], &grid), 0.25);
    }

    #[test]
    fn grid_validation() {
        assert!(CoverageGrid::uniform(vec![(0.0, 1.0)], 0).is_err());
        assert!(CoverageGrid::uniform(vec![(1.0, 1.0)], 3).is_err());
    }

    #[test]
    fn float_formatting() {
        assert_eq!(format_float(-200.0), "-200");
        assert_eq!(format_float(0.5), "0.5");
        assert_eq!(format_float(1.0 / 3.0), "0.333333333");
        assert_eq!(format_float(-0.000823),"-0.000823");
        assert_eq!(format_float(1.5e-7), "1.5e-07");
        assert_eq!(format_float(123456789012.0), "1.23456789e+11");
        assert_eq!(format_float(-199.98), "-199.98");
        assert_eq!(format_float(0.0), "0");
    }

    #[test]
    fn csv_headers() {
        let stats = [EpisodeStats {
            episode: 0,
            total_reward: -200.0,
            steps: 200,
            exploration_fraction: 1.0,
            reached_goal: false,
        }];
        assert_eq!(
            rewards_csv(&stats, 50),
            "episode,total_reward,steps,exploration_fraction,running_avg\n0,-200,200,1,-200\n"
        );
        assert_eq!(states_csv(&[vec![-0.5, 0.25]]), "step,dim0,dim1\n0,-0.5,0.25\n");
        assert_eq!(
            summary_csv(&[vec![1.0, 2.0], vec![3.0, -2.0]]),
            "episode,mean_reward,min_reward,max_reward\n0,2,1,3\n1,0,-2,2\n"
        );
    }
}
