//! Training loops: DQN with pluggable exploration, and REINFORCE.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, weighted::WeightedIndex};

use crate::dynamics::{DynamicsPredictor, StateScaler};
use crate::envs::Environment;
use crate::explore::{pick_exploratory_action, ExplorationStrategy};
use crate::nn::{argmax, softmax, Activation, LayerSpec, Network, Optimizer, Targets, WeightInit};
use crate::replay::{ReplayMemory, Transition};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStats {
    pub episode: usize,
    pub total_reward: f64,
    pub steps: usize,
    /// Fraction of this episode's actions chosen by the exploration branch.
    pub exploration_fraction: f64,
    pub reached_goal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DqnConfig {
    pub epsilon_start: f64,
    pub epsilon_min: f64,
    /// Multiplicative decay applied once per environment step.
    pub epsilon_decay: f64,
    pub gamma: f64,
    pub lr_q: f64,
    pub lr_dynamics: f64,
    /// Copy Q into the target network every this many environment steps.
    pub target_sync: u64,
    /// Steps of forced exploration before Q updates begin.
    pub warmup_steps: u64,
    pub batch_q: usize,
    pub batch_dynamics: usize,
    pub replay_capacity: usize,
    pub q_hidden: usize,
    pub dynamics_hidden: usize,
    pub normalize_dynamics: bool,
    /// TD errors are clipped to `[-error_clip, error_clip]`.
    pub error_clip: f64,
    /// Update rule for the Q and dynamics networks.
    pub optimizer: Optimizer,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            epsilon_start: 1.0,
            epsilon_min: 0.01,
            epsilon_decay: 0.9995,
            gamma: 0.99,
            lr_q: 0.05,
            lr_dynamics: 0.02,
            target_sync: 8,
            warmup_steps: 10_000,
            batch_q: 16,
            batch_dynamics: 64,
            replay_capacity: 100_000,
            q_hidden: 48,
            dynamics_hidden: 24,
            normalize_dynamics: true,
            error_clip: 1.0,
            optimizer: Optimizer::adam(),
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be in (0, 1], got {v}")))
            }
        };
        unit("epsilon_start", self.epsilon_start)?;
        unit("epsilon_min", self.epsilon_min)?;
        unit("epsilon_decay", self.epsilon_decay)?;
        unit("lr_q", self.lr_q)?;
        unit("lr_dynamics", self.lr_dynamics)?;
        if self.epsilon_min > self.epsilon_start {
            return Err(Error::Config("epsilon_min exceeds epsilon_start".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must be in [0, 1), got {}", self.gamma)));
        }
        if self.target_sync == 0
            || self.batch_q == 0
            || self.batch_dynamics == 0
            || self.replay_capacity == 0
            || self.q_hidden == 0
            || self.dynamics_hidden == 0
        {
            return Err(Error::Config("counts and sizes must be positive".into()));
        }
        if self.error_clip.is_nan() || self.error_clip <= 0.0 {
            return Err(Error::Config("error_clip must be positive".into()));
        }
        Ok(())
    }
}

/// One regression pair for the Q-network.
#[derive(Debug, Clone, PartialEq)]
pub struct BellmanTarget {
    pub input: Vec<f64>,
    /// Q's own prediction with only the taken action's entry replaced.
    pub target: Vec<f64>,
    /// Unclipped `r + γ max_a' Q̂(s', a')`, or `r` for terminal transitions.
    pub y: f64,
}

/// Builds clipped Q-learning targets: the taken action's entry becomes
/// `Q(s,a) + clip(y - Q(s,a))`, every other entry keeps Q's prediction.
pub fn bellman_targets(
    q: &Network,
    q_target: &Network,
    batch: &[&Transition],
    gamma: f64,
    error_clip: f64,
) -> Result<Vec<BellmanTarget>> {
    if batch.is_empty() {
        return Err(Error::Usage("bellman batch is empty".into()));
    }
    batch
        .iter()
        .map(|t| {
            let y = if t.done {
                t.reward
            } else {
                let next = q_target.forward(&t.next_state)?;
                t.reward + gamma * next.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            };
            let mut target = q.forward(&t.state)?;
            let current = *target.get(t.action).ok_or_else(|| {
                Error::Usage(format!("action {} out of range", t.action))
            })?;
            target[t.action] = current + (y - current).clamp(-error_clip, error_clip);
            Ok(BellmanTarget {
                input: t.state.clone(),
                target,
                y,
            })
        })
        .collect()
}

/// DQN whose exploratory actions come from an [`ExplorationStrategy`].
#[derive(Debug, Clone)]
pub struct DqnAgent {
    config: DqnConfig,
    strategy: ExplorationStrategy,
    n_actions: usize,
    q: Network,
    q_target: Network,
    dynamics: DynamicsPredictor,
    memory: ReplayMemory,
    epsilon: f64,
    step_counter: u64,
}

impl DqnAgent {
    pub fn new<R: Rng + ?Sized>(
        config: DqnConfig,
        strategy: ExplorationStrategy,
        env: &dyn Environment,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        strategy.validate()?;
        let state_dim = env.state_dim();
        let n_actions = env.n_actions();
        let q = Network::init(
            &[
                LayerSpec::new(state_dim, config.q_hidden, Activation::Relu),
                LayerSpec::new(config.q_hidden, n_actions, Activation::Identity),
            ],
            rng,
        )?
        .with_optimizer(config.optimizer);
        let q_target = q.clone();
        let mut dynamics = DynamicsPredictor::new(state_dim, n_actions, config.dynamics_hidden, rng)?
            .with_optimizer(config.optimizer);
        if config.normalize_dynamics {
            dynamics = dynamics.with_scaler(StateScaler::from_bounds(&env.bounds())?)?;
        }
        Ok(Self {
            memory: ReplayMemory::new(config.replay_capacity)?,
            epsilon: config.epsilon_start,
            config,
            strategy,
            n_actions,
            q,
            q_target,
            dynamics,
            step_counter: 0,
        })
    }

    pub fn config(&self) -> &DqnConfig {
        &self.config
    }

    pub fn strategy(&self) -> &ExplorationStrategy {
        &self.strategy
    }

    pub fn q(&self) -> &Network {
        &self.q
    }

    pub fn q_mut(&mut self) -> &mut Network {
        &mut self.q
    }

    pub fn q_target(&self) -> &Network {
        &self.q_target
    }

    pub fn dynamics(&self) -> &DynamicsPredictor {
        &self.dynamics
    }

    pub fn memory(&self) -> &ReplayMemory {
        &self.memory
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn set_epsilon(&mut self, epsilon: f64) {
        self.epsilon = epsilon.clamp(0.0, 1.0);
    }

    pub fn step_counter(&self) -> u64 {
        self.step_counter
    }

    pub fn in_warmup(&self) -> bool {
        self.step_counter < self.config.warmup_steps
    }

    /// ε-greedy: returns the action and whether the exploration branch chose it.
    pub fn select_action<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<(usize, bool)> {
        let explore = self.in_warmup() || rng.random::<f64>() < self.epsilon;
        if explore {
            let pick = pick_exploratory_action(
                &self.strategy,
                state,
                &self.dynamics,
                &self.memory,
                self.n_actions,
                rng,
            )?;
            Ok((pick.action, true))
        } else {
            Ok((argmax(&self.q.forward(state)?), false))
        }
    }

    /// Stores `transition` and performs this environment step's updates.
    pub fn train_step<R: Rng + ?Sized>(&mut self, transition: Transition, rng: &mut R) -> Result<()> {
        let q_enabled = !self.in_warmup();
        self.memory.push(transition)?;
        self.step_counter += 1;

        if q_enabled && self.memory.len() >= self.config.batch_q {
            let batch = self.memory.sample_uniform(self.config.batch_q, rng)?;
            let targets = bellman_targets(
                &self.q,
                &self.q_target,
                &batch,
                self.config.gamma,
                self.config.error_clip,
            )?;
            let (inputs, outputs): (Vec<_>, Vec<_>) =
                targets.into_iter().map(|t| (t.input, t.target)).unzip();
            self.q
                .train_batch(&inputs, Targets::Regression(&outputs), self.config.lr_q)?;
        }
        if self.strategy.uses_model() && self.memory.len() >= self.config.batch_dynamics {
            let batch = self.memory.sample_uniform(self.config.batch_dynamics, rng)?;
            self.dynamics.train(&batch, self.config.lr_dynamics)?;
        }
        if self.step_counter.is_multiple_of(self.config.target_sync) {
            self.q_target.copy_parameters_from(&self.q)?;
        }
        self.epsilon = (self.epsilon * self.config.epsilon_decay).max(self.config.epsilon_min);
        Ok(())
    }

    pub fn train<R: Rng>(
        &mut self,
        env: &mut dyn Environment,
        episodes: usize,
        rng: &mut R,
    ) -> Result<Vec<EpisodeStats>> {
        self.train_observed(env, episodes, rng, |_| {})
    }

    /// Like [`DqnAgent::train`], reporting every visited state to `visit`.
    pub fn train_observed<R: Rng>(
        &mut self,
        env: &mut dyn Environment,
        episodes: usize,
        rng: &mut R,
        mut visit: impl FnMut(&[f64]),
    ) -> Result<Vec<EpisodeStats>> {
        let mut stats = Vec::with_capacity(episodes);
        for episode in 0..episodes {
            let mut state = env.reset(rng as &mut dyn RngCore);
            let mut total = 0.0;
            let mut steps = 0;
            let mut explored = 0;
            loop {
                let (action, was_exploration) = self.select_action(&state, rng)?;
                let out = env.step(action)?;
                visit(&out.state);
                total += out.reward;
                steps += 1;
                explored += was_exploration as usize;
                let next = out.state.clone();
                self.train_step(
                    Transition {
                        state,
                        action,
                        reward: out.reward,
                        next_state: out.state,
                        done: out.done,
                    },
                    rng,
                )?;
                state = next;
                if out.done {
                    stats.push(EpisodeStats {
                        episode,
                        total_reward: total,
                        steps,
                        exploration_fraction: explored as f64 / steps as f64,
                        reached_goal: !out.truncated,
                    });
                    break;
                }
            }
        }
        Ok(stats)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReinforceConfig {
    pub lr: f64,
    pub gamma: f64,
    pub hidden: usize,
    /// Standardize returns-to-go within each episode before the update.
    pub normalize_returns: bool,
    pub optimizer: Optimizer,
}

impl Default for ReinforceConfig {
    fn default() -> Self {
        Self {
            lr: 0.02,
            gamma: 0.995,
            hidden: 10,
            normalize_returns: true,
            optimizer: Optimizer::adam(),
        }
    }
}

impl ReinforceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr <= 1.0) {
            return Err(Error::Config(format!("policy lr must be in (0, 1], got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("policy gamma must be in [0, 1), got {}", self.gamma)));
        }
        if self.hidden == 0 {
            return Err(Error::Config("policy hidden size must be positive".into()));
        }
        Ok(())
    }
}

/// `G_t = r_t + γ G_{t+1}` for every step of an episode.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (g, r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *g = acc;
    }
    out
}

/// Zero mean, unit variance; left unchanged when the spread is zero.
pub fn standardize(values: &mut [f64]) {
    if values.len() < 2 {
        return;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std > 0.0 {
        values.iter_mut().for_each(|v| *v = (*v - mean) / std);
    }
}

/// Monte Carlo policy gradient with a softmax policy.
#[derive(Debug, Clone)]
pub struct ReinforceAgent {
    config: ReinforceConfig,
    policy: Network,
}

impl ReinforceAgent {
    /// `tanh` hidden layer and linear logits, weights `N(0, 0.3)`, biases 0.1.
    pub fn new<R: Rng + ?Sized>(
        config: ReinforceConfig,
        state_dim: usize,
        n_actions: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let init = WeightInit::Normal { mean: 0.0, std: 0.3 };
        let policy = Network::init(
            &[
                LayerSpec::new(state_dim, config.hidden, Activation::Tanh)
                    .with_weight_init(init)
                    .with_bias(0.1),
                LayerSpec::new(config.hidden, n_actions, Activation::Identity)
                    .with_weight_init(init)
                    .with_bias(0.1),
            ],
            rng,
        )?
        .with_optimizer(config.optimizer);
        Ok(Self { config, policy })
    }

    pub fn policy(&self) -> &Network {
        &self.policy
    }

    pub fn action_probabilities(&self, state: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.policy.forward(state)?))
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<usize> {
        let probs = self.action_probabilities(state)?;
        let dist = WeightedIndex::new(&probs)
            .map_err(|e| Error::Numerical(format!("policy probabilities: {e}")))?;
        Ok(dist.sample(rng))
    }

    /// One gradient step raising `Σ_t G_t ln π(a_t | s_t)`; returns the weights used.
    pub fn update(&mut self, states: &[Vec<f64>], actions: &[usize], rewards: &[f64]) -> Result<Vec<f64>> {
        let mut returns = discounted_returns(rewards, self.config.gamma);
        if self.config.normalize_returns {
            standardize(&mut returns);
        }
        let targets: Vec<(usize, f64)> = actions.iter().copied().zip(returns.iter().copied()).collect();
        self.policy
            .train_batch(states, Targets::WeightedClasses(&targets), self.config.lr)?;
        Ok(returns)
    }

    pub fn train<R: Rng>(
        &mut self,
        env: &mut dyn Environment,
        episodes: usize,
        rng: &mut R,
    ) -> Result<Vec<EpisodeStats>> {
        self.train_observed(env, episodes, rng, |_| {})
    }

    pub fn train_observed<R: Rng>(
        &mut self,
        env: &mut dyn Environment,
        episodes: usize,
        rng: &mut R,
        mut visit: impl FnMut(&[f64]),
    ) -> Result<Vec<EpisodeStats>> {
        let mut stats = Vec::with_capacity(episodes);
        for episode in 0..episodes {
            let mut state = env.reset(rng as &mut dyn RngCore);
            let (mut states, mut actions, mut rewards) = (Vec::new(), Vec::new(), Vec::new());
            let reached_goal = loop {
                let action = self.sample_action(&state, rng)?;
                let out = env.step(action)?;
                visit(&out.state);
                states.push(std::mem::replace(&mut state, out.state));
                actions.push(action);
                rewards.push(out.reward);
                if out.done {
                    break !out.truncated;
                }
            };
            self.update(&states, &actions, &rewards)?;
            stats.push(EpisodeStats {
                episode,
                total_reward: rewards.iter().sum(),
                steps: rewards.len(),
                exploration_fraction: 0.0,
                reached_goal,
            });
        }
        Ok(stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{MountainCar, SparseCorridor};
    use crate::nn::Layer;
    use crate::seeded_rng;

    fn corridor_config() -> DqnConfig {
        DqnConfig {
            warmup_steps: 0,
            ..DqnConfig::default()
        }
    }

    fn transition(s: f64, a: usize, r: f64, s2: f64, done: bool) -> Transition {
        Transition {
            state: vec![s],
            action: a,
            reward: r,
            next_state: vec![s2],
            done,
        }
    }

    fn constant_net(values: &[f64]) -> Network {
        let n = values.len();
        Network::from_layers(vec![Layer::from_parts(
            1,
            n,
            Activation::Identity,
            vec![0.0; n],
            values.to_vec(),
        )
        .unwrap()])
        .unwrap()
    }

    #[test]
    fn greedy_picks_argmax() {
        let env = SparseCorridor::new(4).unwrap();
        let mut agent = DqnAgent::new(corridor_config(), ExplorationStrategy::Random, &env, &mut seeded_rng(0)).unwrap();
        *agent.q_mut() = Network::from_layers(vec![Layer::from_parts(
            1,
            3,
            Activation::Identity,
            vec![0.0; 3],
            vec![1.0, 3.0, 2.0],
        )
        .unwrap()])
        .unwrap();
        agent.set_epsilon(0.0);
        assert_eq!(agent.select_action(&[0.0], &mut seeded_rng(1)).unwrap(), (1, false));
    }

    #[test]
    fn full_epsilon_always_explores() {
        let env = SparseCorridor::new(4).unwrap();
        let agent = DqnAgent::new(corridor_config(), ExplorationStrategy::Random, &env, &mut seeded_rng(0)).unwrap();
        let mut rng = seeded_rng(2);
        for _ in 0..10_000 {
            assert!(agent.select_action(&[1.0], &mut rng).unwrap().1);
        }
    }

    #[test]
    fn terminal_and_myopic_targets() {
        let q = constant_net(&[0.0, 0.0]);
        let qt = constant_net(&[0.2, -0.4]);
        let t = transition(0.0, 0, -1.0, 1.0, true);
        let out = bellman_targets(&q, &qt, &[&t], 0.99, 1.0).unwrap();
        assert_eq!(out[0].y, -1.0);

        let t = transition(0.0, 1, 5.0, 1.0, false);
        let out = bellman_targets(&q, &qt, &[&t], 0.0, 1.0).unwrap();
        assert_eq!(out[0].y, 5.0);
        // TD error 5 is clipped to 1.
        assert_eq!(out[0].target, vec![0.0, 1.0]);
    }

    #[test]
    fn discounted_target_hand_value() {
        let q = constant_net(&[0.0, 0.0]);
        let qt = constant_net(&[0.2, -0.4]);
        let t = transition(0.0, 0, -1.0, 1.0, false);
        let out = bellman_targets(&q, &qt, &[&t], 0.99, 1.0).unwrap();
        assert!((out[0].y + 0.802).abs() < 1e-15);
        assert_eq!(out[0].target[0], out[0].y);
        assert_eq!(out[0].target[1], 0.0);
    }

    #[test]
    fn target_syncs_every_c_steps() {
        let env = SparseCorridor::new(4).unwrap();
        let config = DqnConfig {
            warmup_steps: 0,
            batch_q: 1,
            target_sync: 8,
            ..DqnConfig::default()
        };
        let mut agent = DqnAgent::new(config, ExplorationStrategy::Random, &env, &mut seeded_rng(0)).unwrap();
        let mut rng = seeded_rng(1);
        for i in 0..8 {
            let before = agent.q_target().clone();
            agent.train_step(transition(i as f64 % 4.0, 1, 0.0, 1.0, false), &mut rng).unwrap();
            if i < 7 {
                assert_eq!(agent.q_target(), &before);
                assert_ne!(agent.q().parameters_flat(), agent.q_target().parameters_flat());
            }
        }
        assert_eq!(agent.q().parameters_flat(), agent.q_target().parameters_flat());
    }

    #[test]
    fn epsilon_decay_closed_form() {
        let env = SparseCorridor::new(4).unwrap();
        let config = DqnConfig {
            batch_q: 10_000,
            batch_dynamics: 10_000,
            ..DqnConfig::default()
        };
        let mut agent = DqnAgent::new(config, ExplorationStrategy::Random, &env, &mut seeded_rng(0)).unwrap();
        let mut rng = seeded_rng(1);
        let mut last = agent.epsilon();
        for _ in 0..1000 {
            agent.train_step(transition(0.0, 0, 0.0, 1.0, false), &mut rng).unwrap();
            assert!(agent.epsilon() <= last);
            last = agent.epsilon();
        }
        let expected = 0.9995f64.powi(1000);
        assert!((agent.epsilon() - expected).abs() < 1e-12);
        assert!((expected - 0.6065).abs() < 1e-4);
    }

    #[test]
    fn small_memory_means_no_update() {
        let env = MountainCar::new();
        let config = DqnConfig {
            warmup_steps: 0,
            ..DqnConfig::default()
        };
        let mut agent = DqnAgent::new(config, ExplorationStrategy::model_based(50), &env, &mut seeded_rng(0)).unwrap();
        let q = agent.q().clone();
        let d = agent.dynamics().network().clone();
        let mut rng = seeded_rng(1);
        for _ in 0..15 {
            let t = Transition {
                state: vec![-0.5, 0.0],
                action: 1,
                reward: -1.0,
                next_state: vec![-0.5, 0.0],
                done: false,
            };
            agent.train_step(t, &mut rng).unwrap();
        }
        assert_eq!(agent.q().parameters_flat(), q.parameters_flat());
        assert_eq!(agent.dynamics().network(), &d);
    }

    #[test]
    fn zero_episodes_empty_stats() {
        let mut env = SparseCorridor::new(4).unwrap();
        let mut agent = DqnAgent::new(corridor_config(), ExplorationStrategy::Random, &env, &mut seeded_rng(0)).unwrap();
        assert!(agent.train(&mut env, 0, &mut seeded_rng(1)).unwrap().is_empty());
    }

    #[test]
    fn returns_to_go_hand_values() {
        let g = discounted_returns(&[-1.0, -1.0, -1.0], 0.995);
        let expected = [-2.985025, -1.995, -1.0];
        for (a, b) in g.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn standardize_guards() {
        let mut one = vec![-3.0];
        standardize(&mut one);
        assert_eq!(one, vec![-3.0]);
        let mut zeros = vec![0.0; 4];
        standardize(&mut zeros);
        assert_eq!(zeros, vec![0.0; 4]);
        let mut v = vec![1.0, 2.0, 3.0];
        standardize(&mut v);
        assert!(v.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn zero_reward_episode_leaves_policy() {
        let mut agent = ReinforceAgent::new(ReinforceConfig::default(), 1, 2, &mut seeded_rng(0)).unwrap();
        let before = agent.policy().clone();
        let states = vec![vec![0.0], vec![1.0], vec![2.0]];
        agent.update(&states, &[1, 0, 1], &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(agent.policy().parameters_flat(), before.parameters_flat());
    }

    #[test]
    fn policy_probabilities_sum_to_one() {
        let agent = ReinforceAgent::new(ReinforceConfig::default(), 2, 3, &mut seeded_rng(4)).unwrap();
        let p = agent.action_probabilities(&[-0.5, 0.01]).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = DqnConfig {
            gamma: 1.0,
            ..DqnConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = DqnConfig {
            lr_q: 0.0,
            ..DqnConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(DqnConfig::default().validate().is_ok());
    }
}
