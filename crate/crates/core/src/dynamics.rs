//! The learned next-state predictor used for one-step planning.

use rand::Rng;

use crate::nn::{Activation, LayerSpec, Network, Optimizer, Targets};
use crate::replay::Transition;
use crate::{Error, Result};

/// Affine map of each state dimension from `[low, high]` onto `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateScaler {
    center: Vec<f64>,
    half_range: Vec<f64>,
}

impl StateScaler {
    pub fn from_bounds(bounds: &[(f64, f64)]) -> Result<Self> {
        let mut center = Vec::with_capacity(bounds.len());
        let mut half_range = Vec::with_capacity(bounds.len());
        for &(lo, hi) in bounds {
            if !(hi > lo && lo.is_finite() && hi.is_finite()) {
                return Err(Error::Config(format!("invalid state bounds ({lo}, {hi})")));
            }
            center.push(0.5 * (lo + hi));
            half_range.push(0.5 * (hi - lo));
        }
        Ok(Self { center, half_range })
    }

    pub fn scale(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .zip(self.center.iter().zip(&self.half_range))
            .map(|(v, (c, h))| (v - c) / h)
            .collect()
    }

    pub fn unscale(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.center.iter().zip(&self.half_range))
            .map(|(v, (c, h))| v * h + c)
            .collect()
    }
}

/// `s` followed by a one-hot encoding of `a`.
pub fn encode_input(s: &[f64], a: usize, n_actions: usize) -> Result<Vec<f64>> {
    if a >= n_actions {
        return Err(Error::Usage(format!(
            "action {a} out of range for {n_actions} actions"
        )));
    }
    let mut x = Vec::with_capacity(s.len() + n_actions);
    x.extend_from_slice(s);
    x.extend((0..n_actions).map(|i| if i == a { 1.0 } else { 0.0 }));
    Ok(x)
}

/// `D(s, a)`: predicts the absolute next state from a state and an action.
#[derive(Debug, Clone)]
pub struct DynamicsPredictor {
    net: Network,
    state_dim: usize,
    n_actions: usize,
    scaler: Option<StateScaler>,
}

impl DynamicsPredictor {
    /// Two hidden ReLU layers of `hidden` units, Glorot-uniform weights.
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        n_actions: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let specs = [
            LayerSpec::new(state_dim + n_actions, hidden, Activation::Relu),
            LayerSpec::new(hidden, hidden, Activation::Relu),
            LayerSpec::new(hidden, state_dim, Activation::Identity),
        ];
        Self::from_network(Network::init(&specs, rng)?, state_dim, n_actions)
    }

    pub fn from_network(net: Network, state_dim: usize, n_actions: usize) -> Result<Self> {
        if net.input_dim() != Some(state_dim + n_actions) || net.output_dim() != Some(state_dim) {
            return Err(Error::Config(format!(
                "dynamics network must map {} inputs to {state_dim} outputs",
                state_dim + n_actions
            )));
        }
        Ok(Self {
            net,
            state_dim,
            n_actions,
            scaler: None,
        })
    }

    /// Trains and predicts in scaled coordinates; predictions are returned unscaled.
    pub fn with_scaler(mut self, scaler: StateScaler) -> Result<Self> {
        if scaler.center.len() != self.state_dim {
            return Err(Error::Config("scaler dimension does not match state".into()));
        }
        self.scaler = Some(scaler);
        Ok(self)
    }

    pub fn with_optimizer(mut self, optimizer: Optimizer) -> Self {
        self.net = self.net.with_optimizer(optimizer);
        self
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn input(&self, s: &[f64], a: usize) -> Result<Vec<f64>> {
        if s.len() != self.state_dim {
            return Err(Error::Usage(format!(
                "expected state of length {}, got {}",
                self.state_dim,
                s.len()
            )));
        }
        match &self.scaler {
            Some(sc) => encode_input(&sc.scale(s), a, self.n_actions),
            None => encode_input(s, a, self.n_actions),
        }
    }

    pub fn predict_next(&self, s: &[f64], a: usize) -> Result<Vec<f64>> {
        let y = self.net.forward(&self.input(s, a)?)?;
        Ok(match &self.scaler {
            Some(sc) => sc.unscale(&y),
            None => y,
        })
    }

    /// One optimizer step on the mean squared next-state error; returns the
    /// pre-update loss (in scaled units when a scaler is set).
    pub fn train(&mut self, batch: &[&Transition], lr: f64) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Usage("dynamics batch is empty".into()));
        }
        let mut inputs = Vec::with_capacity(batch.len());
        let mut targets = Vec::with_capacity(batch.len());
        for t in batch {
            inputs.push(self.input(&t.state, t.action)?);
            targets.push(match &self.scaler {
                Some(sc) => sc.scale(&t.next_state),
                None => t.next_state.clone(),
            });
        }
        self.net.train_batch(&inputs, Targets::Regression(&targets), lr)
    }
}
