//! Deep Q-learning with model-based exploration for sparse-reward control.
//!
//! The exploratory branch of ε-greedy is replaced by one-step planning: a
//! learned dynamics network predicts the successor of every action, a
//! multivariate Gaussian is fit to the most recently visited states, and the
//! action whose predicted successor has the lowest density is taken.
//!
//! Modules, bottom-up:
//!
//! - [`nn`]: dense MLPs with exact backpropagation and SGD or Adam.
//! - [`replay`]: ring-buffer replay memory.
//! - [`statemodel`]: Gaussian fit over recent states and kernel similarity.
//! - [`envs`]: Mountain Car and a sparse corridor.
//! - [`dynamics`]: the next-state predictor.
//! - [`explore`]: random, kernel-novelty, and model-based exploration.
//! - [`agent`]: the DQN training loop and the REINFORCE baseline.
//! - [`harness`]: experiment configs, metrics, CSV artifacts.

pub mod agent;
pub mod config;
pub mod dynamics;
pub mod envs;
pub mod error;
pub mod explore;
pub mod harness;
pub mod nn;
pub mod replay;
pub mod statemodel;

pub use error::{Error, Result};

/// The PRNG used everywhere a seed must reproduce a run bit-for-bit.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate's seeded PRNG.
pub fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
