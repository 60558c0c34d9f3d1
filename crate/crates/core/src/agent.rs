//! The behavioral contract shared by every bandit agent.
//!
//! Agents follow a batched protocol: `select` may be called many times
//! against frozen posteriors, `observe` only buffers, and `end_batch` folds
//! buffered observations into the posteriors.

use crate::domain::{ArmId, Context, DecisionRecord, Observation};
use crate::error::{Error, Result};

/// Explore/exploit strategy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Exploration {
    Thompson,
    /// Upper confidence bound with the given width multiplier.
    Ucb {
        width: f64,
    },
    EpsilonGreedy {
        epsilon: f64,
    },
}

impl Exploration {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Exploration::Thompson => Ok(()),
            Exploration::Ucb { width } if width.is_finite() && width >= 0.0 => Ok(()),
            Exploration::Ucb { width } => Err(Error::Config(format!(
                "UCB width must be finite and >= 0, got {width}"
            ))),
            Exploration::EpsilonGreedy { epsilon } if (0.0..=1.0).contains(&epsilon) => Ok(()),
            Exploration::EpsilonGreedy { epsilon } => Err(Error::Config(format!(
                "epsilon must lie in [0, 1], got {epsilon}"
            ))),
        }
    }

    pub fn short_name(&self) -> &'static str {
        match self {
            Exploration::Thompson => "TS",
            Exploration::Ucb { .. } => "UCB",
            Exploration::EpsilonGreedy { .. } => "EG",
        }
    }
}

/// A candidate arm together with the per-arm scores the agent ranked.
///
/// For Thompson sampling the scores are the sampled rewards, for UCB the
/// optimistic bounds, for epsilon-greedy the point estimates. Under an
/// epsilon-greedy exploration draw `arm` need not be the argmax of `scores`.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub arm: ArmId,
    pub scores: Vec<f64>,
}

/// Outcome of one `Agent::select` call.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub arm: ArmId,
    /// Present for hybrid agents only.
    pub record: Option<DecisionRecord>,
}

pub trait Agent: Send {
    fn name(&self) -> &str;

    fn arm_count(&self) -> usize;

    /// Chooses an arm for timestep `t` (1-based).
    fn select(&mut self, t: usize, context: &Context) -> Result<Step>;

    /// Buffers an observation until the next batch boundary.
    fn observe(&mut self, observation: Observation) -> Result<()>;

    /// Batch boundary after timestep `t`.
    fn end_batch(&mut self, t: usize) -> Result<()>;

    /// Flattened posterior parameters, for snapshot comparisons.
    fn posterior_snapshot(&self) -> Vec<f64>;

    /// Current hybrid threshold, if the agent has one.
    fn threshold(&self) -> Option<f64> {
        None
    }
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}
