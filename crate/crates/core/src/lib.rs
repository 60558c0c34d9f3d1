//! Selectively contextual bandits.
//!
//! A hybrid online-learning layer that, at every decision, compares the arm
//! proposed by a contextual logistic bandit with the arm proposed by a
//! context-free source (a Beta-Bernoulli bandit, a mean-over-history winner,
//! a fixed default, or a majority vote) and keeps the contextual arm only when
//! its predicted advantage clears a threshold `delta`.
//!
//! The crate also carries the evaluation machinery used to study such
//! policies: a classification-to-bandit environment with normalized cumulative
//! regret, a seeded multi-run experiment harness, and replay-based off-policy
//! evaluation against uniformly logged data.

pub mod agent;
pub mod domain;
pub mod env;
pub mod error;
pub mod glm;
pub mod harness;
pub mod metrics;
pub mod noncontextual;
pub mod replay;
pub mod rng;
pub mod scb;

pub use agent::{Agent, Exploration, Selection, Step};
pub use domain::{ArmId, Context, DecisionRecord, Observation, Provenance};
pub use error::{Error, ErrorCategory, Result};
pub use metrics::{noncontextual_fraction, normalized_cumulative_regret, regret_curve};
pub use rng::RngStream;
