//! Equilibria of a selection contest in which candidates from several groups
//! choose costly effort, a decision-maker observes a noisy score and selects
//! the top α fraction, and groups differ in effort cost and score noise.
//!
//! The crate covers the single-candidate best response and its dropout
//! threshold, the unconstrained and demographic-parity equilibria, summary
//! metrics with their large- and small-reward closed forms, best-response
//! and fictitious-play dynamics, and Monte Carlo oracles for validation.

pub mod best_response;
pub mod dynamics;
pub mod equilibrium;
pub mod error;
pub mod math;
pub mod metrics;
pub mod model;
pub mod oracle;

pub use error::{Error, Result};
pub use model::{DecisionMode, EffortDistribution, GameConfig, GroupModel, GroupParams};
