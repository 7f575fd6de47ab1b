//! Partially observed 2D particle world with predator-prey and cooperative
//! navigation scenarios.
//!
//! Agents are damped point masses driven by five discrete moves inside a
//! square world. Each agent only sees teammates and targets within its
//! observation radius, packed into a fixed number of slots so the
//! observation length never depends on how many agents exist.

mod config;
pub mod export;
mod observation;
mod world;

pub use config::{ScenarioConfig, ScenarioKind};
pub use observation::{observe, observe_all, Observation};
pub use world::{
    compute_reward, detect_events, global_state, prey_policy, reset, step, Action, Events,
    StepResult, Vec2, WorldState,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("action index {0} out of range (0..5)")]
    Action(usize),
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("invalid scenario: {0}")]
    Scenario(String),
}
