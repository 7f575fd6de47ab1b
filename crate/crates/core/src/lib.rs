//! Transformer-based email-style communication for multi-agent PPO.
//!
//! Agents in a partially observed particle world exchange messages only with
//! the teammates they can see. A received message can be forwarded together
//! with the receiver's own observation, so information travels along chains
//! beyond any single observation range. A Transformer encoder/decoder reads
//! the message buffer and picks the next receiver; the whole actor is shared
//! across agents and trained with a MAPPO backbone plus a causal-effect
//! communication loss.

pub mod autodiff;
pub mod env;
pub mod comm;
pub mod networks;
pub mod learning;
pub mod harness;

pub use env::{ScenarioConfig, ScenarioKind};
pub use harness::{Algo, Checkpoint, EvalMode, EvalOptions, EvalReport, HarnessError, RunConfig};
pub use learning::Hyperparams;
pub use networks::{Actor, ActorConfig, Critic, NetDims};
