//! Rollout storage, advantage estimation, losses and the PPO update.
//!
//! Every objective here is written in "maximize" form and negated only when
//! handed to the optimizer, so [`LossReport`] values read the same way the
//! objectives are defined.

mod gae;
mod losses;
mod update;

pub use gae::{batch_advantages, gae, normalize};
pub use losses::{
    causal_effects, comm_loss, critic_loss, entropy, expected_causal_effect, expected_causal_effect_value,
    gamma_matrix, ppo_actor_loss,
};
pub use update::{update_step, Learner};

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::comm::{CommDecision, CommError, Message};
use crate::networks::NetError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub lambda_m: f64,
    pub lambda_e: f64,
    pub delta: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub max_grad_norm: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            lambda_m: 0.01,
            lambda_e: 0.01,
            delta: 0.1,
            actor_lr: 7e-4,
            critic_lr: 7e-4,
            epochs: 5,
            minibatches: 2,
            max_grad_norm: 0.5,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(format!("gamma must be in (0, 1], got {}", self.gamma));
        }
        if !(self.gae_lambda >= 0.0 && self.gae_lambda <= 1.0) {
            return Err(format!("gae_lambda must be in [0, 1], got {}", self.gae_lambda));
        }
        if self.clip_eps <= 0.0 || self.clip_eps.is_nan() {
            return Err(format!("clip_eps must be positive, got {}", self.clip_eps));
        }
        if self.epochs == 0 || self.minibatches == 0 {
            return Err("epochs and minibatches must be at least 1".into());
        }
        if self.actor_lr < 0.0 || self.critic_lr < 0.0 || self.max_grad_norm <= 0.0 {
            return Err("learning rates must be non-negative and max_grad_norm positive".into());
        }
        Ok(())
    }
}

/// One agent at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSample {
    pub obs: Vec<f64>,
    /// Buffer contents the action was taken with.
    pub buffer: Vec<Message>,
    /// Hidden state carried into this step.
    pub hidden: Vec<f64>,
    pub action: usize,
    pub log_prob: f64,
    pub probs: Vec<f64>,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
    pub global_state: Vec<f64>,
}

/// A communication decision plus the hidden state each observed teammate
/// carried into the step, aligned with `decision.neighbors`.
#[derive(Debug, Clone, PartialEq)]
pub struct CommSample {
    pub decision: CommDecision,
    pub neighbor_hidden: Vec<Vec<f64>>,
}

/// Consecutive steps of one environment, `steps[t][agent]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Vec<AgentSample>>,
    /// Value of the state after the last step, per agent; zero when the
    /// trajectory ends an episode.
    pub bootstrap: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBatch {
    pub trajectories: Vec<Trajectory>,
    pub comm: Vec<CommSample>,
    /// Inbox size used during collection; needed to replay deliveries.
    pub buffer_capacity: usize,
}

impl RolloutBatch {
    /// Samples in trajectory, step, agent order.
    pub fn samples(&self) -> impl Iterator<Item = &AgentSample> {
        self.trajectories.iter().flat_map(|t| t.steps.iter().flatten())
    }

    pub fn len(&self) -> usize {
        self.trajectories.iter().map(|t| t.steps.iter().map(Vec::len).sum::<usize>()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-update averages, in maximize convention except `critic`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossReport {
    pub actor_ppo: f64,
    pub comm_expected_effect: f64,
    pub comm_silence: f64,
    pub entropy: f64,
    pub critic: f64,
    pub total_actor: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LearnError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Comm(#[from] CommError),
    #[error("empty rollout batch")]
    EmptyBatch,
    #[error("invalid hyperparameters: {0}")]
    Hyper(String),
    #[error("non-finite {what} in epoch {epoch}, minibatch {minibatch}: {report:?}")]
    NonFinite {
        what: &'static str,
        epoch: usize,
        minibatch: usize,
        report: LossReport,
    },
}
