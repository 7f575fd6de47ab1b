//! Email-style message passing between agents.
//!
//! Every agent owns a bounded FIFO inbox that is emptied at the start of each
//! environment step. During the communication phase an agent may send its
//! inbox plus its own observation to one observed teammate, who may in turn
//! forward the grown chain in the next round.

mod buffer;
mod phase;

pub use buffer::{begin_step, compose_outgoing, deliver, Message, MessageBuffer};
pub use phase::{
    replay_chain_log, run_comm_phase, ChainLog, ChainRecord, CommChoice, CommDecision, CommMode,
    CommPolicy, CommRequest, NeighborSnapshot, CHAIN_LOG_HEADER,
};

use thiserror::Error;

/// Default inbox size in messages.
pub const DEFAULT_BUFFER_CAPACITY: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CommError {
    #[error("payload length {got} does not match observation length {expected}")]
    PayloadLength { expected: usize, got: usize },
    #[error("agent {agent} chose invalid option {choice}")]
    InvalidChoice { agent: usize, choice: usize },
    #[error("{observations} observations but {buffers} buffers")]
    AgentCount { observations: usize, buffers: usize },
    #[error("policy answered {choices} of {requests} requests")]
    PolicyArity { requests: usize, choices: usize },
    #[error("communication policy failed: {0}")]
    Policy(String),
}
