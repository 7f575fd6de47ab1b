use std::io::{self, Write};

use super::buffer::{compose_outgoing, deliver, Message, MessageBuffer};
use super::CommError;
use crate::env::Observation;

/// Whether communication choices are sampled or taken greedily.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CommMode {
    Sample,
    Greedy,
}

/// One active agent asking for a communication choice in a round.
#[derive(Debug)]
pub struct CommRequest<'a> {
    pub agent: usize,
    pub round: usize,
    pub obs: &'a Observation,
    /// Buffer contents at the start of the round, oldest first.
    pub buffer: &'a [Message],
    /// Slot is occupied by an observed teammate.
    pub valid: Vec<bool>,
    /// Slot is occupied by a teammate that has not sent yet this step.
    pub fresh: Vec<bool>,
}

/// Choice `0` is "do not send"; choice `s + 1` sends to teammate slot `s`.
#[derive(Clone, Debug, PartialEq)]
pub struct CommChoice {
    pub choice: usize,
    /// Distribution the choice was drawn from, over `k_neighbors + 1`
    /// options.
    pub probs: Vec<f64>,
}

/// Anything that can pick receivers for a batch of agents in one round.
pub trait CommPolicy {
    fn decide(&mut self, requests: &[CommRequest<'_>]) -> Result<Vec<CommChoice>, CommError>;
}

/// State of a potential receiver when a sender decided.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborSnapshot {
    pub slot: usize,
    pub agent: usize,
    pub obs: Message,
    pub buffer: Vec<Message>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CommDecision {
    pub sender: usize,
    pub round: usize,
    pub choice: usize,
    pub target: Option<usize>,
    pub probs: Vec<f64>,
    pub sender_obs: Message,
    pub sender_buffer: Vec<Message>,
    /// One entry per observed teammate, in slot order. The receiver's hidden
    /// state is the one it carried into this step, looked up by agent id.
    pub neighbors: Vec<NeighborSnapshot>,
}

impl CommDecision {
    /// Occupancy of the teammate slots at decision time.
    pub fn valid_mask(&self) -> Vec<bool> {
        let k = self.probs.len() - 1;
        let mut mask = vec![false; k];
        for n in &self.neighbors {
            mask[n.slot] = true;
        }
        mask
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChainRecord {
    pub round: usize,
    pub sender: usize,
    pub target: usize,
}

/// Deliveries made during one step, in round then sender order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChainLog {
    pub records: Vec<ChainRecord>,
}

impl ChainLog {
    pub fn sends(&self) -> usize {
        self.records.len()
    }

    /// Hop counts of every chain, taken at the deliveries whose receiver does
    /// not forward in the following round.
    pub fn chain_lengths(&self) -> Vec<usize> {
        self.records
            .iter()
            .filter(|r| {
                !self
                    .records
                    .iter()
                    .any(|o| o.sender == r.target && o.round == r.round + 1)
            })
            .map(|r| r.round + 1)
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: &mut W, episode: usize, step: usize) -> io::Result<()> {
        for r in &self.records {
            writeln!(out, "{},{},{},{},{}", episode, step, r.round, r.sender, r.target)?;
        }
        Ok(())
    }
}

pub const CHAIN_LOG_HEADER: &str = "episode,step,round,sender,target";

/// Runs the per-step communication rounds.
///
/// Round 0 asks every agent. Later rounds ask only agents that received
/// something in the previous round and have not sent yet this step. Each
/// agent sends at most once per step, so the phase ends after at most
/// `n_agents` rounds; it also ends as soon as a round delivers nothing.
///
/// Within a round all agents decide on the buffers as they stood at the
/// start of the round; deliveries are then applied in sender order.
pub fn run_comm_phase(
    observations: &[Observation],
    buffers: &mut [MessageBuffer],
    policy: &mut dyn CommPolicy,
    keep_snapshots: bool,
) -> Result<(Vec<CommDecision>, ChainLog), CommError> {
    let n = observations.len();
    if buffers.len() != n {
        return Err(CommError::AgentCount {
            observations: n,
            buffers: buffers.len(),
        });
    }
    let mut sent = vec![false; n];
    let mut active: Vec<usize> = (0..n).collect();
    let mut decisions = Vec::new();
    let mut log = ChainLog::default();

    for round in 0..n {
        if active.is_empty() {
            break;
        }
        let snapshot: Vec<Vec<Message>> = buffers.iter().map(MessageBuffer::snapshot).collect();
        let requests: Vec<CommRequest> = active
            .iter()
            .map(|&i| {
                let obs = &observations[i];
                CommRequest {
                    agent: i,
                    round,
                    obs,
                    buffer: &snapshot[i],
                    valid: obs.neighbor_mask(),
                    fresh: obs.neighbors.iter().map(|j| j.is_some_and(|j| !sent[j])).collect(),
                }
            })
            .collect();
        let choices = policy.decide(&requests)?;
        if choices.len() != requests.len() {
            return Err(CommError::PolicyArity {
                requests: requests.len(),
                choices: choices.len(),
            });
        }

        let mut deliveries: Vec<(usize, Vec<Message>)> = Vec::new();
        for (req, c) in requests.iter().zip(choices) {
            let i = req.agent;
            let target = match c.choice {
                0 => None,
                s if s <= req.valid.len() && req.valid[s - 1] => req.obs.neighbors[s - 1],
                s => return Err(CommError::InvalidChoice { agent: i, choice: s }),
            };
            if let Some(j) = target {
                sent[i] = true;
                deliveries.push((j, compose_outgoing(&snapshot[i], &req.obs.data)));
                log.records.push(ChainRecord {
                    round,
                    sender: i,
                    target: j,
                });
            }
            let neighbors = if keep_snapshots {
                req.obs
                    .neighbors
                    .iter()
                    .enumerate()
                    .filter_map(|(slot, j)| {
                        j.map(|j| NeighborSnapshot {
                            slot,
                            agent: j,
                            obs: Message::new(&observations[j].data),
                            buffer: snapshot[j].clone(),
                        })
                    })
                    .collect()
            } else {
                Vec::new()
            };
            decisions.push(CommDecision {
                sender: i,
                round,
                choice: c.choice,
                target,
                probs: c.probs,
                sender_obs: Message::new(&req.obs.data),
                sender_buffer: if keep_snapshots { snapshot[i].clone() } else { Vec::new() },
                neighbors,
            });
        }
        if deliveries.is_empty() {
            break;
        }
        let mut received = vec![false; n];
        for (j, payload) in deliveries {
            deliver(&payload, &mut buffers[j])?;
            received[j] = true;
        }
        active = (0..n).filter(|&j| received[j] && !sent[j]).collect();
    }
    Ok((decisions, log))
}

/// Rebuilds end-of-phase buffers from a chain log and the step's
/// observations alone.
pub fn replay_chain_log(
    log: &ChainLog,
    observations: &[Observation],
    capacity: usize,
    msg_len: usize,
) -> Result<Vec<MessageBuffer>, CommError> {
    let mut buffers = vec![MessageBuffer::new(capacity, msg_len); observations.len()];
    let mut idx = 0;
    while idx < log.records.len() {
        let round = log.records[idx].round;
        let snapshot: Vec<Vec<Message>> = buffers.iter().map(MessageBuffer::snapshot).collect();
        while idx < log.records.len() && log.records[idx].round == round {
            let r = log.records[idx];
            let payload = compose_outgoing(&snapshot[r.sender], &observations[r.sender].data);
            deliver(&payload, &mut buffers[r.target])?;
            idx += 1;
        }
    }
    Ok(buffers)
}
