use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::HarnessError;
use crate::comm::{run_comm_phase, ChainLog, CommChoice, CommError, CommMode, CommPolicy, CommRequest, MessageBuffer};
use crate::env::{self, Action, ScenarioConfig, WorldState};
use crate::learning::{AgentSample, CommSample, RolloutBatch, Trajectory};
use crate::networks::{Actor, Critic};

/// How agents pick receivers during the communication phase.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CommBehavior {
    /// The actor's message network.
    Learned(CommMode),
    /// Forward to a uniformly random teammate that has not sent yet, or stop
    /// with probability `stop_prob`. Zero gives full communication.
    Scripted { stop_prob: f64 },
    /// No communication phase; every buffer stays empty.
    Silent,
}

/// How agents pick environment actions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionMode {
    Sample,
    Greedy,
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollectOptions {
    pub comm: CommBehavior,
    pub actions: ActionMode,
    pub buffer_capacity: usize,
    /// Keep per-agent samples for learning. Requires a critic.
    pub record: bool,
    /// Keep communication decisions with neighbor snapshots.
    pub record_comm: bool,
    /// Keep world states and chain logs for export.
    pub traces: bool,
}

/// Totals over one episode.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeStats {
    /// Sum over steps of the team-mean reward.
    pub reward: f64,
    pub captures: usize,
    pub collisions: usize,
    pub occupied: usize,
    pub sends: usize,
    pub agent_steps: usize,
    pub chain_lengths: Vec<usize>,
}

impl EpisodeStats {
    /// Sends per agent-step.
    pub fn comm_rate(&self) -> f64 {
        if self.agent_steps == 0 {
            0.0
        } else {
            self.sends as f64 / self.agent_steps as f64
        }
    }
}

/// World states (including the initial one) and per-step chain logs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeTrace {
    pub states: Vec<WorldState>,
    pub chains: Vec<ChainLog>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Collected {
    pub batch: RolloutBatch,
    pub episodes: Vec<EpisodeStats>,
    pub traces: Vec<EpisodeTrace>,
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn draw<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Result<usize, String> {
    let dist = WeightedIndex::new(probs).map_err(|e| format!("bad distribution {probs:?}: {e}"))?;
    Ok(dist.sample(rng))
}

/// Receiver choice from the actor's message network.
pub struct LearnedCommPolicy<'a, R: ?Sized> {
    pub actor: &'a Actor,
    pub mode: CommMode,
    pub rng: &'a mut R,
}

impl<R: Rng + ?Sized> CommPolicy for LearnedCommPolicy<'_, R> {
    fn decide(&mut self, requests: &[CommRequest<'_>]) -> Result<Vec<CommChoice>, CommError> {
        if requests.is_empty() {
            return Ok(Vec::new());
        }
        let obs: Vec<&[f64]> = requests.iter().map(|r| r.obs.data.as_slice()).collect();
        let bufs: Vec<_> = requests.iter().map(|r| r.buffer).collect();
        let masks: Vec<&[bool]> = requests.iter().map(|r| r.valid.as_slice()).collect();
        let dists = self
            .actor
            .comm_dists(&obs, &bufs, &masks)
            .map_err(|e| CommError::Policy(e.to_string()))?;
        dists
            .into_iter()
            .map(|probs| {
                let choice = match self.mode {
                    CommMode::Greedy => argmax(&probs),
                    CommMode::Sample => draw(&probs, self.rng).map_err(CommError::Policy)?,
                };
                Ok(CommChoice { choice, probs })
            })
            .collect()
    }
}

/// Scripted forwarding that bypasses the message network entirely.
pub struct BaselineCommPolicy<'a, R: ?Sized> {
    pub stop_prob: f64,
    pub rng: &'a mut R,
}

impl<R: Rng + ?Sized> CommPolicy for BaselineCommPolicy<'_, R> {
    fn decide(&mut self, requests: &[CommRequest<'_>]) -> Result<Vec<CommChoice>, CommError> {
        let mut out = Vec::with_capacity(requests.len());
        for r in requests {
            let k = r.valid.len();
            let open: Vec<usize> = (0..k).filter(|&s| r.valid[s] && r.fresh[s]).collect();
            let mut probs = vec![0.0; k + 1];
            if open.is_empty() {
                probs[0] = 1.0;
                out.push(CommChoice { choice: 0, probs });
                continue;
            }
            probs[0] = self.stop_prob;
            for &s in &open {
                probs[s + 1] = (1.0 - self.stop_prob) / open.len() as f64;
            }
            let stop = self.stop_prob > 0.0 && self.rng.random_bool(self.stop_prob);
            let choice = if stop { 0 } else { open[self.rng.random_range(0..open.len())] + 1 };
            out.push(CommChoice { choice, probs });
        }
        Ok(out)
    }
}

/// Runs `episodes` whole episodes in lockstep and returns their samples and
/// statistics. Each episode draws its reset seed and its own RNG stream from
/// `rng`, so results depend only on `rng`'s state and the inputs.
pub fn collect<R: RngCore + ?Sized>(
    actor: &Actor,
    critic: Option<&Critic>,
    scenario: &ScenarioConfig,
    episodes: usize,
    opts: &CollectOptions,
    rng: &mut R,
) -> Result<Collected, HarnessError> {
    scenario.validate()?;
    let n = scenario.n_agents;
    let obs_len = scenario.obs_len();
    if obs_len != actor.config.obs_len || scenario.k_neighbors != actor.config.k_neighbors {
        return Err(HarnessError::Config(format!(
            "actor expects {} observation features and {} teammate slots, scenario {} has {} and {}",
            actor.config.obs_len,
            actor.config.k_neighbors,
            scenario.label(),
            obs_len,
            scenario.k_neighbors
        )));
    }
    let critic = match (opts.record, critic) {
        (true, None) => return Err(HarnessError::Config("recording samples needs a critic".into())),
        (_, c) => c,
    };
    let d_h = actor.config.dims.d_h;

    let mut states = Vec::with_capacity(episodes);
    let mut rngs = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        states.push(env::reset(scenario, rng.next_u64()));
        rngs.push(ChaCha8Rng::seed_from_u64(rng.next_u64()));
    }
    let mut hidden = vec![vec![vec![0.0; d_h]; n]; episodes];
    let mut stats = vec![EpisodeStats::default(); episodes];
    let mut trajs = vec![Trajectory::default(); episodes];
    let mut comm_samples = Vec::new();
    let mut traces: Vec<EpisodeTrace> = if opts.traces {
        states
            .iter()
            .map(|s| EpisodeTrace {
                states: vec![s.clone()],
                chains: Vec::new(),
            })
            .collect()
    } else {
        Vec::new()
    };

    for _t in 0..scenario.episode_len {
        let observations: Vec<_> = states.iter().map(|s| env::observe_all(scenario, s)).collect();
        let mut buffers = vec![vec![MessageBuffer::new(opts.buffer_capacity, obs_len); n]; episodes];

        for e in 0..episodes {
            let (decisions, log) = match opts.comm {
                CommBehavior::Silent => continue,
                CommBehavior::Learned(mode) => {
                    let mut policy = LearnedCommPolicy {
                        actor,
                        mode,
                        rng: &mut rngs[e],
                    };
                    run_comm_phase(&observations[e], &mut buffers[e], &mut policy, opts.record_comm)?
                }
                CommBehavior::Scripted { stop_prob } => {
                    let mut policy = BaselineCommPolicy {
                        stop_prob,
                        rng: &mut rngs[e],
                    };
                    run_comm_phase(&observations[e], &mut buffers[e], &mut policy, opts.record_comm)?
                }
            };
            stats[e].sends += log.sends();
            stats[e].chain_lengths.extend(log.chain_lengths());
            if opts.record_comm {
                for decision in decisions {
                    let neighbor_hidden = decision.neighbors.iter().map(|nb| hidden[e][nb.agent].clone()).collect();
                    comm_samples.push(CommSample {
                        decision,
                        neighbor_hidden,
                    });
                }
            }
            if opts.traces {
                traces[e].chains.push(log);
            }
        }

        let snapshots: Vec<Vec<_>> = buffers
            .iter()
            .flat_map(|bs| bs.iter().map(MessageBuffer::snapshot))
            .collect();
        let (probs, h_new) = if opts.actions == ActionMode::Uniform {
            (Vec::new(), Vec::new())
        } else {
            let obs: Vec<&[f64]> = observations.iter().flatten().map(|o| o.data.as_slice()).collect();
            let bufs: Vec<_> = snapshots.iter().map(Vec::as_slice).collect();
            let h: Vec<&[f64]> = hidden.iter().flatten().map(Vec::as_slice).collect();
            actor.action_dists(&obs, &bufs, &h)?
        };
        let values = match critic.filter(|_| opts.record) {
            Some(c) => {
                let gs: Vec<Vec<f64>> = (0..episodes)
                    .flat_map(|e| (0..n).map(move |i| (e, i)))
                    .map(|(e, i)| env::global_state(scenario, &states[e], i))
                    .collect();
                let refs: Vec<&[f64]> = gs.iter().map(Vec::as_slice).collect();
                let v = c.values(&refs)?;
                Some((gs, v))
            }
            None => None,
        };

        for e in 0..episodes {
            let mut actions = Vec::with_capacity(n);
            for i in 0..n {
                let a = match opts.actions {
                    ActionMode::Uniform => rngs[e].random_range(0..Action::COUNT),
                    ActionMode::Greedy => argmax(&probs[e * n + i]),
                    ActionMode::Sample => draw(&probs[e * n + i], &mut rngs[e]).map_err(HarnessError::Config)?,
                };
                actions.push(a);
            }
            let (next, result) = env::step(scenario, &states[e], &actions)?;
            let s = &mut stats[e];
            s.reward += result.rewards.iter().sum::<f64>() / n as f64;
            s.captures += result.events.captures;
            s.collisions += result.events.collisions;
            s.occupied += result.events.occupied;
            s.agent_steps += n;

            if let Some((gs, v)) = &values {
                let row = (0..n)
                    .map(|i| {
                        let r = e * n + i;
                        AgentSample {
                            obs: observations[e][i].data.clone(),
                            buffer: snapshots[r].clone(),
                            hidden: hidden[e][i].clone(),
                            action: actions[i],
                            log_prob: probs[r][actions[i]].ln(),
                            probs: probs[r].clone(),
                            reward: result.rewards[i],
                            value: v[r],
                            done: result.done,
                            global_state: gs[r].clone(),
                        }
                    })
                    .collect();
                trajs[e].steps.push(row);
            }
            if opts.actions != ActionMode::Uniform {
                for i in 0..n {
                    hidden[e][i].clone_from(&h_new[e * n + i]);
                }
            }
            if opts.traces {
                traces[e].states.push(next.clone());
            }
            states[e] = next;
        }
    }

    let batch = if opts.record {
        for t in &mut trajs {
            t.bootstrap = vec![0.0; n];
        }
        RolloutBatch {
            trajectories: trajs,
            comm: comm_samples,
            buffer_capacity: opts.buffer_capacity,
        }
    } else {
        RolloutBatch {
            buffer_capacity: opts.buffer_capacity,
            ..RolloutBatch::default()
        }
    };
    Ok(Collected {
        batch,
        episodes: stats,
        traces,
    })
}
