use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::rollout::{collect, ActionMode, CollectOptions, CommBehavior, EpisodeTrace};
use super::{Algo, Checkpoint, HarnessError};
use crate::comm::{CommMode, CHAIN_LOG_HEADER};
use crate::env::export::{write_trajectory_rows, TRAJECTORY_HEADER};
use crate::env::ScenarioConfig;
use crate::networks::{manifest_hash, Actor, ActorConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    /// Most likely action and receiver.
    Greedy,
    /// Draw from the policy.
    Sample,
    /// Uniform random actions and no communication.
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalOptions {
    pub episodes: usize,
    pub seed: u64,
    pub mode: EvalMode,
    /// Keep world states and chain logs for CSV export.
    pub traces: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            episodes: 10,
            seed: 0,
            mode: EvalMode::Greedy,
            traces: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeReport {
    pub reward: f64,
    /// Captures in predator-prey, occupied landmark-steps in navigation.
    pub success: usize,
    pub collisions: usize,
    pub comm_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub scenario: ScenarioConfig,
    pub episodes: Vec<EpisodeReport>,
    pub mean_reward: f64,
    pub std_reward: f64,
    pub mean_success: f64,
    pub std_success: f64,
    pub mean_collisions: f64,
    pub std_collisions: f64,
    /// Sums over all episodes.
    pub total_reward: f64,
    pub total_success: usize,
    pub total_collisions: usize,
    /// Sends per agent-step over all episodes.
    pub comm_rate: f64,
    /// `chain_histogram[l]` counts chains of length `l`.
    pub chain_histogram: Vec<usize>,
    pub traces: Vec<EpisodeTrace>,
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.clone().sum::<f64>() / n as f64;
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

impl EvalReport {
    /// Writes `trajectory.csv` and `chains.csv` into `dir`. Needs a report
    /// produced with traces enabled.
    pub fn write_traces(&self, dir: &Path) -> Result<(), HarnessError> {
        let path = dir.join("trajectory.csv");
        let mut out = BufWriter::new(File::create(&path).map_err(|e| HarnessError::io(&path, e))?);
        let res: std::io::Result<()> = (|| {
            writeln!(out, "episode,{TRAJECTORY_HEADER}")?;
            for (ep, trace) in self.traces.iter().enumerate() {
                for state in &trace.states {
                    let mut rows = Vec::new();
                    write_trajectory_rows(&mut rows, &self.scenario, state)?;
                    for line in String::from_utf8_lossy(&rows).lines() {
                        writeln!(out, "{ep},{line}")?;
                    }
                }
            }
            out.flush()
        })();
        res.map_err(|e| HarnessError::io(&path, e))?;

        let path = dir.join("chains.csv");
        let mut out = BufWriter::new(File::create(&path).map_err(|e| HarnessError::io(&path, e))?);
        let res: std::io::Result<()> = (|| {
            writeln!(out, "{CHAIN_LOG_HEADER}")?;
            for (ep, trace) in self.traces.iter().enumerate() {
                for (step, log) in trace.chains.iter().enumerate() {
                    log.write_csv(&mut out, ep, step)?;
                }
            }
            out.flush()
        })();
        res.map_err(|e| HarnessError::io(&path, e))
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} over {} episodes: R = {:.2} ± {:.2}, S = {:.2} ± {:.2}, C = {:.2} ± {:.2}, comm_rate = {:.3}",
            self.scenario.label(),
            self.episodes.len(),
            self.mean_reward,
            self.std_reward,
            self.mean_success,
            self.std_success,
            self.mean_collisions,
            self.std_collisions,
            self.comm_rate
        )?;
        writeln!(
            f,
            "totals: R = {:.2}, S = {}, C = {}",
            self.total_reward, self.total_success, self.total_collisions
        )?;
        let hist: Vec<String> = self
            .chain_histogram
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(l, c)| format!("{l}:{c}"))
            .collect();
        write!(f, "chain lengths {{{}}}", hist.join(", "))
    }
}

/// Evaluates an actor on `scenario` with the communication rule of `algo`.
pub fn evaluate_actor(
    actor: &Actor,
    algo: Algo,
    rc_stop_prob: f64,
    scenario: &ScenarioConfig,
    buffer_capacity: usize,
    opts: &EvalOptions,
) -> Result<EvalReport, HarnessError> {
    let (actions, comm_mode) = match opts.mode {
        EvalMode::Greedy => (ActionMode::Greedy, CommMode::Greedy),
        EvalMode::Sample => (ActionMode::Sample, CommMode::Sample),
        EvalMode::Random => (ActionMode::Uniform, CommMode::Sample),
    };
    let comm = match (opts.mode, algo) {
        (EvalMode::Random, _) | (_, Algo::Mappo) => CommBehavior::Silent,
        (_, Algo::Tem) => CommBehavior::Learned(comm_mode),
        (_, Algo::Fc) => CommBehavior::Scripted { stop_prob: 0.0 },
        (_, Algo::Rc) => CommBehavior::Scripted { stop_prob: rc_stop_prob },
    };
    let copts = CollectOptions {
        comm,
        actions,
        buffer_capacity,
        record: false,
        record_comm: false,
        traces: opts.traces,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let got = collect(actor, None, scenario, opts.episodes, &copts, &mut rng)?;

    let episodes: Vec<EpisodeReport> = got
        .episodes
        .iter()
        .map(|s| EpisodeReport {
            reward: s.reward,
            success: s.captures + s.occupied,
            collisions: s.collisions,
            comm_rate: s.comm_rate(),
        })
        .collect();
    let (mean_reward, std_reward) = mean_std(episodes.iter().map(|e| e.reward));
    let (mean_success, std_success) = mean_std(episodes.iter().map(|e| e.success as f64));
    let (mean_collisions, std_collisions) = mean_std(episodes.iter().map(|e| e.collisions as f64));
    let total_reward = episodes.iter().map(|e| e.reward).sum();
    let total_success = episodes.iter().map(|e| e.success).sum();
    let total_collisions = episodes.iter().map(|e| e.collisions).sum();
    let sends: usize = got.episodes.iter().map(|s| s.sends).sum();
    let agent_steps: usize = got.episodes.iter().map(|s| s.agent_steps).sum();
    let mut chain_histogram = Vec::new();
    for &l in got.episodes.iter().flat_map(|s| &s.chain_lengths) {
        if chain_histogram.len() <= l {
            chain_histogram.resize(l + 1, 0);
        }
        chain_histogram[l] += 1;
    }
    Ok(EvalReport {
        scenario: scenario.clone(),
        mean_reward,
        std_reward,
        mean_success,
        std_success,
        mean_collisions,
        std_collisions,
        total_reward,
        total_success,
        total_collisions,
        comm_rate: if agent_steps == 0 { 0.0 } else { sends as f64 / agent_steps as f64 },
        chain_histogram,
        traces: got.traces,
        episodes,
    })
}

/// Evaluates a checkpoint's actor on any scenario with the same slot counts.
/// The critic is never touched.
pub fn evaluate(ckpt: &Checkpoint, scenario: &ScenarioConfig, opts: &EvalOptions) -> Result<EvalReport, HarnessError> {
    let actor = Actor::from_params(ActorConfig::for_scenario(scenario, ckpt.config.net), ckpt.actor.clone())?;
    evaluate_actor(
        &actor,
        ckpt.config.algo,
        ckpt.config.rc_stop_prob,
        scenario,
        ckpt.config.buffer_capacity,
        opts,
    )
}

/// Runs [`evaluate`] on each target scenario without retraining, and checks
/// that the actor's parameters come out bit-identical.
pub fn transfer_eval(
    ckpt: &Checkpoint,
    targets: &[ScenarioConfig],
    opts: &EvalOptions,
) -> Result<Vec<EvalReport>, HarnessError> {
    let before = manifest_hash(&ckpt.actor, true);
    let mut reports = Vec::with_capacity(targets.len());
    for scenario in targets {
        let actor = Actor::from_params(ActorConfig::for_scenario(scenario, ckpt.config.net), ckpt.actor.clone())?;
        let report = evaluate_actor(
            &actor,
            ckpt.config.algo,
            ckpt.config.rc_stop_prob,
            scenario,
            ckpt.config.buffer_capacity,
            opts,
        )?;
        if manifest_hash(&actor.params, true) != before || manifest_hash(&ckpt.actor, true) != before {
            return Err(HarnessError::ParamsChanged(scenario.label()));
        }
        reports.push(report);
    }
    Ok(reports)
}
