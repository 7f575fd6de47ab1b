use std::fs::{self, File};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::eval::{evaluate_actor, EvalMode, EvalOptions, EvalReport};
use super::rollout::{collect, ActionMode, CollectOptions, CommBehavior};
use super::{Algo, Checkpoint, HarnessError, RunConfig};
use crate::comm::CommMode;
use crate::env::ScenarioConfig;
use crate::learning::{update_step, Learner};
use crate::networks::{Actor, ActorConfig, Critic};

pub const METRICS_HEADER: &str = "iteration,env_steps,mean_episode_reward,capture_events,collision_events,occupied_landmarks,comm_rate,mean_chain_len,actor_ppo_loss,comm_effect,comm_silence,entropy,critic_loss";

pub const EVAL_HEADER: &str =
    "iteration,env_steps,mean_reward,std_reward,mean_success,std_success,mean_collisions,std_collisions,comm_rate";

/// Offset between the training seed and the held-out evaluation seed.
const EVAL_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

/// One row of the metrics CSV. Event counts are per-episode means.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationMetrics {
    pub iteration: u64,
    pub env_steps: u64,
    pub mean_episode_reward: f64,
    pub capture_events: f64,
    pub collision_events: f64,
    pub occupied_landmarks: f64,
    pub comm_rate: f64,
    pub mean_chain_len: f64,
    pub actor_ppo_loss: f64,
    pub comm_effect: f64,
    pub comm_silence: f64,
    pub entropy: f64,
    pub critic_loss: f64,
}

impl IterationMetrics {
    fn record(&self) -> [String; 13] {
        [
            self.iteration.to_string(),
            self.env_steps.to_string(),
            self.mean_episode_reward.to_string(),
            self.capture_events.to_string(),
            self.collision_events.to_string(),
            self.occupied_landmarks.to_string(),
            self.comm_rate.to_string(),
            self.mean_chain_len.to_string(),
            self.actor_ppo_loss.to_string(),
            self.comm_effect.to_string(),
            self.comm_silence.to_string(),
            self.entropy.to_string(),
            self.critic_loss.to_string(),
        ]
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<IterationMetrics>,
    pub evals: Vec<(u64, EvalReport)>,
}

/// Learner plus the counters and RNG that make a run resumable.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: RunConfig,
    pub learner: Learner,
    pub rng: ChaCha8Rng,
    pub iteration: u64,
    pub env_steps: u64,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let actor = Actor::new(ActorConfig::for_scenario(&config.scenario, config.net), &mut rng);
        let critic = Critic::new(config.scenario.global_state_len(), config.critic_hidden, &mut rng);
        let learner = Learner::new(actor, critic, &config.hyper, config.algo == Algo::Tem);
        Ok(Self {
            config,
            learner,
            rng,
            iteration: 0,
            env_steps: 0,
        })
    }

    /// Resumes exactly where the checkpoint left off.
    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self, HarnessError> {
        let actor = ckpt.load_actor()?;
        let critic = ckpt.load_critic()?;
        let learner = Learner {
            actor,
            critic,
            actor_opt: ckpt.actor_opt,
            critic_opt: ckpt.critic_opt,
            train_comm: ckpt.config.algo == Algo::Tem,
        };
        Ok(Self {
            config: ckpt.config,
            learner,
            rng: ckpt.rng,
            iteration: ckpt.iteration,
            env_steps: ckpt.env_steps,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            iteration: self.iteration,
            env_steps: self.env_steps,
            rng: self.rng.clone(),
            actor: self.learner.actor.params.clone(),
            critic: self.learner.critic.params.clone(),
            actor_opt: self.learner.actor_opt.clone(),
            critic_opt: self.learner.critic_opt.clone(),
        }
    }

    pub fn finished(&self) -> bool {
        self.env_steps >= self.config.total_env_steps as u64
    }

    fn comm_behavior(&self) -> CommBehavior {
        match self.config.algo {
            Algo::Tem => CommBehavior::Learned(CommMode::Sample),
            Algo::Mappo => CommBehavior::Silent,
            Algo::Fc => CommBehavior::Scripted { stop_prob: 0.0 },
            Algo::Rc => CommBehavior::Scripted {
                stop_prob: self.config.rc_stop_prob,
            },
        }
    }

    /// Collects one batch of whole episodes and runs one PPO update on it.
    pub fn iterate(&mut self) -> Result<IterationMetrics, HarnessError> {
        let cfg = &self.config;
        let opts = CollectOptions {
            comm: self.comm_behavior(),
            actions: ActionMode::Sample,
            buffer_capacity: cfg.buffer_capacity,
            record: true,
            record_comm: cfg.algo == Algo::Tem,
            traces: false,
        };
        let got = collect(
            &self.learner.actor,
            Some(&self.learner.critic),
            &cfg.scenario,
            cfg.episodes_per_iteration(),
            &opts,
            &mut self.rng,
        )?;
        let iteration = self.iteration;
        let report = update_step(&mut self.learner, &got.batch, &cfg.hyper, &mut self.rng)
            .map_err(|source| HarnessError::Learn { iteration, source })?;

        self.iteration += 1;
        self.env_steps += (got.episodes.len() * cfg.scenario.episode_len) as u64;
        let eps = got.episodes.len() as f64;
        let mean = |f: &dyn Fn(&super::EpisodeStats) -> f64| got.episodes.iter().map(f).sum::<f64>() / eps;
        let sends: usize = got.episodes.iter().map(|s| s.sends).sum();
        let agent_steps: usize = got.episodes.iter().map(|s| s.agent_steps).sum();
        let chains: Vec<usize> = got.episodes.iter().flat_map(|s| s.chain_lengths.iter().copied()).collect();
        let m = IterationMetrics {
            iteration: self.iteration,
            env_steps: self.env_steps,
            mean_episode_reward: mean(&|s| s.reward),
            capture_events: mean(&|s| s.captures as f64),
            collision_events: mean(&|s| s.collisions as f64),
            occupied_landmarks: mean(&|s| s.occupied as f64),
            comm_rate: sends as f64 / agent_steps as f64,
            mean_chain_len: if chains.is_empty() {
                0.0
            } else {
                chains.iter().sum::<usize>() as f64 / chains.len() as f64
            },
            actor_ppo_loss: report.actor_ppo,
            comm_effect: report.comm_expected_effect,
            comm_silence: report.comm_silence,
            entropy: report.entropy,
            critic_loss: report.critic,
        };
        log::info!(
            "iter {} steps {} reward {:.3} comm_rate {:.3}",
            m.iteration,
            m.env_steps,
            m.mean_episode_reward,
            m.comm_rate
        );
        Ok(m)
    }

    /// Greedy episodes on the held-out seed sequence of this run.
    pub fn evaluate(&self, episodes: usize) -> Result<EvalReport, HarnessError> {
        evaluate_actor(
            &self.learner.actor,
            self.config.algo,
            self.config.rc_stop_prob,
            &self.config.scenario,
            self.config.buffer_capacity,
            &EvalOptions {
                episodes,
                seed: self.config.seed.wrapping_add(EVAL_SEED_OFFSET),
                mode: EvalMode::Greedy,
                traces: false,
            },
        )
    }

    /// Iterates until the step budget is spent, writing metrics, periodic
    /// evaluations and the final checkpoint under `out` when given.
    pub fn run(mut self, out: Option<&Path>) -> Result<TrainOutcome, HarnessError> {
        let mut sinks = match out {
            Some(dir) => Some(Sinks::create(dir, &self.config)?),
            None => None,
        };
        let mut metrics = Vec::new();
        let mut evals = Vec::new();
        while !self.finished() {
            let m = self.iterate()?;
            if let Some(s) = &mut sinks {
                s.metrics(&m)?;
            }
            let every = self.config.eval_every as u64;
            if every > 0 && self.iteration % every == 0 {
                let r = self.evaluate(self.config.eval_episodes)?;
                if let Some(s) = &mut sinks {
                    s.eval(&m, &r)?;
                }
                evals.push((self.iteration, r));
            }
            metrics.push(m);
        }
        let checkpoint = self.checkpoint();
        if let Some(dir) = out {
            checkpoint.save(&dir.join("checkpoint.bin"))?;
        }
        Ok(TrainOutcome {
            checkpoint,
            metrics,
            evals,
        })
    }
}

struct Sinks {
    metrics_path: PathBuf,
    metrics: csv::Writer<File>,
    eval_path: PathBuf,
    eval: csv::Writer<File>,
}

fn csv_err(path: &Path, e: csv::Error) -> HarnessError {
    HarnessError::io(path, e.into())
}

impl Sinks {
    fn create(dir: &Path, config: &RunConfig) -> Result<Self, HarnessError> {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let cfg_path = dir.join("config.txt");
        fs::write(&cfg_path, config.to_text()).map_err(|e| HarnessError::io(&cfg_path, e))?;
        let open = |name: &str, header: &str| -> Result<(PathBuf, csv::Writer<File>), HarnessError> {
            let path = dir.join(name);
            let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
            w.write_record(header.split(',')).map_err(|e| csv_err(&path, e))?;
            w.flush().map_err(|e| HarnessError::io(&path, e))?;
            Ok((path, w))
        };
        let (metrics_path, metrics) = open("metrics.csv", METRICS_HEADER)?;
        let (eval_path, eval) = open("eval.csv", EVAL_HEADER)?;
        Ok(Self {
            metrics_path,
            metrics,
            eval_path,
            eval,
        })
    }

    fn metrics(&mut self, m: &IterationMetrics) -> Result<(), HarnessError> {
        self.metrics.write_record(m.record()).map_err(|e| csv_err(&self.metrics_path, e))?;
        self.metrics.flush().map_err(|e| HarnessError::io(&self.metrics_path, e))
    }

    fn eval(&mut self, m: &IterationMetrics, r: &EvalReport) -> Result<(), HarnessError> {
        let row = [
            m.iteration.to_string(),
            m.env_steps.to_string(),
            r.mean_reward.to_string(),
            r.std_reward.to_string(),
            r.mean_success.to_string(),
            r.std_success.to_string(),
            r.mean_collisions.to_string(),
            r.std_collisions.to_string(),
            r.comm_rate.to_string(),
        ];
        self.eval.write_record(row).map_err(|e| csv_err(&self.eval_path, e))?;
        self.eval.flush().map_err(|e| HarnessError::io(&self.eval_path, e))
    }
}

/// Trains from scratch. Outputs go to `config.out` when set.
pub fn train(config: RunConfig) -> Result<TrainOutcome, HarnessError> {
    let out = config.out.clone();
    Trainer::new(config)?.run(out.as_deref())
}

/// Continues training a checkpoint's actor on another scenario for `steps`
/// environment steps. The critic is rebuilt for the new global-state width
/// and both optimizers start fresh.
pub fn finetune(
    ckpt: &Checkpoint,
    scenario: &ScenarioConfig,
    steps: usize,
    out: Option<&Path>,
) -> Result<TrainOutcome, HarnessError> {
    let mut config = ckpt.config.clone();
    config.scenario = scenario.clone();
    config.total_env_steps = steps;
    config.out = out.map(Path::to_path_buf);
    config.validate()?;
    let mut rng = ckpt.rng.clone();
    let actor = Actor::from_params(ActorConfig::for_scenario(scenario, config.net), ckpt.actor.clone())?;
    let critic = Critic::new(scenario.global_state_len(), config.critic_hidden, &mut rng);
    let learner = Learner::new(actor, critic, &config.hyper, config.algo == Algo::Tem);
    Trainer {
        config,
        learner,
        rng,
        iteration: 0,
        env_steps: 0,
    }
    .run(out)
}
