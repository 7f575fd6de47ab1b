use rand::seq::SliceRandom;
use rand::Rng;

use super::{
    batch_advantages, causal_effects, comm_loss, critic_loss, entropy, gamma_matrix, normalize, ppo_actor_loss,
    AgentSample, CommSample, Hyperparams, LearnError, LossReport, RolloutBatch,
};
use crate::autodiff::optim::{clip_grad_norm, Adam, AdamConfig};
use crate::autodiff::Graph;
use crate::comm::Message;
use crate::networks::{action_forward, comm_forward, critic_forward, Actor, Critic};

/// Actor, critic and their optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Learner {
    pub actor: Actor,
    pub critic: Critic,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
    /// Train the communication head with the causal-effect objective. Off
    /// for baselines whose communication choices are scripted.
    pub train_comm: bool,
}

impl Learner {
    pub fn new(actor: Actor, critic: Critic, hyper: &Hyperparams, train_comm: bool) -> Self {
        Self {
            actor,
            critic,
            actor_opt: Adam::new(AdamConfig::with_lr(hyper.actor_lr)),
            critic_opt: Adam::new(AdamConfig::with_lr(hyper.critic_lr)),
            train_comm,
        }
    }
}

/// Splits `0..n` into `parts` shuffled chunks of near-equal size.
fn minibatches<R: Rng + ?Sized>(n: usize, parts: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let parts = parts.min(n).max(1);
    let base = n / parts;
    let extra = n % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for p in 0..parts {
        let len = base + usize::from(p < extra);
        out.push(idx[start..start + len].to_vec());
        start += len;
    }
    out
}

fn check(value: f64, what: &'static str, epoch: usize, minibatch: usize, report: LossReport) -> Result<(), LearnError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(LearnError::NonFinite {
            what,
            epoch,
            minibatch,
            report,
        })
    }
}

/// One PPO update over `batch`: several epochs of shuffled minibatches,
/// each taking one clipped Adam step for the actor and one for the critic.
///
/// Causal effects are evaluated once, with the actor as it was before the
/// update, and held fixed across epochs.
pub fn update_step<R: Rng + ?Sized>(
    learner: &mut Learner,
    batch: &RolloutBatch,
    hyper: &Hyperparams,
    rng: &mut R,
) -> Result<LossReport, LearnError> {
    hyper.validate().map_err(LearnError::Hyper)?;
    if batch.is_empty() {
        return Err(LearnError::EmptyBatch);
    }
    learner.actor_opt.config.lr = hyper.actor_lr;
    learner.critic_opt.config.lr = hyper.critic_lr;

    let samples: Vec<&AgentSample> = batch.samples().collect();
    let (mut adv, returns) = batch_advantages(batch, hyper.gamma, hyper.gae_lambda);
    normalize(&mut adv);

    let comm: &[CommSample] = if learner.train_comm { &batch.comm } else { &[] };
    let effects = causal_effects(&learner.actor, comm, batch.buffer_capacity)?;

    let mut sum = LossReport::default();
    let mut count = 0usize;
    for epoch in 0..hyper.epochs {
        let sample_mbs = minibatches(samples.len(), hyper.minibatches, rng);
        let comm_mbs = minibatches(comm.len(), sample_mbs.len(), rng);
        for (mb, idx) in sample_mbs.iter().enumerate() {
            let comm_idx = comm_mbs.get(mb).map_or(&[][..], Vec::as_slice);
            let r = actor_step(learner, hyper, &samples, &adv, idx, comm, &effects, comm_idx)
                .map_err(|e| tag(e, epoch, mb))?;
            check(r.total_actor, "actor objective", epoch, mb, r)?;
            let critic = critic_step(learner, hyper, &samples, &returns, idx)?;
            let r = LossReport { critic, ..r };
            check(critic, "critic loss", epoch, mb, r)?;
            if !learner.actor.params.all_finite() || !learner.critic.params.all_finite() {
                return Err(LearnError::NonFinite {
                    what: "parameters",
                    epoch,
                    minibatch: mb,
                    report: r,
                });
            }
            sum.actor_ppo += r.actor_ppo;
            sum.comm_expected_effect += r.comm_expected_effect;
            sum.comm_silence += r.comm_silence;
            sum.entropy += r.entropy;
            sum.critic += r.critic;
            sum.total_actor += r.total_actor;
            count += 1;
        }
    }
    let c = count as f64;
    Ok(LossReport {
        actor_ppo: sum.actor_ppo / c,
        comm_expected_effect: sum.comm_expected_effect / c,
        comm_silence: sum.comm_silence / c,
        entropy: sum.entropy / c,
        critic: sum.critic / c,
        total_actor: sum.total_actor / c,
    })
}

fn tag(e: LearnError, epoch: usize, minibatch: usize) -> LearnError {
    match e {
        LearnError::NonFinite { what, report, .. } => LearnError::NonFinite {
            what,
            epoch,
            minibatch,
            report,
        },
        e => e,
    }
}

#[allow(clippy::too_many_arguments)]
fn actor_step(
    learner: &mut Learner,
    hyper: &Hyperparams,
    samples: &[&AgentSample],
    adv: &[f64],
    idx: &[usize],
    comm: &[CommSample],
    effects: &[Vec<f64>],
    comm_idx: &[usize],
) -> Result<LossReport, LearnError> {
    let cfg = learner.actor.config;
    let mut g = Graph::new();
    let p = learner.actor.params.bind(&mut g, true);

    let obs: Vec<&[f64]> = idx.iter().map(|&i| samples[i].obs.as_slice()).collect();
    let bufs: Vec<&[Message]> = idx.iter().map(|&i| samples[i].buffer.as_slice()).collect();
    let hidden: Vec<&[f64]> = idx.iter().map(|&i| samples[i].hidden.as_slice()).collect();
    let actions: Vec<usize> = idx.iter().map(|&i| samples[i].action).collect();
    let old: Vec<f64> = idx.iter().map(|&i| samples[i].log_prob).collect();
    let a: Vec<f64> = idx.iter().map(|&i| adv[i]).collect();

    let out = action_forward(&mut g, &p, &cfg, &obs, &bufs, &hidden)?;
    let new_lp = g.pick(out.log_probs, &actions)?;
    let ppo = ppo_actor_loss(&mut g, new_lp, &old, &a, hyper.clip_eps)?;
    let ent = entropy(&mut g, out.probs, out.log_probs)?;

    let mut report = LossReport {
        actor_ppo: g.value(ppo).item(),
        entropy: g.value(ent).item(),
        ..LossReport::default()
    };
    let ent_term = g.scale(ent, hyper.lambda_e);
    let mut total = g.add(ppo, ent_term)?;

    if !comm_idx.is_empty() {
        let cs: Vec<&CommSample> = comm_idx.iter().map(|&i| &comm[i]).collect();
        let es: Vec<&[f64]> = comm_idx.iter().map(|&i| effects[i].as_slice()).collect();
        let c_obs: Vec<&[f64]> = cs.iter().map(|s| s.decision.sender_obs.payload()).collect();
        let c_bufs: Vec<&[Message]> = cs.iter().map(|s| s.decision.sender_buffer.as_slice()).collect();
        let masks: Vec<Vec<bool>> = cs.iter().map(|s| s.decision.valid_mask()).collect();
        let m: Vec<&[bool]> = masks.iter().map(Vec::as_slice).collect();
        let probs = comm_forward(&mut g, &p, &cfg, &c_obs, &c_bufs, &m, None)?;
        let gm = gamma_matrix(&cs, &es, cfg.comm_options())?;
        let (lm, eg, silent) = comm_loss(&mut g, probs, gm, hyper.delta)?;
        report.comm_expected_effect = g.value(eg).item();
        report.comm_silence = g.value(silent).item();
        let lm = g.scale(lm, hyper.lambda_m);
        total = g.add(total, lm)?;
    }
    report.total_actor = g.value(total).item();
    check(report.total_actor, "actor objective", 0, 0, report)?;

    let loss = g.scale(total, -1.0);
    let grads = g.backward(loss)?;
    let mut gm = learner.actor.params.collect_grads(&p, &grads);
    let norm = clip_grad_norm(&mut gm, hyper.max_grad_norm);
    check(norm, "actor gradient", 0, 0, report)?;
    learner.actor_opt.update(&mut learner.actor.params, &gm);
    Ok(report)
}

fn critic_step(
    learner: &mut Learner,
    hyper: &Hyperparams,
    samples: &[&AgentSample],
    returns: &[f64],
    idx: &[usize],
) -> Result<f64, LearnError> {
    let mut g = Graph::new();
    let p = learner.critic.params.bind(&mut g, true);
    let states: Vec<&[f64]> = idx.iter().map(|&i| samples[i].global_state.as_slice()).collect();
    let old: Vec<f64> = idx.iter().map(|&i| samples[i].value).collect();
    let ret: Vec<f64> = idx.iter().map(|&i| returns[i]).collect();
    let v = critic_forward(&mut g, &p, learner.critic.input_len, &states)?;
    let loss = critic_loss(&mut g, v, &old, &ret, hyper.clip_eps)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Ok(value);
    }
    let grads = g.backward(loss)?;
    let mut gm = learner.critic.params.collect_grads(&p, &grads);
    clip_grad_norm(&mut gm, hyper.max_grad_norm);
    learner.critic_opt.update(&mut learner.critic.params, &gm);
    Ok(value)
}
