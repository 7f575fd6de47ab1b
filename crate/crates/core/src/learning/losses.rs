use super::{CommSample, LearnError};
use crate::autodiff::{kl_categorical, Graph, Tensor, Var};
use crate::comm::{compose_outgoing, deliver, Message, MessageBuffer};
use crate::networks::Actor;

/// Rows per forward pass when evaluating causal effects.
const EFFECT_CHUNK: usize = 2048;

fn column(g: &mut Graph, xs: &[f64]) -> Result<Var, LearnError> {
    Ok(g.constant(Tensor::new(vec![xs.len(), 1], xs.to_vec())?))
}

/// Clipped surrogate, `mean(min(r A, clip(r, 1 − ε, 1 + ε) A))` with
/// `r = exp(new − old)`. `new_log_probs` is `[B × 1]`.
pub fn ppo_actor_loss(
    g: &mut Graph,
    new_log_probs: Var,
    old_log_probs: &[f64],
    advantages: &[f64],
    eps: f64,
) -> Result<Var, LearnError> {
    let old = column(g, old_log_probs)?;
    let adv = column(g, advantages)?;
    let diff = g.sub(new_log_probs, old)?;
    let ratio = g.exp(diff);
    let s1 = g.mul(ratio, adv)?;
    let clipped = g.clamp(ratio, 1.0 - eps, 1.0 + eps);
    let s2 = g.mul(clipped, adv)?;
    let m = g.minimum(s1, s2)?;
    Ok(g.mean(m))
}

/// Mean Shannon entropy of the rows of `probs`.
pub fn entropy(g: &mut Graph, probs: Var, log_probs: Var) -> Result<Var, LearnError> {
    let rows = g.value(probs).shape()[0] as f64;
    let plogp = g.mul(probs, log_probs)?;
    let s = g.sum(plogp);
    Ok(g.scale(s, -1.0 / rows))
}

/// `mean(max((V − R)², (clip(V, V_old − ε, V_old + ε) − R)²))`.
pub fn critic_loss(g: &mut Graph, values: Var, old_values: &[f64], returns: &[f64], eps: f64) -> Result<Var, LearnError> {
    let n = old_values.len();
    let lo = Tensor::new(vec![n, 1], old_values.iter().map(|v| v - eps).collect())?;
    let hi = Tensor::new(vec![n, 1], old_values.iter().map(|v| v + eps).collect())?;
    let ret = column(g, returns)?;
    let d1 = g.sub(values, ret)?;
    let a = g.mul(d1, d1)?;
    let vc = g.clamp_between(values, lo, hi)?;
    let d2 = g.sub(vc, ret)?;
    let b = g.mul(d2, d2)?;
    let m = g.maximum(a, b)?;
    Ok(g.mean(m))
}

/// `Γ` for every observed teammate of every decision: the KL divergence
/// between the teammate's action distribution with the sender's composed
/// payload delivered into its buffer snapshot and without it. Evaluated with
/// the given actor and no gradients.
pub fn causal_effects(actor: &Actor, samples: &[CommSample], capacity: usize) -> Result<Vec<Vec<f64>>, LearnError> {
    struct Row<'a> {
        obs: &'a [f64],
        hidden: &'a [f64],
        with: Vec<Message>,
        without: &'a [Message],
    }
    let msg_len = actor.config.obs_len;
    let mut rows = Vec::new();
    for s in samples {
        let d = &s.decision;
        let payload = compose_outgoing(&d.sender_buffer, d.sender_obs.payload());
        for (n, h) in d.neighbors.iter().zip(&s.neighbor_hidden) {
            let mut buf = MessageBuffer::from_messages(capacity, msg_len, &n.buffer)?;
            deliver(&payload, &mut buf)?;
            rows.push(Row {
                obs: n.obs.payload(),
                hidden: h,
                with: buf.snapshot(),
                without: &n.buffer,
            });
        }
    }

    let mut effects = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(EFFECT_CHUNK) {
        let mut obs = Vec::with_capacity(2 * chunk.len());
        let mut hidden = Vec::with_capacity(2 * chunk.len());
        let mut bufs: Vec<&[Message]> = Vec::with_capacity(2 * chunk.len());
        for r in chunk {
            obs.extend([r.obs, r.obs]);
            hidden.extend([r.hidden, r.hidden]);
            bufs.extend([r.with.as_slice(), r.without]);
        }
        let (probs, _) = actor.action_dists(&obs, &bufs, &hidden)?;
        for pair in probs.chunks(2) {
            effects.push(kl_categorical(&pair[0], &pair[1])?);
        }
    }

    let mut it = effects.into_iter();
    Ok(samples
        .iter()
        .map(|s| (0..s.decision.neighbors.len()).map(|_| it.next().unwrap_or(0.0)).collect())
        .collect())
}

/// Dense `[B × (k + 1)]` matrix with `Γ` at each occupied slot's column
/// (`slot + 1`) and zero elsewhere, including the "do not send" column.
pub fn gamma_matrix(samples: &[&CommSample], effects: &[&[f64]], options: usize) -> Result<Tensor, LearnError> {
    let mut data = vec![0.0; samples.len() * options];
    for (b, (s, e)) in samples.iter().zip(effects).enumerate() {
        for (n, &gamma) in s.decision.neighbors.iter().zip(e.iter()) {
            data[b * options + n.slot + 1] = gamma;
        }
    }
    Ok(Tensor::new(vec![samples.len(), options], data)?)
}

/// `Σ_j P(send to j) · Γ_j` per row, `[B × 1]`. `Γ` enters as a constant,
/// so gradients reach only the communication probabilities.
pub fn expected_causal_effect(g: &mut Graph, probs: Var, gammas: Tensor) -> Result<Var, LearnError> {
    let c = g.constant(gammas);
    let w = g.mul(probs, c)?;
    Ok(g.sum_axis(w, 1)?)
}

/// Plain-number form of [`expected_causal_effect`] for one decision.
pub fn expected_causal_effect_value(probs: &[f64], slots: &[usize], effects: &[f64]) -> f64 {
    slots.iter().zip(effects).map(|(&s, &e)| probs[s + 1] * e).sum()
}

/// Communication objective `mean(𝔼Γ + δ · P(no send))`, plus its two means
/// for reporting. An empty batch gives zeros.
pub fn comm_loss(g: &mut Graph, probs: Var, gammas: Tensor, delta: f64) -> Result<(Var, Var, Var), LearnError> {
    let rows = g.value(probs).shape()[0];
    if rows == 0 {
        let z = g.constant(Tensor::scalar(0.0));
        return Ok((z, z, z));
    }
    let eg = expected_causal_effect(g, probs, gammas)?;
    let eg = g.mean(eg);
    let silent = g.pick(probs, &vec![0; rows])?;
    let silent = g.mean(silent);
    let ds = g.scale(silent, delta);
    let total = g.add(eg, ds)?;
    Ok((total, eg, silent))
}
