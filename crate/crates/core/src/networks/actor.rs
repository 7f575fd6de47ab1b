use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::attention::{attend, attend_literal, AttnOptions, AttnTrace, Span};
use super::{check_shapes, init_linear, init_normal, linear, mlp2, stack_rows, NetError};
use crate::autodiff::optim::{Bound, ParamStore};
use crate::autodiff::{gru_cell, Graph, GruParams, Tensor, Var};
use crate::comm::Message;
use crate::env::{Action, ScenarioConfig};

const LN_EPS: f64 = 1e-5;

/// Network sizes and wiring switches; independent of the scenario.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetDims {
    pub d_h: usize,
    pub d_model: usize,
    pub n_enc: usize,
    pub n_dec: usize,
    /// Softmax over `exp(q kᵀ / √d)` instead of `q kᵀ / √d`.
    pub attention_double_exp: bool,
    /// Decoder keys and values from the decoder state, queries from `m_f`.
    pub literal_fig2_kqv: bool,
}

impl Default for NetDims {
    fn default() -> Self {
        Self {
            d_h: 64,
            d_model: 32,
            n_enc: 1,
            n_dec: 1,
            attention_double_exp: false,
            literal_fig2_kqv: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ActorConfig {
    pub obs_len: usize,
    pub k_neighbors: usize,
    pub dims: NetDims,
}

impl ActorConfig {
    pub fn for_scenario(scenario: &ScenarioConfig, dims: NetDims) -> Self {
        Self {
            obs_len: scenario.obs_len(),
            k_neighbors: scenario.k_neighbors,
            dims,
        }
    }

    /// Number of communication options: "do not send" plus one per slot.
    pub fn comm_options(&self) -> usize {
        self.k_neighbors + 1
    }
}

/// Shared actor parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Actor {
    pub config: ActorConfig,
    pub params: ParamStore,
}

impl Actor {
    pub fn new<R: Rng + ?Sized>(config: ActorConfig, rng: &mut R) -> Self {
        let ActorConfig { obs_len, k_neighbors, dims } = config;
        let (dh, dm) = (dims.d_h, dims.d_model);
        let s2 = std::f64::consts::SQRT_2;
        let mut p = ParamStore::new();

        init_linear(&mut p, "obs.l1", obs_len, dh, s2, rng);
        init_linear(&mut p, "obs.l2", dh, dh, s2, rng);

        for (gate, fan_in) in [("ir", dh + dm), ("iz", dh + dm), ("in", dh + dm), ("hr", dh), ("hz", dh), ("hn", dh)] {
            p.insert(format!("gru.w_{gate}"), init_normal(&[fan_in, dh], 1.0 / (fan_in as f64).sqrt(), rng));
            p.insert(format!("gru.b_{gate}"), Tensor::zeros(&[1, dh]));
        }
        init_linear(&mut p, "act.l1", dh, dh, s2, rng);
        init_linear(&mut p, "act.l2", dh, Action::COUNT, 0.01, rng);

        init_linear(&mut p, "msg.embed", obs_len, dm, 1.0, rng);
        p.insert("msg.null", init_normal(&[1, dm], 1.0, rng));
        for l in 0..dims.n_enc {
            attention_params(&mut p, &format!("enc{l}"), dm, rng);
        }
        init_linear(&mut p, "dec.in", dh, dm, 1.0, rng);
        for l in 0..dims.n_dec {
            attention_params(&mut p, &format!("dec{l}"), dm, rng);
        }
        init_linear(&mut p, "comm.l1", dm, dm, s2, rng);
        init_linear(&mut p, "comm.l2", dm, k_neighbors + 1, 0.01, rng);
        Self { config, params: p }
    }

    /// Wraps an existing parameter store after checking every name and shape.
    pub fn from_params(config: ActorConfig, params: ParamStore) -> Result<Self, NetError> {
        let reference = Self::new(config, &mut ChaCha8Rng::seed_from_u64(0)).params;
        check_shapes(&reference, &params)?;
        Ok(Self { config, params })
    }

    /// Action distributions and next hidden states, without gradients.
    pub fn action_dists(
        &self,
        obs: &[&[f64]],
        buffers: &[&[Message]],
        hidden: &[&[f64]],
    ) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), NetError> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let out = action_forward(&mut g, &p, &self.config, obs, buffers, hidden)?;
        Ok((rows(&g, out.probs), rows(&g, out.h_new)))
    }

    /// Communication distributions over `k_neighbors + 1` options.
    pub fn comm_dists(
        &self,
        obs: &[&[f64]],
        buffers: &[&[Message]],
        masks: &[&[bool]],
    ) -> Result<Vec<Vec<f64>>, NetError> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let probs = comm_forward(&mut g, &p, &self.config, obs, buffers, masks, None)?;
        Ok(rows(&g, probs))
    }
}

fn attention_params<R: Rng + ?Sized>(p: &mut ParamStore, prefix: &str, dm: usize, rng: &mut R) {
    let std = 1.0 / (dm as f64).sqrt();
    for w in ["wq", "wk", "wv"] {
        p.insert(format!("{prefix}.attn.{w}"), init_normal(&[dm, dm], std, rng));
    }
    init_linear(p, &format!("{prefix}.attn.out"), dm, dm, 1.0, rng);
    init_linear(p, &format!("{prefix}.mlp.l1"), dm, dm, std::f64::consts::SQRT_2, rng);
    init_linear(p, &format!("{prefix}.mlp.l2"), dm, dm, 1.0, rng);
}

fn rows(g: &Graph, v: Var) -> Vec<Vec<f64>> {
    let t = g.value(v);
    let (r, _) = t.dims2().expect("rank-2 output");
    (0..r).map(|i| t.row_slice(i).to_vec()).collect()
}

fn gru_params(p: &Bound) -> GruParams {
    GruParams {
        w_ir: p.get("gru.w_ir"),
        w_iz: p.get("gru.w_iz"),
        w_in: p.get("gru.w_in"),
        w_hr: p.get("gru.w_hr"),
        w_hz: p.get("gru.w_hz"),
        w_hn: p.get("gru.w_hn"),
        b_ir: p.get("gru.b_ir"),
        b_iz: p.get("gru.b_iz"),
        b_in: p.get("gru.b_in"),
        b_hr: p.get("gru.b_hr"),
        b_hz: p.get("gru.b_hz"),
        b_hn: p.get("gru.b_hn"),
    }
}

fn attn_opts(cfg: &ActorConfig) -> AttnOptions {
    AttnOptions {
        scale: 1.0 / (cfg.dims.d_model as f64).sqrt(),
        double_exp: cfg.dims.attention_double_exp,
    }
}

fn obs_features(g: &mut Graph, p: &Bound, cfg: &ActorConfig, obs: &[&[f64]]) -> Result<Var, NetError> {
    let x = stack_rows(g, obs, cfg.obs_len, "observation")?;
    let h = linear(g, p, x, "obs.l1")?;
    let h = g.relu(h);
    let h = linear(g, p, h, "obs.l2")?;
    Ok(g.relu(h))
}

/// Residual + layer norm around `f(x)`.
fn residual_norm(g: &mut Graph, x: Var, fx: Var) -> Result<Var, NetError> {
    let s = g.add(x, fx)?;
    Ok(g.layer_norm(s, LN_EPS))
}

/// Embeds every buffer and runs the encoder stack. Returns the stacked
/// message features `m_f` and each buffer's row span; an empty buffer becomes
/// one null-token row.
pub(super) fn encode_messages(
    g: &mut Graph,
    p: &Bound,
    cfg: &ActorConfig,
    buffers: &[&[Message]],
    mut trace: Option<&mut AttnTrace>,
) -> Result<(Var, Vec<Span>), NetError> {
    let mut payloads: Vec<&[f64]> = Vec::new();
    let mut index = Vec::new();
    let mut spans = Vec::with_capacity(buffers.len());
    let mut null_rows = Vec::new();
    for buf in buffers {
        let start = index.len();
        if buf.is_empty() {
            null_rows.push(index.len());
            index.push(usize::MAX);
        } else {
            for m in buf.iter() {
                index.push(payloads.len());
                payloads.push(m.payload());
            }
        }
        spans.push((start, index.len() - start));
    }
    let null = p.get("msg.null");
    let table = if payloads.is_empty() {
        null
    } else {
        let x = stack_rows(g, &payloads, cfg.obs_len, "message")?;
        let e = linear(g, p, x, "msg.embed")?;
        g.concat(&[e, null], 0)?
    };
    for r in null_rows {
        index[r] = payloads.len();
    }
    let mut x = if payloads.is_empty() && index.len() == 1 {
        table
    } else {
        g.gather_rows(table, &index)?
    };

    let opts = attn_opts(cfg);
    for l in 0..cfg.dims.n_enc {
        let pre = format!("enc{l}");
        let q = g.matmul(x, p.get(&format!("{pre}.attn.wq")))?;
        let k = g.matmul(x, p.get(&format!("{pre}.attn.wk")))?;
        let v = g.matmul(x, p.get(&format!("{pre}.attn.wv")))?;
        let a = attend(g, q, &spans, k, v, &spans, &opts, trace.as_deref_mut())?;
        let a = linear(g, p, a, &format!("{pre}.attn.out"))?;
        x = residual_norm(g, x, a)?;
        let m = mlp2(g, p, x, &format!("{pre}.mlp"))?;
        x = residual_norm(g, x, m)?;
    }
    Ok((x, spans))
}

/// Mean over each buffer's message rows.
pub(super) fn pool(g: &mut Graph, m_f: Var, spans: &[Span]) -> Result<Var, NetError> {
    if spans.iter().all(|s| s.1 == 1) {
        return Ok(m_f);
    }
    let mut pieces = Vec::with_capacity(spans.len());
    for &(s, l) in spans {
        let r = g.slice_rows(m_f, s, l)?;
        pieces.push(if l == 1 { r } else { g.mean_axis(r, 0)? });
    }
    match pieces.len() {
        1 => Ok(pieces[0]),
        _ => Ok(g.concat(&pieces, 0)?),
    }
}

pub(super) fn decode(
    g: &mut Graph,
    p: &Bound,
    cfg: &ActorConfig,
    o_f: Var,
    m_f: Var,
    spans: &[Span],
    mut trace: Option<&mut AttnTrace>,
) -> Result<Var, NetError> {
    // The message network reads o_f but does not train the observation encoder.
    let o_f = g.stop_gradient(o_f);
    let mut x = linear(g, p, o_f, "dec.in")?;
    let opts = attn_opts(cfg);
    let q_spans: Vec<Span> = (0..spans.len()).map(|b| (b, 1)).collect();
    for l in 0..cfg.dims.n_dec {
        let pre = format!("dec{l}");
        let wq = p.get(&format!("{pre}.attn.wq"));
        let wk = p.get(&format!("{pre}.attn.wk"));
        let wv = p.get(&format!("{pre}.attn.wv"));
        let a = if cfg.dims.literal_fig2_kqv {
            let k = g.matmul(x, wk)?;
            let q = g.matmul(m_f, wq)?;
            let v = g.matmul(x, wv)?;
            attend_literal(g, q, spans, k, v, &opts, trace.as_deref_mut())?
        } else {
            let q = g.matmul(x, wq)?;
            let k = g.matmul(m_f, wk)?;
            let v = g.matmul(m_f, wv)?;
            attend(g, q, &q_spans, k, v, spans, &opts, trace.as_deref_mut())?
        };
        let a = linear(g, p, a, &format!("{pre}.attn.out"))?;
        x = residual_norm(g, x, a)?;
        let m = mlp2(g, p, x, &format!("{pre}.mlp"))?;
        x = residual_norm(g, x, m)?;
    }
    Ok(x)
}

#[derive(Clone, Copy, Debug)]
pub struct ActionOutputs {
    pub logits: Var,
    pub log_probs: Var,
    pub probs: Var,
    pub h_new: Var,
}

/// Batched action network. Row `b` uses `obs[b]`, `buffers[b]`, `hidden[b]`.
pub fn action_forward(
    g: &mut Graph,
    p: &Bound,
    cfg: &ActorConfig,
    obs: &[&[f64]],
    buffers: &[&[Message]],
    hidden: &[&[f64]],
) -> Result<ActionOutputs, NetError> {
    if obs.len() != buffers.len() || obs.len() != hidden.len() {
        return Err(NetError::Batch("observations, buffers and hidden states"));
    }
    let o_f = obs_features(g, p, cfg, obs)?;
    let (m_f, spans) = encode_messages(g, p, cfg, buffers, None)?;
    let pooled = pool(g, m_f, &spans)?;
    let x = g.concat(&[o_f, pooled], 1)?;
    let h = stack_rows(g, hidden, cfg.dims.d_h, "hidden state")?;
    let h_new = gru_cell(g, x, h, &gru_params(p))?;
    let logits = mlp2(g, p, h_new, "act")?;
    let log_probs = g.log_softmax(logits);
    let probs = g.softmax(logits, 1)?;
    Ok(ActionOutputs {
        logits,
        log_probs,
        probs,
        h_new,
    })
}

/// Batched message network. `masks[b]` flags occupied teammate slots; the
/// "do not send" option is always available. Returns `[B × (k + 1)]`
/// probabilities with exact zeros on empty slots.
pub fn comm_forward(
    g: &mut Graph,
    p: &Bound,
    cfg: &ActorConfig,
    obs: &[&[f64]],
    buffers: &[&[Message]],
    masks: &[&[bool]],
    mut trace: Option<&mut AttnTrace>,
) -> Result<Var, NetError> {
    if obs.len() != buffers.len() || obs.len() != masks.len() {
        return Err(NetError::Batch("observations, buffers and masks"));
    }
    let mut flat = Vec::with_capacity(masks.len() * cfg.comm_options());
    for m in masks {
        if m.len() != cfg.k_neighbors {
            return Err(NetError::InputLength {
                what: "neighbor mask",
                expected: cfg.k_neighbors,
                got: m.len(),
            });
        }
        flat.push(true);
        flat.extend_from_slice(m);
    }
    let o_f = obs_features(g, p, cfg, obs)?;
    let (m_f, spans) = encode_messages(g, p, cfg, buffers, trace.as_deref_mut())?;
    let m_dec = decode(g, p, cfg, o_f, m_f, &spans, trace)?;
    let logits = mlp2(g, p, m_dec, "comm")?;
    Ok(g.masked_softmax(logits, &flat)?)
}
