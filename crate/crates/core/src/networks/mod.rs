//! Shared actor and centralized critic.
//!
//! The actor has two halves that share an observation encoder and a message
//! encoder:
//!
//! * the action network, `o -> o_f`, `GRU(o_f ++ mean(m_f), h) -> h'`, then
//!   five action logits;
//! * the message network, which embeds every buffered message, runs the
//!   encoder stack to get `m_f`, decodes with `m_dec^0 = proj(o_f)` as the
//!   query, and produces logits over "do not send" plus each teammate slot.
//!
//! Every parameter shape depends only on the observation layout and the
//! network dimensions, so one actor runs unchanged with any number of agents.

mod actor;
mod attention;
mod critic;
mod manifest;

pub use actor::{action_forward, comm_forward, Actor, ActorConfig, ActionOutputs, NetDims};
pub use attention::AttnTrace;
pub use critic::{critic_forward, Critic};
pub use manifest::{manifest, manifest_hash, ParamManifest};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::autodiff::optim::{Bound, ParamStore};
use crate::autodiff::{AutodiffError, Graph, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("{what}: expected length {expected}, got {got}")]
    InputLength {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("batch inputs disagree in size: {0}")]
    Batch(&'static str),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("unexpected parameter `{0}`")]
    UnexpectedParam(String),
    #[error("parameter `{name}` has shape {got:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
}

/// Inserts `{name}.w` (`[fan_in × fan_out]`, scaled normal) and `{name}.b`
/// (zeros).
pub(crate) fn init_linear<R: Rng + ?Sized>(
    store: &mut ParamStore,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    gain: f64,
    rng: &mut R,
) {
    store.insert(format!("{name}.w"), init_normal(&[fan_in, fan_out], gain / (fan_in as f64).sqrt(), rng));
    store.insert(format!("{name}.b"), Tensor::zeros(&[1, fan_out]));
}

pub(crate) fn init_normal<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let dist = Normal::new(0.0, std).expect("finite std");
    let data = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

pub(crate) fn linear(g: &mut Graph, p: &Bound, x: Var, name: &str) -> Result<Var, NetError> {
    let y = g.matmul(x, p.get(&format!("{name}.w")))?;
    Ok(g.add(y, p.get(&format!("{name}.b")))?)
}

/// Two layers with a ReLU in between.
pub(crate) fn mlp2(g: &mut Graph, p: &Bound, x: Var, name: &str) -> Result<Var, NetError> {
    let h = linear(g, p, x, &format!("{name}.l1"))?;
    let h = g.relu(h);
    linear(g, p, h, &format!("{name}.l2"))
}

/// Stacks equal-length rows into a constant `[rows × len]` matrix.
pub(crate) fn stack_rows(g: &mut Graph, rows: &[&[f64]], len: usize, what: &'static str) -> Result<Var, NetError> {
    let mut data = Vec::with_capacity(rows.len() * len);
    for r in rows {
        if r.len() != len {
            return Err(NetError::InputLength {
                what,
                expected: len,
                got: r.len(),
            });
        }
        data.extend_from_slice(r);
    }
    Ok(g.constant(Tensor::new(vec![rows.len(), len], data)?))
}

/// Checks that `store` holds exactly the names and shapes of `reference`.
pub(crate) fn check_shapes(reference: &ParamStore, store: &ParamStore) -> Result<(), NetError> {
    for (name, t) in reference.iter() {
        let got = store.get(name).ok_or_else(|| NetError::MissingParam(name.to_string()))?;
        if got.shape() != t.shape() {
            return Err(NetError::ParamShape {
                name: name.to_string(),
                expected: t.shape().to_vec(),
                got: got.shape().to_vec(),
            });
        }
    }
    if let Some((extra, _)) = store.iter().find(|(n, _)| reference.get(n).is_none()) {
        return Err(NetError::UnexpectedParam(extra.to_string()));
    }
    Ok(())
}
