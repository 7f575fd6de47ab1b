use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_shapes, init_linear, linear, stack_rows, NetError};
use crate::autodiff::optim::{Bound, ParamStore};
use crate::autodiff::{Graph, Var};

/// Centralized value function over the agent-centric global state.
///
/// The input is an ordered concatenation, so the value is not invariant to
/// permuting agents.
#[derive(Clone, Debug, PartialEq)]
pub struct Critic {
    pub input_len: usize,
    pub hidden: usize,
    pub params: ParamStore,
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(input_len: usize, hidden: usize, rng: &mut R) -> Self {
        let mut p = ParamStore::new();
        init_linear(&mut p, "critic.l1", input_len, hidden, 1.0, rng);
        init_linear(&mut p, "critic.l2", hidden, hidden, 1.0, rng);
        init_linear(&mut p, "critic.l3", hidden, 1, 1.0, rng);
        Self {
            input_len,
            hidden,
            params: p,
        }
    }

    pub fn from_params(input_len: usize, hidden: usize, params: ParamStore) -> Result<Self, NetError> {
        let reference = Self::new(input_len, hidden, &mut ChaCha8Rng::seed_from_u64(0)).params;
        check_shapes(&reference, &params)?;
        Ok(Self {
            input_len,
            hidden,
            params,
        })
    }

    /// Values for a batch of global states, without gradients.
    pub fn values(&self, states: &[&[f64]]) -> Result<Vec<f64>, NetError> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let v = critic_forward(&mut g, &p, self.input_len, states)?;
        Ok(g.value(v).data().to_vec())
    }
}

/// `[B × input_len] -> [B × 1]`.
pub fn critic_forward(g: &mut Graph, p: &Bound, input_len: usize, states: &[&[f64]]) -> Result<Var, NetError> {
    let x = stack_rows(g, states, input_len, "global state")?;
    let h = linear(g, p, x, "critic.l1")?;
    let h = g.tanh(h);
    let h = linear(g, p, h, "critic.l2")?;
    let h = g.tanh(h);
    linear(g, p, h, "critic.l3")
}
