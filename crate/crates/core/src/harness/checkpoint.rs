use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::{HarnessError, RunConfig};
use crate::autodiff::optim::{Adam, AdamConfig, ParamStore};
use crate::autodiff::Tensor;
use crate::networks::{Actor, ActorConfig, Critic};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TEMCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

const GROUPS: [&str; 6] = ["actor", "critic", "actor.adam_m", "actor.adam_v", "critic.adam_m", "critic.adam_v"];

/// Everything needed to resume training or evaluate a policy.
///
/// Layout, all little-endian: magic, `u32` version, length-prefixed config
/// text, RNG seed (32 bytes), stream (`u64`) and word position (`u128`),
/// iteration and env-step counters, both Adam step counts, then a `u64`
/// tensor count followed by tensors as length-prefixed UTF-8 name, `u64`
/// rank, `u64` dims and raw `f64` data. Tensor names carry a group prefix
/// such as `actor/` or `critic.adam_m/`.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub iteration: u64,
    pub env_steps: u64,
    pub rng: ChaCha8Rng,
    pub actor: ParamStore,
    pub critic: ParamStore,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], HarnessError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            HarnessError::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, HarnessError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize, HarnessError> {
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|&v| v <= self.bytes.len())
            .ok_or_else(|| HarnessError::Checkpoint(format!("implausible length {v}")))
    }

    fn string(&mut self) -> Result<String, HarnessError> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| HarnessError::Checkpoint(e.to_string()))
    }
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u64(out, s.len() as u64);
    out.extend_from_slice(s.as_bytes());
}

impl Checkpoint {
    pub fn actor_config(&self) -> ActorConfig {
        ActorConfig::for_scenario(&self.config.scenario, self.config.net)
    }

    /// Actor rebuilt for the stored scenario, with shape checks.
    pub fn load_actor(&self) -> Result<Actor, HarnessError> {
        Ok(Actor::from_params(self.actor_config(), self.actor.clone())?)
    }

    /// Critic rebuilt for the stored scenario; fails if the global-state
    /// width does not match.
    pub fn load_critic(&self) -> Result<Critic, HarnessError> {
        Ok(Critic::from_params(
            self.config.scenario.global_state_len(),
            self.config.critic_hidden,
            self.critic.clone(),
        )?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_str(&mut out, &self.config.to_text());
        out.extend_from_slice(&self.rng.get_seed());
        put_u64(&mut out, self.rng.get_stream());
        out.extend_from_slice(&self.rng.get_word_pos().to_le_bytes());
        put_u64(&mut out, self.iteration);
        put_u64(&mut out, self.env_steps);
        put_u64(&mut out, self.actor_opt.step);
        put_u64(&mut out, self.critic_opt.step);

        let stores = [
            &self.actor,
            &self.critic,
            &self.actor_opt.first,
            &self.actor_opt.second,
            &self.critic_opt.first,
            &self.critic_opt.second,
        ];
        put_u64(&mut out, stores.iter().map(|s| s.len() as u64).sum());
        for (group, store) in GROUPS.iter().zip(stores) {
            for (name, t) in store.iter() {
                put_str(&mut out, &format!("{group}/{name}"));
                put_u64(&mut out, t.shape().len() as u64);
                for &d in t.shape() {
                    put_u64(&mut out, d as u64);
                }
                for &x in t.data() {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, HarnessError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(HarnessError::Checkpoint("bad magic, not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(HarnessError::Checkpoint(format!("unsupported version {version}")));
        }
        let config = RunConfig::from_text(&r.string()?)?;
        let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        let iteration = r.u64()?;
        let env_steps = r.u64()?;
        let actor_step = r.u64()?;
        let critic_step = r.u64()?;

        let mut stores: [ParamStore; 6] = Default::default();
        let count = r.u64()?;
        for _ in 0..count {
            let full = r.string()?;
            let (group, name) = full
                .split_once('/')
                .ok_or_else(|| HarnessError::Checkpoint(format!("tensor `{full}` has no group prefix")))?;
            let gi = GROUPS
                .iter()
                .position(|g| *g == group)
                .ok_or_else(|| HarnessError::Checkpoint(format!("unknown tensor group `{group}`")))?;
            let rank = r.len()?;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.len()?);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(8).ok_or_else(|| HarnessError::Checkpoint("tensor too large".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| HarnessError::Checkpoint(format!("{full}: {e}")))?;
            stores[gi].insert(name, t);
        }
        if r.pos != bytes.len() {
            return Err(HarnessError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let [actor, critic, am, av, cm, cv] = stores;
        let adam = |lr, step, first, second| Adam {
            config: AdamConfig::with_lr(lr),
            step,
            first,
            second,
        };
        let ckpt = Checkpoint {
            actor_opt: adam(config.hyper.actor_lr, actor_step, am, av),
            critic_opt: adam(config.hyper.critic_lr, critic_step, cm, cv),
            config,
            iteration,
            env_steps,
            rng,
            actor,
            critic,
        };
        ckpt.load_actor()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        fs::write(path, self.to_bytes()).map_err(|e| HarnessError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let bytes = fs::read(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            HarnessError::Checkpoint(m) => HarnessError::Format {
                path: path.to_path_buf(),
                message: m,
            },
            e => e,
        })
    }
}
