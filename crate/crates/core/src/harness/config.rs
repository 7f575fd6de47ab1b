use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use super::HarnessError;
use crate::env::ScenarioConfig;
use crate::learning::Hyperparams;
use crate::networks::NetDims;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algo {
    /// Learned communication with the causal-effect objective.
    Tem,
    /// Same actor, communication disabled.
    Mappo,
    /// Always forward to a random teammate that has not sent yet.
    Fc,
    /// As `Fc`, but stop with probability `rc_stop_prob` at every hop.
    Rc,
}

impl Algo {
    pub fn tag(self) -> &'static str {
        match self {
            Algo::Tem => "tem",
            Algo::Mappo => "mappo",
            Algo::Fc => "fc",
            Algo::Rc => "rc",
        }
    }
}

impl FromStr for Algo {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tem" => Ok(Algo::Tem),
            "mappo" => Ok(Algo::Mappo),
            "fc" => Ok(Algo::Fc),
            "rc" => Ok(Algo::Rc),
            _ => Err(HarnessError::Config(format!("unknown algo `{s}`"))),
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub algo: Algo,
    pub rc_stop_prob: f64,
    pub hyper: Hyperparams,
    pub net: NetDims,
    pub critic_hidden: usize,
    pub buffer_capacity: usize,
    pub total_env_steps: usize,
    /// Environment steps collected per update; rounded up to whole episodes.
    pub steps_per_iteration: usize,
    /// Update iterations between greedy evaluations; 0 disables them.
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::cooperative_navigation(3, 3),
            algo: Algo::Tem,
            rc_stop_prob: 0.5,
            hyper: Hyperparams::default(),
            net: NetDims::default(),
            critic_hidden: 64,
            buffer_capacity: crate::comm::DEFAULT_BUFFER_CAPACITY,
            total_env_steps: 200_000,
            steps_per_iteration: 1_000,
            eval_every: 20,
            eval_episodes: 10,
            seed: 0,
            out: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, HarnessError> {
    value
        .parse()
        .map_err(|_| HarnessError::Config(format!("invalid value `{value}` for `{key}`")))
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.scenario.validate()?;
        self.hyper.validate().map_err(HarnessError::Config)?;
        if self.algo == Algo::Rc && !(0.0..=1.0).contains(&self.rc_stop_prob) {
            return Err(HarnessError::Config(format!(
                "rc_stop_prob must lie in [0, 1], got {}",
                self.rc_stop_prob
            )));
        }
        if self.net.d_h == 0 || self.net.d_model == 0 || self.critic_hidden == 0 {
            return Err(HarnessError::Config("network sizes must be positive".into()));
        }
        if self.steps_per_iteration == 0 {
            return Err(HarnessError::Config("steps_per_iteration must be positive".into()));
        }
        Ok(())
    }

    /// Episodes collected per update iteration.
    pub fn episodes_per_iteration(&self) -> usize {
        self.steps_per_iteration.div_ceil(self.scenario.episode_len)
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        let s = &mut self.scenario;
        let h = &mut self.hyper;
        let n = &mut self.net;
        match key {
            "scenario" => {
                let base: ScenarioConfig = value.parse()?;
                s.kind = base.kind;
                s.n_agents = base.n_agents;
                s.n_targets = base.n_targets;
            }
            "scenario.episode_len" => s.episode_len = parse(key, value)?,
            "scenario.world_half_extent" => s.world_half_extent = parse(key, value)?,
            "scenario.obs_radius" => s.obs_radius = parse(key, value)?,
            "scenario.k_neighbors" => s.k_neighbors = parse(key, value)?,
            "scenario.l_targets" => s.l_targets = parse(key, value)?,
            "scenario.dt" => s.dt = parse(key, value)?,
            "scenario.damping" => s.damping = parse(key, value)?,
            "scenario.accel" => s.accel = parse(key, value)?,
            "scenario.agent_max_speed" => s.agent_max_speed = parse(key, value)?,
            "scenario.prey_speed_factor" => s.prey_speed_factor = parse(key, value)?,
            "scenario.capture_radius" => s.capture_radius = parse(key, value)?,
            "scenario.capture_min_predators" => s.capture_min_predators = parse(key, value)?,
            "scenario.occupy_radius" => s.occupy_radius = parse(key, value)?,
            "scenario.collision_dist" => s.collision_dist = parse(key, value)?,
            "scenario.collision_penalty" => s.collision_penalty = parse(key, value)?,
            "algo" => self.algo = value.parse()?,
            "rc_stop_prob" => self.rc_stop_prob = parse(key, value)?,
            "hyper.gamma" => h.gamma = parse(key, value)?,
            "hyper.gae_lambda" => h.gae_lambda = parse(key, value)?,
            "hyper.clip_eps" => h.clip_eps = parse(key, value)?,
            "hyper.lambda_m" => h.lambda_m = parse(key, value)?,
            "hyper.lambda_e" => h.lambda_e = parse(key, value)?,
            "hyper.delta" => h.delta = parse(key, value)?,
            "hyper.actor_lr" => h.actor_lr = parse(key, value)?,
            "hyper.critic_lr" => h.critic_lr = parse(key, value)?,
            "hyper.epochs" => h.epochs = parse(key, value)?,
            "hyper.minibatches" => h.minibatches = parse(key, value)?,
            "hyper.max_grad_norm" => h.max_grad_norm = parse(key, value)?,
            "net.d_h" => n.d_h = parse(key, value)?,
            "net.d_model" => n.d_model = parse(key, value)?,
            "net.n_enc" => n.n_enc = parse(key, value)?,
            "net.n_dec" => n.n_dec = parse(key, value)?,
            "net.attention_double_exp" => n.attention_double_exp = parse(key, value)?,
            "net.literal_fig2_kqv" => n.literal_fig2_kqv = parse(key, value)?,
            "net.critic_hidden" => self.critic_hidden = parse(key, value)?,
            "comm.buffer_capacity" => self.buffer_capacity = parse(key, value)?,
            "total_env_steps" => self.total_env_steps = parse(key, value)?,
            "steps_per_iteration" => self.steps_per_iteration = parse(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "eval_episodes" => self.eval_episodes = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "out" => self.out = Some(PathBuf::from(value)),
            _ => return Err(HarnessError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Parses flat `key = value` text. `#` starts a comment. The `scenario`
    /// key is applied first so that dotted scenario keys refine it regardless
    /// of line order.
    pub fn from_text(text: &str) -> Result<Self, HarnessError> {
        let mut pairs = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected `key = value`", no + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut cfg = Self::default();
        pairs.sort_by_key(|(k, _)| k != "scenario");
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form; [`RunConfig::from_text`] reads it back exactly.
    pub fn to_text(&self) -> String {
        let s = &self.scenario;
        let h = &self.hyper;
        let n = &self.net;
        let mut lines = vec![
            format!("scenario = {}", s.label()),
            format!("scenario.episode_len = {}", s.episode_len),
            format!("scenario.world_half_extent = {:?}", s.world_half_extent),
            format!("scenario.obs_radius = {:?}", s.obs_radius),
            format!("scenario.k_neighbors = {}", s.k_neighbors),
            format!("scenario.l_targets = {}", s.l_targets),
            format!("scenario.dt = {:?}", s.dt),
            format!("scenario.damping = {:?}", s.damping),
            format!("scenario.accel = {:?}", s.accel),
            format!("scenario.agent_max_speed = {:?}", s.agent_max_speed),
            format!("scenario.prey_speed_factor = {:?}", s.prey_speed_factor),
            format!("scenario.capture_radius = {:?}", s.capture_radius),
            format!("scenario.capture_min_predators = {}", s.capture_min_predators),
            format!("scenario.occupy_radius = {:?}", s.occupy_radius),
            format!("scenario.collision_dist = {:?}", s.collision_dist),
            format!("scenario.collision_penalty = {:?}", s.collision_penalty),
            format!("algo = {}", self.algo),
            format!("rc_stop_prob = {:?}", self.rc_stop_prob),
            format!("hyper.gamma = {:?}", h.gamma),
            format!("hyper.gae_lambda = {:?}", h.gae_lambda),
            format!("hyper.clip_eps = {:?}", h.clip_eps),
            format!("hyper.lambda_m = {:?}", h.lambda_m),
            format!("hyper.lambda_e = {:?}", h.lambda_e),
            format!("hyper.delta = {:?}", h.delta),
            format!("hyper.actor_lr = {:?}", h.actor_lr),
            format!("hyper.critic_lr = {:?}", h.critic_lr),
            format!("hyper.epochs = {}", h.epochs),
            format!("hyper.minibatches = {}", h.minibatches),
            format!("hyper.max_grad_norm = {:?}", h.max_grad_norm),
            format!("net.d_h = {}", n.d_h),
            format!("net.d_model = {}", n.d_model),
            format!("net.n_enc = {}", n.n_enc),
            format!("net.n_dec = {}", n.n_dec),
            format!("net.attention_double_exp = {}", n.attention_double_exp),
            format!("net.literal_fig2_kqv = {}", n.literal_fig2_kqv),
            format!("net.critic_hidden = {}", self.critic_hidden),
            format!("comm.buffer_capacity = {}", self.buffer_capacity),
            format!("total_env_steps = {}", self.total_env_steps),
            format!("steps_per_iteration = {}", self.steps_per_iteration),
            format!("eval_every = {}", self.eval_every),
            format!("eval_episodes = {}", self.eval_episodes),
            format!("seed = {}", self.seed),
        ];
        if let Some(out) = &self.out {
            lines.push(format!("out = {}", out.display()));
        }
        let mut text = lines.join("\n");
        text.push('\n');
        text
    }
}
