use std::fmt;
use std::str::FromStr;

use super::EnvError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScenarioKind {
    /// Predators chase faster, scripted prey.
    PredatorPrey,
    /// Agents spread out over stationary landmarks.
    CooperativeNavigation,
}

impl ScenarioKind {
    pub fn tag(self) -> &'static str {
        match self {
            ScenarioKind::PredatorPrey => "pp",
            ScenarioKind::CooperativeNavigation => "cn",
        }
    }

    /// Features per target slot: valid flag + relative position, plus
    /// relative velocity for moving prey.
    pub fn target_slot_len(self) -> usize {
        match self {
            ScenarioKind::PredatorPrey => 5,
            ScenarioKind::CooperativeNavigation => 3,
        }
    }
}

impl FromStr for ScenarioKind {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pp" | "predator_prey" => Ok(ScenarioKind::PredatorPrey),
            "cn" | "cooperative_navigation" => Ok(ScenarioKind::CooperativeNavigation),
            _ => Err(EnvError::Scenario(format!("unknown scenario kind `{s}`"))),
        }
    }
}

/// Everything that defines a scenario. Lengths are world units, times are
/// seconds, rewards are per step.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub n_agents: usize,
    /// Prey for predator-prey, landmarks for navigation.
    pub n_targets: usize,
    pub episode_len: usize,
    pub world_half_extent: f64,
    pub obs_radius: f64,
    pub k_neighbors: usize,
    pub l_targets: usize,
    pub dt: f64,
    pub damping: f64,
    pub accel: f64,
    pub agent_max_speed: f64,
    pub prey_speed_factor: f64,
    pub capture_radius: f64,
    pub capture_min_predators: usize,
    pub occupy_radius: f64,
    pub collision_dist: f64,
    pub collision_penalty: f64,
}

impl ScenarioConfig {
    fn base(kind: ScenarioKind, n_agents: usize, n_targets: usize) -> Self {
        Self {
            kind,
            n_agents,
            n_targets,
            episode_len: 50,
            world_half_extent: 1.0,
            obs_radius: 0.6,
            k_neighbors: 3,
            l_targets: 2,
            dt: 0.1,
            damping: 0.25,
            accel: 3.0,
            agent_max_speed: 1.0,
            prey_speed_factor: 1.3,
            capture_radius: 0.3,
            capture_min_predators: 3,
            occupy_radius: 0.1,
            collision_dist: 0.1,
            collision_penalty: 1.0,
        }
    }

    pub fn predator_prey(n_agents: usize, n_prey: usize) -> Self {
        Self::base(ScenarioKind::PredatorPrey, n_agents, n_prey)
    }

    pub fn cooperative_navigation(n_agents: usize, n_landmarks: usize) -> Self {
        Self::base(ScenarioKind::CooperativeNavigation, n_agents, n_landmarks)
    }

    pub fn new(kind: ScenarioKind, n_agents: usize, n_targets: usize) -> Self {
        Self::base(kind, n_agents, n_targets)
    }

    /// Short label such as `pp:7-3`.
    pub fn label(&self) -> String {
        format!("{}:{}-{}", self.kind.tag(), self.n_agents, self.n_targets)
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::Scenario(m.to_string()));
        if self.n_agents == 0 {
            return bad("n_agents must be at least 1");
        }
        if self.episode_len == 0 {
            return bad("episode_len must be positive");
        }
        for (name, v) in [
            ("world_half_extent", self.world_half_extent),
            ("obs_radius", self.obs_radius),
            ("capture_radius", self.capture_radius),
            ("occupy_radius", self.occupy_radius),
            ("collision_dist", self.collision_dist),
            ("dt", self.dt),
            ("agent_max_speed", self.agent_max_speed),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(EnvError::Scenario(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.damping) {
            return bad("damping must lie in [0, 1)");
        }
        if self.kind == ScenarioKind::PredatorPrey && !(self.prey_speed_factor > 1.0) {
            return bad("prey_speed_factor must exceed 1");
        }
        Ok(())
    }

    /// Observation length; depends only on slot counts and kind.
    pub fn obs_len(&self) -> usize {
        4 + 5 * self.k_neighbors + self.kind.target_slot_len() * self.l_targets
    }

    /// Length of the critic's global-state vector.
    pub fn global_state_len(&self) -> usize {
        let per_target = match self.kind {
            ScenarioKind::PredatorPrey => 4,
            ScenarioKind::CooperativeNavigation => 2,
        };
        4 * self.n_agents + per_target * self.n_targets
    }
}

/// `<pp|cn>:<N>-<M>` scenario label.
impl FromStr for ScenarioConfig {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || EnvError::Scenario(format!("expected `<pp|cn>:<N>-<M>`, got `{s}`"));
        let (kind, counts) = s.trim().split_once(':').ok_or_else(err)?;
        let (n, m) = counts.split_once('-').ok_or_else(err)?;
        let kind: ScenarioKind = kind.parse()?;
        let n: usize = n.parse().map_err(|_| err())?;
        let m: usize = m.parse().map_err(|_| err())?;
        let cfg = Self::new(kind, n, m);
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for ScenarioConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}
