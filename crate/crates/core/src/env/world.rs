use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EnvError, ScenarioConfig, ScenarioKind};

pub type Vec2 = [f64; 2];

fn dist(a: Vec2, b: Vec2) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn clamp_speed(v: Vec2, max: f64) -> Vec2 {
    let s = (v[0] * v[0] + v[1] * v[1]).sqrt();
    if s > max {
        [v[0] * max / s, v[1] * max / s]
    } else {
        v
    }
}

/// The five discrete moves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    Noop,
    PosX,
    NegX,
    PosY,
    NegY,
}

impl Action {
    pub const COUNT: usize = 5;

    pub fn from_index(i: usize) -> Result<Self, EnvError> {
        Ok(match i {
            0 => Action::Noop,
            1 => Action::PosX,
            2 => Action::NegX,
            3 => Action::PosY,
            4 => Action::NegY,
            _ => return Err(EnvError::Action(i)),
        })
    }

    pub fn direction(self) -> Vec2 {
        match self {
            Action::Noop => [0.0, 0.0],
            Action::PosX => [1.0, 0.0],
            Action::NegX => [-1.0, 0.0],
            Action::PosY => [0.0, 1.0],
            Action::NegY => [0.0, -1.0],
        }
    }
}

/// Full simulator state. Target velocities are always zero for landmarks.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    pub agent_pos: Vec<Vec2>,
    pub agent_vel: Vec<Vec2>,
    pub target_pos: Vec<Vec2>,
    pub target_vel: Vec<Vec2>,
    pub step_index: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Events {
    /// Prey with enough predators inside the capture radius this step.
    pub captures: usize,
    /// Unordered agent pairs closer than the collision distance.
    pub collisions: usize,
    /// Landmarks with an agent inside the occupation radius.
    pub occupied: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub rewards: Vec<f64>,
    pub events: Events,
    pub done: bool,
}

/// Places every entity uniformly at random with zero velocity.
pub fn reset(config: &ScenarioConfig, seed: u64) -> WorldState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = config.world_half_extent;
    let mut sample = |n: usize| -> Vec<Vec2> {
        (0..n)
            .map(|_| [rng.random_range(-h..=h), rng.random_range(-h..=h)])
            .collect()
    };
    let agent_pos = sample(config.n_agents);
    let target_pos = sample(config.n_targets);
    WorldState {
        agent_vel: vec![[0.0; 2]; config.n_agents],
        target_vel: vec![[0.0; 2]; config.n_targets],
        agent_pos,
        target_pos,
        step_index: 0,
    }
}

/// Index of the closest agent to `p`, lowest index on ties.
fn nearest_agent(state: &WorldState, p: Vec2) -> Option<(usize, f64)> {
    state
        .agent_pos
        .iter()
        .enumerate()
        .map(|(i, &a)| (i, dist(a, p)))
        .fold(None, |best, (i, d)| match best {
            Some((_, bd)) if bd <= d => best,
            _ => Some((i, d)),
        })
}

/// Scripted prey velocity: away from the closest predator at
/// `prey_speed_factor × agent_max_speed`, with any component pushing into a
/// wall the prey already touches set to zero.
pub fn prey_policy(config: &ScenarioConfig, state: &WorldState, prey: usize) -> Vec2 {
    let p = state.target_pos[prey];
    let Some((i, d)) = nearest_agent(state, p) else {
        return [0.0; 2];
    };
    if d == 0.0 {
        return [0.0; 2];
    }
    let a = state.agent_pos[i];
    let speed = config.prey_speed_factor * config.agent_max_speed;
    let mut v = [(p[0] - a[0]) / d * speed, (p[1] - a[1]) / d * speed];
    let h = config.world_half_extent;
    for c in 0..2 {
        if (p[c] >= h && v[c] > 0.0) || (p[c] <= -h && v[c] < 0.0) {
            v[c] = 0.0;
        }
    }
    v
}

/// Collision count per agent and the total pair count.
fn collisions(config: &ScenarioConfig, state: &WorldState) -> (Vec<usize>, usize) {
    let n = state.agent_pos.len();
    let mut per_agent = vec![0; n];
    let mut pairs = 0;
    for i in 0..n {
        for j in i + 1..n {
            if dist(state.agent_pos[i], state.agent_pos[j]) < config.collision_dist {
                per_agent[i] += 1;
                per_agent[j] += 1;
                pairs += 1;
            }
        }
    }
    (per_agent, pairs)
}

/// Shared team term plus each agent's collision penalty.
pub fn compute_reward(config: &ScenarioConfig, state: &WorldState) -> Vec<f64> {
    let team: f64 = match config.kind {
        ScenarioKind::CooperativeNavigation => state
            .target_pos
            .iter()
            .map(|&t| -nearest_agent(state, t).map_or(0.0, |(_, d)| d))
            .sum(),
        ScenarioKind::PredatorPrey if state.target_pos.is_empty() => 0.0,
        ScenarioKind::PredatorPrey => state
            .agent_pos
            .iter()
            .map(|&a| {
                -state
                    .target_pos
                    .iter()
                    .map(|&t| dist(a, t))
                    .fold(f64::INFINITY, f64::min)
            })
            .sum(),
    };
    let (per_agent, _) = collisions(config, state);
    per_agent
        .iter()
        .map(|&c| team - config.collision_penalty * c as f64)
        .collect()
}

pub fn detect_events(config: &ScenarioConfig, state: &WorldState) -> Events {
    let (_, collisions) = collisions(config, state);
    let mut ev = Events {
        collisions,
        ..Events::default()
    };
    match config.kind {
        ScenarioKind::PredatorPrey => {
            ev.captures = state
                .target_pos
                .iter()
                .filter(|&&t| {
                    state
                        .agent_pos
                        .iter()
                        .filter(|&&a| dist(a, t) <= config.capture_radius)
                        .count()
                        >= config.capture_min_predators
                })
                .count();
        }
        ScenarioKind::CooperativeNavigation => {
            ev.occupied = state
                .target_pos
                .iter()
                .filter(|&&t| state.agent_pos.iter().any(|&a| dist(a, t) <= config.occupy_radius))
                .count();
        }
    }
    ev
}

/// Advances the world by one step under the joint action.
pub fn step(
    config: &ScenarioConfig,
    state: &WorldState,
    actions: &[usize],
) -> Result<(WorldState, StepResult), EnvError> {
    if actions.len() != config.n_agents {
        return Err(EnvError::ActionCount {
            expected: config.n_agents,
            got: actions.len(),
        });
    }
    let actions: Vec<Action> = actions
        .iter()
        .map(|&a| Action::from_index(a))
        .collect::<Result<_, _>>()?;
    let h = config.world_half_extent;
    let clamp_pos = |p: Vec2| [p[0].clamp(-h, h), p[1].clamp(-h, h)];

    let mut next = state.clone();
    if config.kind == ScenarioKind::PredatorPrey {
        for k in 0..state.target_pos.len() {
            let v = prey_policy(config, state, k);
            next.target_vel[k] = v;
            next.target_pos[k] = clamp_pos([
                state.target_pos[k][0] + v[0] * config.dt,
                state.target_pos[k][1] + v[1] * config.dt,
            ]);
        }
    }
    for (i, act) in actions.iter().enumerate() {
        let d = act.direction();
        let v = state.agent_vel[i];
        let v = clamp_speed(
            [
                v[0] * (1.0 - config.damping) + config.accel * d[0] * config.dt,
                v[1] * (1.0 - config.damping) + config.accel * d[1] * config.dt,
            ],
            config.agent_max_speed,
        );
        next.agent_vel[i] = v;
        next.agent_pos[i] = clamp_pos([
            state.agent_pos[i][0] + v[0] * config.dt,
            state.agent_pos[i][1] + v[1] * config.dt,
        ]);
    }
    next.step_index += 1;
    let rewards = compute_reward(config, &next);
    let events = detect_events(config, &next);
    let done = next.step_index == config.episode_len;
    Ok((
        next,
        StepResult {
            rewards,
            events,
            done,
        },
    ))
}

/// Agent-centric view of the global state: agent `agent`'s position and
/// velocity first, then the other agents in index order, then the targets.
pub fn global_state(config: &ScenarioConfig, state: &WorldState, agent: usize) -> Vec<f64> {
    let mut s = Vec::with_capacity(config.global_state_len());
    let order = std::iter::once(agent).chain((0..state.agent_pos.len()).filter(|&j| j != agent));
    for j in order {
        s.extend_from_slice(&state.agent_pos[j]);
        s.extend_from_slice(&state.agent_vel[j]);
    }
    for k in 0..state.target_pos.len() {
        s.extend_from_slice(&state.target_pos[k]);
        if config.kind == ScenarioKind::PredatorPrey {
            s.extend_from_slice(&state.target_vel[k]);
        }
    }
    s
}
