use super::world::{Vec2, WorldState};
use super::{ScenarioConfig, ScenarioKind};

/// Fixed-length local view of one agent.
///
/// Layout: `[pos(2), vel(2)]`, then `k_neighbors` teammate slots of
/// `[valid, rel_pos(2), rel_vel(2)]` nearest first, then `l_targets` target
/// slots of `[valid, rel_pos(2)]` (plus `rel_vel(2)` for prey). Empty slots
/// are all zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub data: Vec<f64>,
    /// Agent id behind each teammate slot. Routing metadata only; the
    /// networks never see ids.
    pub neighbors: Vec<Option<usize>>,
    pub targets: Vec<Option<usize>>,
}

impl Observation {
    /// Occupancy of the teammate slots.
    pub fn neighbor_mask(&self) -> Vec<bool> {
        self.neighbors.iter().map(Option::is_some).collect()
    }

    pub fn neighbor_distance(&self, slot: usize) -> Option<f64> {
        self.neighbors[slot]?;
        let base = 4 + 5 * slot;
        Some(self.data[base + 1].hypot(self.data[base + 2]))
    }
}

fn dist(a: Vec2, b: Vec2) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Entities within `radius` of `origin`, sorted by distance then index.
fn visible(origin: Vec2, points: &[Vec2], radius: f64, skip: Option<usize>) -> Vec<usize> {
    let mut v: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != skip)
        .map(|(j, &p)| (dist(origin, p), j))
        .filter(|(d, _)| *d <= radius)
        .collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    v.into_iter().map(|(_, j)| j).collect()
}

pub fn observe(config: &ScenarioConfig, state: &WorldState, agent: usize) -> Observation {
    let p = state.agent_pos[agent];
    let v = state.agent_vel[agent];
    let mut data = Vec::with_capacity(config.obs_len());
    data.extend_from_slice(&p);
    data.extend_from_slice(&v);

    let seen = visible(p, &state.agent_pos, config.obs_radius, Some(agent));
    let mut neighbors = Vec::with_capacity(config.k_neighbors);
    for slot in 0..config.k_neighbors {
        match seen.get(slot) {
            Some(&j) => {
                let (q, w) = (state.agent_pos[j], state.agent_vel[j]);
                data.extend_from_slice(&[1.0, q[0] - p[0], q[1] - p[1], w[0] - v[0], w[1] - v[1]]);
                neighbors.push(Some(j));
            }
            None => {
                data.extend_from_slice(&[0.0; 5]);
                neighbors.push(None);
            }
        }
    }

    let slot_len = config.kind.target_slot_len();
    let seen = visible(p, &state.target_pos, config.obs_radius, None);
    let mut targets = Vec::with_capacity(config.l_targets);
    for slot in 0..config.l_targets {
        match seen.get(slot) {
            Some(&k) => {
                let q = state.target_pos[k];
                data.extend_from_slice(&[1.0, q[0] - p[0], q[1] - p[1]]);
                if config.kind == ScenarioKind::PredatorPrey {
                    let w = state.target_vel[k];
                    data.extend_from_slice(&[w[0] - v[0], w[1] - v[1]]);
                }
                targets.push(Some(k));
            }
            None => {
                data.extend(std::iter::repeat_n(0.0, slot_len));
                targets.push(None);
            }
        }
    }
    debug_assert_eq!(data.len(), config.obs_len());
    Observation {
        data,
        neighbors,
        targets,
    }
}

pub fn observe_all(config: &ScenarioConfig, state: &WorldState) -> Vec<Observation> {
    (0..config.n_agents).map(|i| observe(config, state, i)).collect()
}
