//! Trajectory export for offline inspection.

use std::io::{self, Write};

use super::world::WorldState;
use super::{ScenarioConfig, ScenarioKind};

pub const TRAJECTORY_HEADER: &str = "step,entity_id,kind,x,y,vx,vy";

/// Appends one row per entity for the given state. Agents come first, then
/// targets, with entity ids continuing after the agents.
pub fn write_trajectory_rows<W: Write>(
    out: &mut W,
    config: &ScenarioConfig,
    state: &WorldState,
) -> io::Result<()> {
    let target_kind = match config.kind {
        ScenarioKind::PredatorPrey => "prey",
        ScenarioKind::CooperativeNavigation => "landmark",
    };
    let n = state.agent_pos.len();
    for i in 0..n {
        let (p, v) = (state.agent_pos[i], state.agent_vel[i]);
        writeln!(out, "{},{},agent,{},{},{},{}", state.step_index, i, p[0], p[1], v[0], v[1])?;
    }
    for k in 0..state.target_pos.len() {
        let (p, v) = (state.target_pos[k], state.target_vel[k]);
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            state.step_index,
            n + k,
            target_kind,
            p[0],
            p[1],
            v[0],
            v[1]
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::reset;

    #[test]
    fn writes_one_row_per_entity() {
        let c = ScenarioConfig::predator_prey(3, 1);
        let s = reset(&c, 0);
        let mut buf = Vec::new();
        write_trajectory_rows(&mut buf, &c, &s).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("0,3,prey,"));
        assert_eq!(lines[0].split(',').count(), TRAJECTORY_HEADER.split(',').count());
    }
}
