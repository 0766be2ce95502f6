//! Fixed-layout token encoding of a [`WorldState`] for the Q-network.

use super::env::Simulator;
use super::scenario::{EntityKind, Scenario};
use super::state::{Activity, TaskPhase, WorldState};

/// Bumped whenever the feature layout changes.
pub const LAYOUT_VERSION: u32 = 1;

/// Largest human or robot team the identity one-hot can express.
pub const MAX_TEAM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenGroup {
    Humans,
    Robots,
    Machines,
    Materials,
    Tasks,
}

impl TokenGroup {
    pub const ALL: [TokenGroup; 5] = [
        TokenGroup::Humans,
        TokenGroup::Robots,
        TokenGroup::Machines,
        TokenGroup::Materials,
        TokenGroup::Tasks,
    ];

    /// Per-token feature width for a scenario. Independent of team size and
    /// order quantity so one network serves every such variant.
    pub fn width(self, sc: &Scenario) -> usize {
        let common = (sc.n_tasks() + 1) + (sc.max_subtasks() + 1) + 1 + 4;
        match self {
            TokenGroup::Humans | TokenGroup::Robots => MAX_TEAM + common + 2,
            TokenGroup::Machines => sc.machines.len() + common,
            TokenGroup::Materials => sc.materials.len() + common,
            TokenGroup::Tasks => sc.n_tasks() + 4 + 4,
        }
    }

    fn kind(self) -> Option<EntityKind> {
        match self {
            TokenGroup::Humans => Some(EntityKind::Human),
            TokenGroup::Robots => Some(EntityKind::Robot),
            TokenGroup::Machines => Some(EntityKind::Machine),
            TokenGroup::Materials => Some(EntityKind::Material),
            TokenGroup::Tasks => None,
        }
    }
}

/// Row-major token matrices, one per [`TokenGroup`] in `TokenGroup::ALL` order.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedState {
    pub groups: Vec<GroupTokens>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupTokens {
    pub group: TokenGroup,
    pub rows: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl EncodedState {
    pub fn group(&self, g: TokenGroup) -> &GroupTokens {
        &self.groups[TokenGroup::ALL.iter().position(|&x| x == g).unwrap()]
    }

    pub fn token_count(&self) -> usize {
        self.groups.iter().map(|g| g.rows).sum()
    }
}

fn activity_slot(a: Activity) -> usize {
    match a {
        Activity::Idle => 0,
        Activity::Reserved => 1,
        Activity::Moving => 2,
        Activity::Working => 3,
    }
}

fn phase_slot(p: TaskPhase) -> usize {
    match p {
        TaskPhase::Locked => 0,
        TaskPhase::Available => 1,
        TaskPhase::InProgress => 2,
        TaskPhase::Done => 3,
    }
}

/// Encodes the state. Panics if a team exceeds [`MAX_TEAM`]; callers check
/// team sizes when building an agent.
pub fn encode_state(sim: &Simulator, state: &WorldState) -> EncodedState {
    let sc = sim.scenario();
    assert!(
        sc.n_humans <= MAX_TEAM && sc.n_robots <= MAX_TEAM,
        "team larger than {MAX_TEAM}"
    );
    let n_tasks = sc.n_tasks();
    let max_sub = sc.max_subtasks();
    let order = sc.order_quantity;
    let mut groups = Vec::with_capacity(5);
    for g in TokenGroup::ALL {
        let width = g.width(sc);
        let mut data = Vec::new();
        let mut rows = 0;
        match g.kind() {
            Some(kind) => {
                let id_width = match kind {
                    EntityKind::Human | EntityKind::Robot => MAX_TEAM,
                    EntityKind::Machine => sc.machines.len(),
                    EntityKind::Material => sc.materials.len(),
                };
                for e in state.entities_of(kind) {
                    let mut row = vec![0.0; width];
                    row[e.local_index] = 1.0;
                    let mut o = id_width;
                    row[o + e.current_task.unwrap_or(n_tasks)] = 1.0;
                    o += n_tasks + 1;
                    row[o + e.current_subtask.unwrap_or(max_sub)] = 1.0;
                    o += max_sub + 1;
                    row[o] = e.progress;
                    o += 1;
                    row[o + activity_slot(e.activity)] = 1.0;
                    o += 4;
                    if let Some(p) = e.position {
                        row[o] = p.x / sc.world_width;
                        row[o + 1] = p.y / sc.world_height;
                        o += 2;
                    }
                    debug_assert_eq!(o, width);
                    data.extend(row);
                    rows += 1;
                }
            }
            None => {
                let time = f64::from(state.tick) / f64::from(sc.horizon);
                for (i, (t, s)) in sc.tasks.iter().zip(&state.task_status).enumerate() {
                    let mut row = vec![0.0; width];
                    row[i] = 1.0;
                    row[n_tasks + phase_slot(s.phase)] = 1.0;
                    let o = n_tasks + 4;
                    row[o] = f64::from(s.completed.min(t.target(order))) / f64::from(t.target(order));
                    row[o + 1] = f64::from(t.needs_human as u8);
                    row[o + 2] = f64::from(t.needs_robot as u8);
                    row[o + 3] = time;
                    data.extend(row);
                    rows += 1;
                }
            }
        }
        groups.push(GroupTokens {
            group: g,
            rows,
            width,
            data,
        });
    }
    EncodedState { groups }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{builtin, Scenario};

    #[test]
    fn widths_are_stable_across_team_and_order() {
        let sc = Scenario::from_json(builtin::DEFAULT).unwrap();
        let sim_a = Simulator::new(sc.clone()).unwrap();
        let sim_b = Simulator::new(sc.with_team(3, 1).unwrap().with_order(2).unwrap()).unwrap();
        let a = encode_state(&sim_a, &sim_a.reset(1));
        let b = encode_state(&sim_b, &sim_b.reset(1));
        for (ga, gb) in a.groups.iter().zip(&b.groups) {
            assert_eq!(ga.width, gb.width);
            assert_eq!(ga.data.len(), ga.rows * ga.width);
        }
        assert_eq!(a.group(TokenGroup::Humans).rows, 2);
        assert_eq!(b.group(TokenGroup::Humans).rows, 3);
        assert_eq!(a.group(TokenGroup::Tasks).rows, 9);
    }

    #[test]
    fn every_value_is_bounded() {
        let sc = Scenario::from_json(builtin::DEFAULT).unwrap();
        let sim = Simulator::new(sc).unwrap();
        let enc = encode_state(&sim, &sim.reset(3));
        for g in &enc.groups {
            assert!(g.data.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
