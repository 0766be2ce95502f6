//! Low-level entity selection: turns a chosen task into a concrete
//! human/robot assignment.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{Allocation, EntityId, EntityKind, Simulator, WorldState};
use crate::spatial::nearest_free_node;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LowLevelRule {
    /// Nearest idle entity by travel distance.
    Sap,
    /// Uniformly random idle entity.
    NoSpatial,
    /// Farthest idle entity by travel distance.
    LongestPath,
}

impl LowLevelRule {
    pub fn name(self) -> &'static str {
        match self {
            LowLevelRule::Sap => "sap",
            LowLevelRule::NoSpatial => "no_spatial",
            LowLevelRule::LongestPath => "longest_path",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AllocError {
    #[error("action {0} is out of range")]
    BadAction(usize),
    #[error("task `{task}` needs a {kind} but none is idle")]
    Unallocatable { task: String, kind: &'static str },
}

/// Travel distance from an entity to an area node: straight-line snap to the
/// nearest node plus the precomputed path length from there.
pub fn travel_distance(sim: &Simulator, state: &WorldState, entity: EntityId, node: usize) -> f64 {
    let e = &state.entities[entity.0];
    let graph = sim.graph();
    let (from, snap) = match e.at_node() {
        Some(n) => (n, 0.0),
        None => {
            let p = e.position.expect("mobile entity");
            let n = nearest_free_node(p, graph.nodes()).expect("scenario has nodes");
            (n, p.dist(graph.nodes()[n].position))
        }
    };
    snap + graph.distance(from, node).expect("complete node graph")
}

/// Idle entities of `kind` with their travel distance to the task's node,
/// in id order.
pub fn candidate_distances(sim: &Simulator, state: &WorldState, task: usize, kind: EntityKind) -> Vec<(EntityId, f64)> {
    let node = sim.scenario().tasks[task].node;
    state
        .idle_of(kind)
        .map(|e| (e.id, travel_distance(sim, state, e.id, node)))
        .collect()
}

fn pick(cands: &[(EntityId, f64)], rule: LowLevelRule, state: &mut WorldState) -> EntityId {
    use rand::Rng;
    match rule {
        LowLevelRule::Sap => {
            // strict comparison keeps the lowest id on ties
            let mut best = cands[0];
            for &c in &cands[1..] {
                if c.1 < best.1 {
                    best = c;
                }
            }
            best.0
        }
        LowLevelRule::LongestPath => {
            let mut best = cands[0];
            for &c in &cands[1..] {
                if c.1 > best.1 {
                    best = c;
                }
            }
            best.0
        }
        LowLevelRule::NoSpatial => {
            let k = state.rng_mut().random_range(0..cands.len());
            cands[k].0
        }
    }
}

/// Maps an action index to an allocation. The last action is the no-op and
/// yields `Ok(None)`. Only `NoSpatial` consumes the state's random stream.
pub fn allocate(
    sim: &Simulator,
    state: &mut WorldState,
    action: usize,
    rule: LowLevelRule,
) -> Result<Option<Allocation>, AllocError> {
    let sc = sim.scenario();
    if action == sc.n_tasks() {
        return Ok(None);
    }
    let task = sc.tasks.get(action).ok_or(AllocError::BadAction(action))?;
    let mut alloc = Allocation {
        task: action,
        human: None,
        robot: None,
    };
    for (kind, needed) in [(EntityKind::Human, task.needs_human), (EntityKind::Robot, task.needs_robot)] {
        if !needed {
            continue;
        }
        let cands = candidate_distances(sim, state, action, kind);
        if cands.is_empty() {
            return Err(AllocError::Unallocatable {
                task: task.id.clone(),
                kind: kind.label(),
            });
        }
        let id = pick(&cands, rule, state);
        match kind {
            EntityKind::Human => alloc.human = Some(id),
            _ => alloc.robot = Some(id),
        }
    }
    Ok(Some(alloc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{builtin, Scenario};

    fn sim() -> Simulator {
        let sc = Scenario::from_json(builtin::DEFAULT).unwrap().with_team(3, 2).unwrap();
        Simulator::new(sc).unwrap()
    }

    #[test]
    fn sap_picks_minimum_and_longest_picks_maximum() {
        let sim = sim();
        for seed in 0..20 {
            let mut st = sim.reset(seed);
            let t = sim.scenario().task_index("convey_flange").unwrap();
            let c = candidate_distances(&sim, &st, t, EntityKind::Human);
            let min = c.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
            let max = c.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
            let a = allocate(&sim, &mut st, t, LowLevelRule::Sap).unwrap().unwrap();
            let d = c.iter().find(|x| x.0 == a.human.unwrap()).unwrap().1;
            assert_eq!(d, min);
            let first_min = c.iter().find(|x| x.1 == min).unwrap().0;
            assert_eq!(a.human.unwrap(), first_min);
            let b = allocate(&sim, &mut st, t, LowLevelRule::LongestPath).unwrap().unwrap();
            let d = c.iter().find(|x| x.0 == b.human.unwrap()).unwrap().1;
            assert_eq!(d, max);
        }
    }

    #[test]
    fn no_op_and_bad_action() {
        let sim = sim();
        let mut st = sim.reset(0);
        let n = sim.scenario().n_tasks();
        assert_eq!(allocate(&sim, &mut st, n, LowLevelRule::Sap), Ok(None));
        assert_eq!(allocate(&sim, &mut st, n + 1, LowLevelRule::Sap), Err(AllocError::BadAction(n + 1)));
    }

    #[test]
    fn unallocatable_when_class_busy() {
        let sc = Scenario::from_json(builtin::MINIATURE).unwrap();
        let sim = Simulator::new(sc).unwrap();
        let mut st = sim.reset(0);
        let a = allocate(&sim, &mut st, 1, LowLevelRule::Sap).unwrap();
        sim.step(&mut st, a.as_ref()).unwrap();
        // the only human is now busy with task 1
        assert!(matches!(
            allocate(&sim, &mut st, 0, LowLevelRule::Sap),
            Err(AllocError::Unallocatable { kind: "human", .. })
        ));
    }
}
