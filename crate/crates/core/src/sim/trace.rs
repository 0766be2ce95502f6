//! Per-tick execution records.

use serde::{Deserialize, Serialize};

use super::scenario::EntityKind;
use super::state::{Activity, Allocation, Event, WorldState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntitySnapshot {
    pub entity: String,
    pub kind: EntityKind,
    pub task: Option<usize>,
    pub subtask: Option<usize>,
    pub activity: Activity,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
}

/// One simulated tick: the decision taken before it and the resulting state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    /// Tick index after the step.
    pub tick: u32,
    /// Action index chosen by the agent; absent for automatic no-op ticks.
    pub action: Option<usize>,
    pub allocation: Option<Allocation>,
    pub reward: f64,
    pub products_done: u32,
    pub events: Vec<Event>,
    pub entities: Vec<EntitySnapshot>,
}

impl TickRecord {
    pub fn capture(
        state: &WorldState,
        action: Option<usize>,
        allocation: Option<Allocation>,
        reward: f64,
        events: Vec<Event>,
    ) -> Self {
        Self {
            tick: state.tick,
            action,
            allocation,
            reward,
            products_done: state.products_done,
            events,
            entities: state
                .entities
                .iter()
                .map(|e| EntitySnapshot {
                    entity: e.label.clone(),
                    kind: e.kind,
                    task: e.current_task,
                    subtask: e.current_subtask,
                    activity: e.activity,
                    x: e.position.map(|p| p.x),
                    y: e.position.map(|p| p.y),
                })
                .collect(),
        }
    }
}
