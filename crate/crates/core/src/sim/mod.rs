//! Discrete-time assembly-line simulator.

mod encode;
mod env;
mod scenario;
mod state;
mod trace;

pub use encode::{encode_state, EncodedState, GroupTokens, TokenGroup, LAYOUT_VERSION, MAX_TEAM};
pub use env::{compute_reward, Simulator, StepOutcome};
pub use scenario::{
    builtin, EntitiesDoc, EntityKind, Machine, MachineDoc, RewardConfig, Scenario, ScenarioDoc, Subtask,
    SubtaskDoc, Task, TaskDoc, WorldDoc,
};
pub use state::{Activity, Allocation, EntityId, EntityState, Event, TaskPhase, TaskStatus, WorldState};
pub use trace::{EntitySnapshot, TickRecord};

use thiserror::Error;

use crate::spatial::SpatialError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("invalid scenario at `{path}`: {reason}")]
    Invalid { path: String, reason: String },
    #[error("dependency cycle at `{path}`: {}", cycle.join(" -> "))]
    Cycle { path: String, cycle: Vec<String> },
    #[error("area node `{node}` at `{path}` lies inside an obstacle")]
    NodeInObstacle { path: String, node: String },
    #[error("no collision-free route from node `{from}` to node `{to}`")]
    Unreachable { from: String, to: String },
    #[error(transparent)]
    Spatial(#[from] SpatialError),
    #[error(transparent)]
    Step(#[from] StepError),
}

/// Rejected allocation. The state is left untouched.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StepError {
    #[error("the episode is over")]
    EpisodeOver,
    #[error("unknown task index {0}")]
    UnknownTask(usize),
    #[error("task `{0}` is not available")]
    TaskNotAvailable(String),
    #[error("task `{task}` needs a {kind}")]
    MissingEntity { task: String, kind: &'static str },
    #[error("task `{task}` does not use a {kind}")]
    UnexpectedEntity { task: String, kind: &'static str },
    #[error("entity {0} does not exist")]
    UnknownEntity(usize),
    #[error("entity `{entity}` is not a {expected}")]
    WrongKind { entity: String, expected: &'static str },
    #[error("entity `{0}` is busy")]
    EntityBusy(String),
}
