use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scenario::EntityKind;
use crate::spatial::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activity {
    Idle,
    /// Assigned to a task while another class performs the current subtask.
    Reserved,
    Moving,
    Working,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntityState {
    pub id: EntityId,
    pub label: String,
    pub kind: EntityKind,
    /// Index among entities of the same kind.
    pub local_index: usize,
    pub current_task: Option<usize>,
    pub current_subtask: Option<usize>,
    /// Completion degree of the current task in `[0, 1]`.
    pub progress: f64,
    /// Present iff the entity is a human or robot.
    pub position: Option<Point>,
    pub busy_until: Option<u32>,
    pub activity: Activity,
    /// Meters traveled this episode.
    pub distance: f64,
    pub(crate) at_node: Option<usize>,
}

impl EntityState {
    pub fn is_idle(&self) -> bool {
        self.activity == Activity::Idle
    }

    /// Area node the entity is parked at, if any.
    pub fn at_node(&self) -> Option<usize> {
        self.at_node
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskPhase {
    Locked,
    Available,
    InProgress,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskStatus {
    pub phase: TaskPhase,
    /// Product units completed by this task.
    pub completed: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Stage {
    Start,
    WaitingMachine,
    Moving { waypoints: Vec<Point>, next: usize },
    Working { remaining: u32 },
}

/// A task in flight.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Job {
    pub task: usize,
    pub unit: u32,
    pub subtask: usize,
    pub human: Option<EntityId>,
    pub robot: Option<EntityId>,
    pub stage: Stage,
    pub finished: bool,
}

/// Complete environment snapshot at a tick.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub tick: u32,
    pub entities: Vec<EntityState>,
    pub task_status: Vec<TaskStatus>,
    pub products_done: u32,
    pub(crate) jobs: Vec<Job>,
    /// Job index (by task) occupying each machine.
    pub(crate) machine_owner: Vec<Option<usize>>,
    pub(crate) rng: ChaCha8Rng,
}

impl WorldState {
    pub fn entities_of(&self, kind: EntityKind) -> impl Iterator<Item = &EntityState> {
        self.entities.iter().filter(move |e| e.kind == kind)
    }

    pub fn idle_of(&self, kind: EntityKind) -> impl Iterator<Item = &EntityState> {
        self.entities_of(kind).filter(|e| e.is_idle())
    }

    pub fn entity(&self, id: EntityId) -> Option<&EntityState> {
        self.entities.get(id.0)
    }

    /// Total meters moved by all humans and robots.
    pub fn total_distance(&self) -> f64 {
        self.entities.iter().map(|e| e.distance).sum()
    }

    /// Tasks currently executing, in start order.
    pub fn in_flight(&self) -> impl Iterator<Item = usize> + '_ {
        self.jobs.iter().map(|j| j.task)
    }

    /// The episode's seeded random stream, for stochastic decision rules.
    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Current subtask index of an in-flight task.
    pub fn in_flight_subtask(&self, task: usize) -> Option<usize> {
        self.jobs.iter().find(|j| j.task == task).map(|j| j.subtask)
    }
}

/// High-level decision paired with its performers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub task: usize,
    pub human: Option<EntityId>,
    pub robot: Option<EntityId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Allocated {
        task: usize,
        unit: u32,
        human: Option<EntityId>,
        robot: Option<EntityId>,
    },
    SubtaskStarted {
        task: usize,
        subtask: usize,
        entity: EntityId,
    },
    SubtaskCompleted {
        task: usize,
        subtask: usize,
    },
    Released {
        entity: EntityId,
    },
    TaskCompleted {
        task: usize,
        unit: u32,
    },
    ProductCompleted {
        count: u32,
    },
}
