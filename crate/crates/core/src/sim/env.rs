use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scenario::{EntityKind, RewardConfig, Scenario};
use super::state::{Activity, Allocation, EntityId, EntityState, Event, Job, Stage, TaskPhase, TaskStatus, WorldState};
use super::{SimError, StepError};
use crate::spatial::{build_node_graph, plan_path, GridAstar, GridMap, NodeGraph, Point};

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    pub events: Vec<Event>,
}

/// Scenario plus its precomputed spatial data. Stateless across episodes:
/// all mutable data lives in [`WorldState`].
#[derive(Debug, Clone)]
pub struct Simulator {
    scenario: Scenario,
    grid: GridMap,
    graph: NodeGraph,
    spawn_cells: Vec<usize>,
}

impl Simulator {
    pub fn new(scenario: Scenario) -> Result<Self, SimError> {
        let grid = scenario.rasterize();
        let graph = build_node_graph(&grid, &scenario.area_nodes, &GridAstar)?;
        Self::assemble(scenario, grid, graph)
    }

    /// Uses a previously built node graph; fails if it belongs to another grid.
    pub fn with_graph(scenario: Scenario, graph: NodeGraph) -> Result<Self, SimError> {
        let grid = scenario.rasterize();
        if graph.grid_hash() != grid.hash() || graph.nodes() != scenario.area_nodes.as_slice() {
            return Err(crate::spatial::SpatialError::GridMismatch.into());
        }
        Self::assemble(scenario, grid, graph)
    }

    fn assemble(scenario: Scenario, grid: GridMap, graph: NodeGraph) -> Result<Self, SimError> {
        let n = graph.nodes().len();
        for i in 0..n {
            for j in 0..n {
                if i != j && graph.path(i, j).is_none() {
                    return Err(SimError::Unreachable {
                        from: graph.nodes()[i].id.clone(),
                        to: graph.nodes()[j].id.clone(),
                    });
                }
            }
        }
        let first = scenario.area_nodes[0].position;
        let cell = grid.world_to_cell(first).expect("validated node lies on the grid");
        let spawn_cells = grid.reachable_from(cell);
        Ok(Self {
            scenario,
            grid,
            graph,
            spawn_cells,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn grid(&self) -> &GridMap {
        &self.grid
    }

    pub fn graph(&self) -> &NodeGraph {
        &self.graph
    }

    /// Fresh episode. Humans and robots start at uniformly random free cells
    /// connected to the working areas.
    pub fn reset(&self, seed: u64) -> WorldState {
        let sc = &self.scenario;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entities = Vec::new();
        let mut push = |kind: EntityKind, local: usize, label: String, position: Option<Point>| {
            entities.push(EntityState {
                id: EntityId(entities.len()),
                label,
                kind,
                local_index: local,
                current_task: None,
                current_subtask: None,
                progress: 0.0,
                position,
                busy_until: None,
                activity: Activity::Idle,
                distance: 0.0,
                at_node: None,
            });
        };
        for (kind, count) in [(EntityKind::Human, sc.n_humans), (EntityKind::Robot, sc.n_robots)] {
            for k in 0..count {
                let cell = self.spawn_cells[rng.random_range(0..self.spawn_cells.len())];
                let p = self.grid.cell_center(self.grid.cell_at(cell));
                push(kind, k, format!("{}_{}", kind.label(), k + 1), Some(p));
            }
        }
        for (k, m) in sc.machines.iter().enumerate() {
            push(EntityKind::Machine, k, m.id.clone(), None);
        }
        for (k, m) in sc.materials.iter().enumerate() {
            push(EntityKind::Material, k, m.clone(), None);
        }
        let mut state = WorldState {
            tick: 0,
            entities,
            task_status: vec![
                TaskStatus {
                    phase: TaskPhase::Locked,
                    completed: 0,
                };
                sc.tasks.len()
            ],
            products_done: 0,
            jobs: Vec::new(),
            machine_owner: vec![None; sc.machines.len()],
            rng,
        };
        self.refresh(&mut state);
        state
    }

    /// Legal-action mask: one entry per task, then the no-op. All false once
    /// the episode is over.
    pub fn legal_actions(&self, state: &WorldState) -> Vec<bool> {
        let mut mask = vec![false; self.scenario.n_actions()];
        if self.is_done(state) {
            return mask;
        }
        let idle_h = state.idle_of(EntityKind::Human).next().is_some();
        let idle_r = state.idle_of(EntityKind::Robot).next().is_some();
        for (i, t) in self.scenario.tasks.iter().enumerate() {
            mask[i] = state.task_status[i].phase == TaskPhase::Available
                && (!t.needs_human || idle_h)
                && (!t.needs_robot || idle_r);
        }
        *mask.last_mut().unwrap() = true;
        mask
    }

    pub fn is_success(&self, state: &WorldState) -> bool {
        state.products_done >= self.scenario.order_quantity
    }

    pub fn is_done(&self, state: &WorldState) -> bool {
        self.is_success(state) || state.tick >= self.scenario.horizon
    }

    /// Fraction of required task completions achieved, in `[0, 1]`.
    pub fn progress(&self, state: &WorldState) -> f64 {
        let order = self.scenario.order_quantity;
        let (mut done, mut total) = (0u64, 0u64);
        for (t, s) in self.scenario.tasks.iter().zip(&state.task_status) {
            let target = t.target(order);
            done += u64::from(s.completed.min(target));
            total += u64::from(target);
        }
        done as f64 / total as f64
    }

    /// Checks an allocation against the current state without mutating it.
    pub fn validate(&self, state: &WorldState, alloc: &Allocation) -> Result<(), StepError> {
        if self.is_done(state) {
            return Err(StepError::EpisodeOver);
        }
        let task = self
            .scenario
            .tasks
            .get(alloc.task)
            .ok_or(StepError::UnknownTask(alloc.task))?;
        if state.task_status[alloc.task].phase != TaskPhase::Available {
            return Err(StepError::TaskNotAvailable(task.id.clone()));
        }
        for (kind, needed, given) in [
            (EntityKind::Human, task.needs_human, alloc.human),
            (EntityKind::Robot, task.needs_robot, alloc.robot),
        ] {
            match (needed, given) {
                (true, None) => {
                    return Err(StepError::MissingEntity {
                        task: task.id.clone(),
                        kind: kind.label(),
                    })
                }
                (false, Some(_)) => {
                    return Err(StepError::UnexpectedEntity {
                        task: task.id.clone(),
                        kind: kind.label(),
                    })
                }
                (true, Some(id)) => {
                    let e = state.entity(id).ok_or(StepError::UnknownEntity(id.0))?;
                    if e.kind != kind {
                        return Err(StepError::WrongKind {
                            entity: e.label.clone(),
                            expected: kind.label(),
                        });
                    }
                    if !e.is_idle() {
                        return Err(StepError::EntityBusy(e.label.clone()));
                    }
                }
                (false, None) => {}
            }
        }
        Ok(())
    }

    /// Applies an optional allocation and advances one tick.
    pub fn step(&self, state: &mut WorldState, alloc: Option<&Allocation>) -> Result<StepOutcome, SimError> {
        if self.is_done(state) {
            return Err(StepError::EpisodeOver.into());
        }
        if let Some(a) = alloc {
            self.validate(state, a)?;
        }
        let prev_products = state.products_done;
        let mut events = Vec::new();

        if let Some(a) = alloc {
            let unit = state.task_status[a.task].completed + 1;
            state.jobs.push(Job {
                task: a.task,
                unit,
                subtask: 0,
                human: a.human,
                robot: a.robot,
                stage: Stage::Start,
                finished: false,
            });
            for id in a.human.iter().chain(a.robot.iter()) {
                state.entities[id.0].activity = Activity::Reserved;
            }
            state.task_status[a.task].phase = TaskPhase::InProgress;
            events.push(Event::Allocated {
                task: a.task,
                unit,
                human: a.human,
                robot: a.robot,
            });
        }

        for j in 0..state.jobs.len() {
            self.advance(state, j, &mut events);
        }
        state.jobs.retain(|j| !j.finished);
        state.tick += 1;
        self.refresh(state);
        if state.products_done > prev_products {
            events.push(Event::ProductCompleted {
                count: state.products_done,
            });
        }

        let sc = &self.scenario;
        let reward = reward_terms(
            prev_products,
            state.products_done,
            state.tick,
            &sc.reward,
            sc.horizon,
            sc.order_quantity,
        );
        Ok(StepOutcome {
            reward,
            done: self.is_done(state),
            events,
        })
    }

    fn route(&self, entity: &EntityState, node: usize) -> Vec<Point> {
        match entity.at_node {
            Some(from) => self
                .graph
                .path(from, node)
                .expect("node graph is complete")
                .waypoints
                .clone(),
            None => {
                let from = entity.position.expect("mobile entity has a position");
                plan_path(&self.grid, from, self.scenario.node_position(node))
                    .expect("entity stands on free space")
                    .expect("spawn cells are connected to every node")
                    .waypoints
            }
        }
    }

    fn advance(&self, state: &mut WorldState, j: usize, events: &mut Vec<Event>) {
        let task_ix = state.jobs[j].task;
        let task = &self.scenario.tasks[task_ix];
        let sub_ix = state.jobs[j].subtask;
        let sub = &task.subtasks[sub_ix];
        let performer = match sub.required_class {
            EntityKind::Human => state.jobs[j].human,
            EntityKind::Robot => state.jobs[j].robot,
            _ => None,
        };

        if matches!(state.jobs[j].stage, Stage::Start | Stage::WaitingMachine) {
            match sub.machine {
                Some(m) => {
                    if state.machine_owner[m].is_some_and(|owner| owner != task_ix) {
                        state.jobs[j].stage = Stage::WaitingMachine;
                        return;
                    }
                    state.machine_owner[m] = Some(task_ix);
                    state.jobs[j].stage = Stage::Working {
                        remaining: sub.duration,
                    };
                }
                None => {
                    let e = &state.entities[performer.expect("validated allocation").0];
                    match sub.location_node {
                        Some(node) if e.at_node != Some(node) => {
                            state.jobs[j].stage = Stage::Moving {
                                waypoints: self.route(e, node),
                                next: 1,
                            };
                        }
                        _ => {
                            state.jobs[j].stage = Stage::Working {
                                remaining: sub.duration,
                            };
                        }
                    }
                }
            }
            if let Some(id) = performer.or_else(|| sub.machine.map(|m| self.machine_entity(m))) {
                if matches!(state.jobs[j].stage, Stage::Working { .. }) {
                    events.push(Event::SubtaskStarted {
                        task: task_ix,
                        subtask: sub_ix,
                        entity: id,
                    });
                }
            }
        }

        match &mut state.jobs[j].stage {
            Stage::Moving { waypoints, next } => {
                let id = performer.expect("only mobile entities move");
                let e = &mut state.entities[id.0];
                let mut budget = match e.kind {
                    EntityKind::Human => self.scenario.human_speed,
                    _ => self.scenario.robot_speed,
                };
                let mut pos = e.position.expect("mobile");
                while budget > 0.0 && *next < waypoints.len() {
                    let wp = waypoints[*next];
                    let d = pos.dist(wp);
                    if d <= budget {
                        pos = wp;
                        budget -= d;
                        e.distance += d;
                        *next += 1;
                    } else {
                        let f = budget / d;
                        pos = Point::new(pos.x + (wp.x - pos.x) * f, pos.y + (wp.y - pos.y) * f);
                        e.distance += budget;
                        budget = 0.0;
                    }
                }
                e.position = Some(pos);
                e.at_node = None;
                if *next >= waypoints.len() {
                    e.at_node = sub.location_node;
                    state.jobs[j].stage = Stage::Working {
                        remaining: sub.duration,
                    };
                    events.push(Event::SubtaskStarted {
                        task: task_ix,
                        subtask: sub_ix,
                        entity: id,
                    });
                }
            }
            Stage::Working { remaining } => {
                *remaining -= 1;
                if *remaining == 0 {
                    self.finish_subtask(state, j, events);
                }
            }
            Stage::Start | Stage::WaitingMachine => unreachable!("resolved above"),
        }
    }

    fn finish_subtask(&self, state: &mut WorldState, j: usize, events: &mut Vec<Event>) {
        let job = &mut state.jobs[j];
        let task = &self.scenario.tasks[job.task];
        if let Some(m) = task.subtasks[job.subtask].machine {
            state.machine_owner[m] = None;
        }
        events.push(Event::SubtaskCompleted {
            task: job.task,
            subtask: job.subtask,
        });
        job.subtask += 1;
        job.stage = Stage::Start;
        for (kind, slot) in [(EntityKind::Human, &mut job.human), (EntityKind::Robot, &mut job.robot)] {
            if let Some(id) = *slot {
                if !task.needs_from(job.subtask, kind) {
                    state.entities[id.0].activity = Activity::Idle;
                    *slot = None;
                    events.push(Event::Released { entity: id });
                }
            }
        }
        if job.subtask == task.subtasks.len() {
            job.finished = true;
            state.task_status[job.task].completed += 1;
            events.push(Event::TaskCompleted {
                task: job.task,
                unit: job.unit,
            });
        }
    }

    fn machine_entity(&self, machine: usize) -> EntityId {
        EntityId(self.scenario.n_humans + self.scenario.n_robots + machine)
    }

    /// Recomputes task phases, product count and per-entity derived fields.
    fn refresh(&self, state: &mut WorldState) {
        let sc = &self.scenario;
        let order = sc.order_quantity;
        for i in 0..sc.tasks.len() {
            let t = &sc.tasks[i];
            let completed = state.task_status[i].completed;
            let phase = if state.jobs.iter().any(|j| j.task == i) {
                TaskPhase::InProgress
            } else if completed >= t.target(order) {
                TaskPhase::Done
            } else if self.deps_ready(state, i, completed + 1) {
                TaskPhase::Available
            } else {
                TaskPhase::Locked
            };
            state.task_status[i].phase = phase;
        }
        state.products_done = sc
            .tasks
            .iter()
            .zip(&state.task_status)
            .filter(|(t, _)| t.repeatable)
            .map(|(_, s)| s.completed)
            .min()
            .unwrap_or(0)
            .min(order);

        for e in state.entities.iter_mut() {
            e.current_task = None;
            e.current_subtask = None;
            e.progress = 0.0;
            e.busy_until = None;
            e.activity = Activity::Idle;
        }
        for job in &state.jobs {
            let task = &sc.tasks[job.task];
            let n = task.subtasks.len() as f64;
            let sub = &task.subtasks[job.subtask];
            let (frac, remaining) = match job.stage {
                Stage::Working { remaining } => (f64::from(sub.duration - remaining) / f64::from(sub.duration), Some(remaining)),
                _ => (0.0, None),
            };
            let progress = (job.subtask as f64 + frac) / n;
            let performer = match sub.required_class {
                EntityKind::Human => job.human,
                EntityKind::Robot => job.robot,
                _ => sub.machine.map(|m| self.machine_entity(m)),
            };
            let mut involved: Vec<EntityId> = job.human.iter().chain(job.robot.iter()).copied().collect();
            if let Some(m) = sub.machine {
                if state.machine_owner[m] == Some(job.task) {
                    involved.push(self.machine_entity(m));
                }
            }
            if let Some(m) = task.material {
                involved.push(EntityId(sc.n_humans + sc.n_robots + sc.machines.len() + m));
            }
            for id in involved {
                let e = &mut state.entities[id.0];
                e.current_task = Some(job.task);
                e.current_subtask = Some(job.subtask);
                e.progress = progress;
                let is_performer = performer == Some(id);
                e.activity = match (&job.stage, is_performer) {
                    (Stage::Moving { .. }, true) => Activity::Moving,
                    (Stage::Working { .. }, true) => Activity::Working,
                    _ if e.kind == EntityKind::Material => Activity::Working,
                    _ => Activity::Reserved,
                };
                if is_performer {
                    e.busy_until = remaining.map(|r| state.tick + r);
                }
            }
        }
    }

    /// Whether every dependency of task `i` supports producing unit `unit`.
    fn deps_ready(&self, state: &WorldState, i: usize, unit: u32) -> bool {
        let sc = &self.scenario;
        sc.tasks[i].dependencies.iter().all(|&d| {
            let need = if sc.tasks[d].repeatable && sc.tasks[i].repeatable { unit } else { 1 };
            state.task_status[d].completed >= need
        })
    }
}

fn reward_terms(prev_products: u32, products: u32, tick: u32, cfg: &RewardConfig, horizon: u32, order: u32) -> f64 {
    let mut r = -cfg.eta1;
    if products > prev_products {
        r += cfg.eta3 * f64::from(products - prev_products);
    }
    if products >= order && prev_products < order {
        r += cfg.eta2;
    } else if products < order && tick >= horizon {
        r -= cfg.eta2;
    }
    r
}

/// Per-tick reward for the transition `prev -> next`.
pub fn compute_reward(prev: &WorldState, next: &WorldState, cfg: &RewardConfig, horizon: u32, order: u32) -> f64 {
    reward_terms(prev.products_done, next.products_done, next.tick, cfg, horizon, order)
}
