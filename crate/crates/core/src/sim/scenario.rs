//! Scenario file schema and validation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::spatial::{AreaNode, GridMap, Point, Rect, DEFAULT_RESOLUTION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Human,
    Robot,
    Machine,
    Material,
}

impl EntityKind {
    pub fn label(self) -> &'static str {
        match self {
            EntityKind::Human => "human",
            EntityKind::Robot => "robot",
            EntityKind::Machine => "machine",
            EntityKind::Material => "material",
        }
    }

    pub fn is_mobile(self) -> bool {
        matches!(self, EntityKind::Human | EntityKind::Robot)
    }
}

/// Reward and buffer hyperparameters (eta1..eta6, gamma).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    #[serde(default = "defaults::eta1")]
    pub eta1: f64,
    #[serde(default = "defaults::eta2")]
    pub eta2: f64,
    #[serde(default = "defaults::eta3")]
    pub eta3: f64,
    #[serde(default = "defaults::eta4")]
    pub eta4: f64,
    #[serde(default = "defaults::eta5")]
    pub eta5: f64,
    #[serde(default = "defaults::eta6")]
    pub eta6: u32,
    #[serde(default = "defaults::gamma")]
    pub gamma: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            eta1: defaults::eta1(),
            eta2: defaults::eta2(),
            eta3: defaults::eta3(),
            eta4: defaults::eta4(),
            eta5: defaults::eta5(),
            eta6: defaults::eta6(),
            gamma: defaults::gamma(),
        }
    }
}

mod defaults {
    pub fn eta1() -> f64 {
        0.01
    }
    pub fn eta2() -> f64 {
        1.0
    }
    pub fn eta3() -> f64 {
        0.1
    }
    pub fn eta4() -> f64 {
        0.4
    }
    pub fn eta5() -> f64 {
        0.001
    }
    pub fn eta6() -> u32 {
        5
    }
    pub fn gamma() -> f64 {
        0.99
    }
    pub fn horizon() -> u32 {
        2000
    }
    pub fn human_speed() -> f64 {
        1.2
    }
    pub fn robot_speed() -> f64 {
        1.5
    }
    pub fn resolution() -> f64 {
        super::DEFAULT_RESOLUTION
    }
    pub fn yes() -> bool {
        true
    }
}

// ---- raw document -------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    #[serde(default)]
    pub name: String,
    pub world: WorldDoc,
    #[serde(default = "defaults::resolution")]
    pub grid_resolution: f64,
    pub area_nodes: Vec<AreaNode>,
    #[serde(default)]
    pub obstacles: Vec<Rect>,
    pub entities: EntitiesDoc,
    pub tasks: Vec<TaskDoc>,
    pub order: u32,
    #[serde(default = "defaults::horizon")]
    pub horizon: u32,
    #[serde(default)]
    pub reward: RewardConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldDoc {
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntitiesDoc {
    pub humans: usize,
    pub robots: usize,
    #[serde(default = "defaults::human_speed")]
    pub human_speed: f64,
    #[serde(default = "defaults::robot_speed")]
    pub robot_speed: f64,
    #[serde(default)]
    pub machines: Vec<MachineDoc>,
    #[serde(default)]
    pub materials: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineDoc {
    pub id: String,
    pub node: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskDoc {
    pub id: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub depends_on: Vec<String>,
    #[serde(default = "defaults::yes")]
    pub repeatable: bool,
    /// Working-area node scored by the allocator. Defaults to the first
    /// human/robot subtask's node.
    #[serde(default)]
    pub node: Option<String>,
    #[serde(default)]
    pub material: Option<String>,
    pub subtasks: Vec<SubtaskDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubtaskDoc {
    pub id: String,
    pub class: EntityKind,
    pub duration: u32,
    #[serde(default)]
    pub node: Option<String>,
}

// ---- validated model ----------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Subtask {
    pub id: String,
    pub required_class: EntityKind,
    pub duration: u32,
    pub location_node: Option<usize>,
    /// Machine index for machine subtasks.
    pub machine: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub id: String,
    pub description: String,
    pub subtasks: Vec<Subtask>,
    pub dependencies: Vec<usize>,
    pub needs_human: bool,
    pub needs_robot: bool,
    pub repeatable: bool,
    pub node: usize,
    pub material: Option<usize>,
}

impl Task {
    /// Completions required by the order.
    pub fn target(&self, order: u32) -> u32 {
        if self.repeatable {
            order
        } else {
            1
        }
    }

    /// Whether any subtask at or after `from` needs `class`.
    pub fn needs_from(&self, from: usize, class: EntityKind) -> bool {
        self.subtasks[from..]
            .iter()
            .any(|s| s.required_class == class)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Machine {
    pub id: String,
    pub node: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub world_width: f64,
    pub world_height: f64,
    pub grid_resolution: f64,
    pub area_nodes: Vec<AreaNode>,
    pub obstacles: Vec<Rect>,
    pub n_humans: usize,
    pub n_robots: usize,
    pub human_speed: f64,
    pub robot_speed: f64,
    pub machines: Vec<Machine>,
    pub materials: Vec<String>,
    pub tasks: Vec<Task>,
    pub order_quantity: u32,
    pub horizon: u32,
    pub reward: RewardConfig,
    doc: ScenarioDoc,
}

fn invalid(path: impl Into<String>, reason: impl Into<String>) -> SimError {
    SimError::Invalid {
        path: path.into(),
        reason: reason.into(),
    }
}

impl Scenario {
    /// Parses and validates a JSON scenario document.
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let doc: ScenarioDoc = serde_json::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
        Self::from_doc(doc)
    }

    pub fn from_doc(doc: ScenarioDoc) -> Result<Self, SimError> {
        let w = doc.world.width;
        let h = doc.world.height;
        if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
            return Err(invalid("world", "width and height must be positive"));
        }
        if !(doc.grid_resolution > 0.0) {
            return Err(invalid("grid_resolution", "must be positive"));
        }
        let e = &doc.entities;
        if e.humans < 1 {
            return Err(invalid("entities.humans", "at least one human is required"));
        }
        if e.robots < 1 {
            return Err(invalid("entities.robots", "at least one robot is required"));
        }
        if !(e.human_speed > 0.0) {
            return Err(invalid("entities.human_speed", "must be positive"));
        }
        if !(e.robot_speed > 0.0) {
            return Err(invalid("entities.robot_speed", "must be positive"));
        }
        if doc.order < 1 {
            return Err(invalid("order", "must be at least 1"));
        }
        if doc.horizon < 1 {
            return Err(invalid("horizon", "must be at least 1"));
        }
        let r = &doc.reward;
        for (name, v) in [
            ("eta1", r.eta1),
            ("eta2", r.eta2),
            ("eta3", r.eta3),
            ("eta4", r.eta4),
            ("eta5", r.eta5),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("reward.{name}"), "must be non-negative"));
            }
        }
        if r.eta6 < 1 {
            return Err(invalid("reward.eta6", "must be at least 1"));
        }
        if !(r.gamma > 0.0 && r.gamma <= 1.0) {
            return Err(invalid("reward.gamma", "must lie in (0, 1]"));
        }

        // nodes
        let mut node_ix = BTreeMap::new();
        for (i, n) in doc.area_nodes.iter().enumerate() {
            if node_ix.insert(n.id.as_str(), i).is_some() {
                return Err(invalid(format!("area_nodes[{i}].id"), format!("duplicate node `{}`", n.id)));
            }
        }
        let grid = GridMap::rasterize(w, h, &doc.obstacles, doc.grid_resolution).map_err(|err| match err {
            crate::spatial::SpatialError::ObstacleOutOfBounds(i) => {
                invalid(format!("obstacles[{i}]"), "outside world bounds or inverted")
            }
            other => invalid("grid_resolution", other.to_string()),
        })?;
        for (i, n) in doc.area_nodes.iter().enumerate() {
            if !grid.is_free_point(n.position) {
                return Err(SimError::NodeInObstacle {
                    path: format!("area_nodes[{i}]"),
                    node: n.id.clone(),
                });
            }
        }
        let node = |path: String, id: &str| {
            node_ix
                .get(id)
                .copied()
                .ok_or_else(|| invalid(path, format!("unknown node `{id}`")))
        };

        // machines and materials
        let mut machines = Vec::new();
        for (i, m) in e.machines.iter().enumerate() {
            if machines.iter().any(|x: &Machine| x.id == m.id) {
                return Err(invalid(format!("entities.machines[{i}].id"), "duplicate machine"));
            }
            let n = node(format!("entities.machines[{i}].node"), &m.node)?;
            if machines.iter().any(|x: &Machine| x.node == n) {
                return Err(invalid(
                    format!("entities.machines[{i}].node"),
                    "two machines share a node",
                ));
            }
            machines.push(Machine {
                id: m.id.clone(),
                node: n,
            });
        }
        for (i, m) in e.materials.iter().enumerate() {
            if e.materials[..i].contains(m) {
                return Err(invalid(format!("entities.materials[{i}]"), "duplicate material"));
            }
        }

        // tasks
        if doc.tasks.is_empty() {
            return Err(invalid("tasks", "at least one task is required"));
        }
        let mut task_ix = BTreeMap::new();
        for (i, t) in doc.tasks.iter().enumerate() {
            if task_ix.insert(t.id.as_str(), i).is_some() {
                return Err(invalid(format!("tasks[{i}].id"), format!("duplicate task `{}`", t.id)));
            }
        }
        let mut tasks = Vec::with_capacity(doc.tasks.len());
        for (i, t) in doc.tasks.iter().enumerate() {
            let base = format!("tasks[{i}]");
            if t.subtasks.is_empty() {
                return Err(invalid(format!("{base}.subtasks"), "must be non-empty"));
            }
            let mut subtasks = Vec::with_capacity(t.subtasks.len());
            for (k, s) in t.subtasks.iter().enumerate() {
                let sp = format!("{base}.subtasks[{k}]");
                if s.class == EntityKind::Material {
                    return Err(invalid(format!("{sp}.class"), "materials cannot perform subtasks"));
                }
                if s.duration < 1 {
                    return Err(invalid(format!("{sp}.duration"), "must be at least 1 tick"));
                }
                let location_node = match &s.node {
                    Some(id) => Some(node(format!("{sp}.node"), id)?),
                    None => None,
                };
                let machine = if s.class == EntityKind::Machine {
                    let Some(n) = location_node else {
                        return Err(invalid(format!("{sp}.node"), "machine subtasks need the machine's node"));
                    };
                    Some(
                        machines
                            .iter()
                            .position(|m| m.node == n)
                            .ok_or_else(|| invalid(format!("{sp}.node"), "no machine at this node"))?,
                    )
                } else {
                    None
                };
                subtasks.push(Subtask {
                    id: s.id.clone(),
                    required_class: s.class,
                    duration: s.duration,
                    location_node,
                    machine,
                });
            }
            let mut dependencies = Vec::new();
            for (k, d) in t.depends_on.iter().enumerate() {
                let j = *task_ix
                    .get(d.as_str())
                    .ok_or_else(|| invalid(format!("{base}.depends_on[{k}]"), format!("unknown task `{d}`")))?;
                if !dependencies.contains(&j) {
                    dependencies.push(j);
                }
            }
            let needs_human = subtasks.iter().any(|s| s.required_class == EntityKind::Human);
            let needs_robot = subtasks.iter().any(|s| s.required_class == EntityKind::Robot);
            let task_node = match &t.node {
                Some(id) => node(format!("{base}.node"), id)?,
                None => subtasks
                    .iter()
                    .find(|s| s.required_class.is_mobile())
                    .or(subtasks.first())
                    .and_then(|s| s.location_node)
                    .ok_or_else(|| invalid(format!("{base}.node"), "no working-area node can be inferred"))?,
            };
            let material = match &t.material {
                Some(m) => Some(
                    e.materials
                        .iter()
                        .position(|x| x == m)
                        .ok_or_else(|| invalid(format!("{base}.material"), format!("unknown material `{m}`")))?,
                ),
                None => None,
            };
            tasks.push(Task {
                id: t.id.clone(),
                description: t.description.clone(),
                subtasks,
                dependencies,
                needs_human,
                needs_robot,
                repeatable: t.repeatable,
                node: task_node,
                material,
            });
        }
        if !tasks.iter().any(|t| t.repeatable) {
            return Err(invalid("tasks", "at least one task must be repeatable"));
        }
        if let Some(cycle) = find_cycle(&tasks) {
            let names: Vec<_> = cycle.iter().map(|&i| tasks[i].id.clone()).collect();
            return Err(SimError::Cycle {
                path: format!("tasks[{}].depends_on", cycle[0]),
                cycle: names,
            });
        }

        Ok(Self {
            name: doc.name.clone(),
            world_width: w,
            world_height: h,
            grid_resolution: doc.grid_resolution,
            area_nodes: doc.area_nodes.clone(),
            obstacles: doc.obstacles.clone(),
            n_humans: e.humans,
            n_robots: e.robots,
            human_speed: e.human_speed,
            robot_speed: e.robot_speed,
            machines,
            materials: e.materials.clone(),
            tasks,
            order_quantity: doc.order,
            horizon: doc.horizon,
            reward: doc.reward,
            doc,
        })
    }

    /// The source document (with any overrides applied).
    pub fn doc(&self) -> &ScenarioDoc {
        &self.doc
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.doc).expect("scenario documents serialize")
    }

    /// Stable content hash of the scenario document.
    pub fn hash_hex(&self) -> String {
        crate::codec::sha256_hex(serde_json::to_string(&self.doc).expect("serialize").as_bytes())
    }

    /// Same layout and tasks with a different team size.
    pub fn with_team(&self, humans: usize, robots: usize) -> Result<Self, SimError> {
        let mut doc = self.doc.clone();
        doc.entities.humans = humans;
        doc.entities.robots = robots;
        Self::from_doc(doc)
    }

    pub fn with_order(&self, order: u32) -> Result<Self, SimError> {
        let mut doc = self.doc.clone();
        doc.order = order;
        Self::from_doc(doc)
    }

    pub fn with_horizon(&self, horizon: u32) -> Result<Self, SimError> {
        let mut doc = self.doc.clone();
        doc.horizon = horizon;
        Self::from_doc(doc)
    }

    pub fn with_reward(&self, reward: RewardConfig) -> Result<Self, SimError> {
        let mut doc = self.doc.clone();
        doc.reward = reward;
        Self::from_doc(doc)
    }

    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Tasks plus the no-op action.
    pub fn n_actions(&self) -> usize {
        self.tasks.len() + 1
    }

    pub fn task_index(&self, id: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t.id == id)
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.area_nodes.iter().position(|n| n.id == id)
    }

    pub fn node_position(&self, node: usize) -> Point {
        self.area_nodes[node].position
    }

    pub fn max_subtasks(&self) -> usize {
        self.tasks.iter().map(|t| t.subtasks.len()).max().unwrap_or(0)
    }

    pub fn rasterize(&self) -> GridMap {
        GridMap::rasterize(
            self.world_width,
            self.world_height,
            &self.obstacles,
            self.grid_resolution,
        )
        .expect("validated scenario rasterizes")
    }
}

/// A dependency cycle (task indices, first repeated at the end omitted).
fn find_cycle(tasks: &[Task]) -> Option<Vec<usize>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    fn visit(i: usize, tasks: &[Task], marks: &mut [Mark], stack: &mut Vec<usize>) -> Option<Vec<usize>> {
        marks[i] = Mark::Active;
        stack.push(i);
        for &d in &tasks[i].dependencies {
            match marks[d] {
                Mark::Active => {
                    let start = stack.iter().position(|&x| x == d).unwrap();
                    return Some(stack[start..].to_vec());
                }
                Mark::New => {
                    if let Some(c) = visit(d, tasks, marks, stack) {
                        return Some(c);
                    }
                }
                Mark::Done => {}
            }
        }
        stack.pop();
        marks[i] = Mark::Done;
        None
    }
    let mut marks = vec![Mark::New; tasks.len()];
    for i in 0..tasks.len() {
        if marks[i] == Mark::New {
            let mut stack = Vec::new();
            if let Some(c) = visit(i, tasks, &mut marks, &mut stack) {
                return Some(c);
            }
        }
    }
    None
}

/// Built-in scenario files.
pub mod builtin {
    pub const DEFAULT: &str = include_str!("../../scenarios/default.json");
    pub const MINIATURE: &str = include_str!("../../scenarios/miniature.json");

    /// Looks up `default` / `miniature`.
    pub fn get(name: &str) -> Option<&'static str> {
        match name {
            "default" => Some(DEFAULT),
            "miniature" => Some(MINIATURE),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mini_doc() -> serde_json::Value {
        serde_json::from_str(builtin::MINIATURE).unwrap()
    }

    fn load(v: &serde_json::Value) -> Result<Scenario, SimError> {
        Scenario::from_json(&v.to_string())
    }

    #[test]
    fn builtin_scenarios_load() {
        let d = Scenario::from_json(builtin::DEFAULT).unwrap();
        assert_eq!(d.n_tasks(), 9);
        assert_eq!(d.order_quantity, 6);
        assert_eq!(d.horizon, 2000);
        let m = Scenario::from_json(builtin::MINIATURE).unwrap();
        assert_eq!(m.n_tasks(), 2);
        assert_eq!((m.n_humans, m.n_robots, m.order_quantity, m.horizon), (1, 1, 1, 60));
    }

    #[test]
    fn needs_flags_follow_subtasks() {
        let d = Scenario::from_json(builtin::DEFAULT).unwrap();
        for t in &d.tasks {
            assert_eq!(t.needs_human, t.subtasks.iter().any(|s| s.required_class == EntityKind::Human));
            assert_eq!(t.needs_robot, t.subtasks.iter().any(|s| s.required_class == EntityKind::Robot));
        }
    }

    #[test]
    fn self_dependency_is_a_cycle() {
        let mut v = mini_doc();
        let id = v["tasks"][0]["id"].clone();
        v["tasks"][0]["depends_on"] = serde_json::json!([id]);
        match load(&v) {
            Err(SimError::Cycle { path, cycle }) => {
                assert_eq!(path, "tasks[0].depends_on");
                assert_eq!(cycle.len(), 1);
            }
            other => panic!("expected cycle, got {other:?}"),
        }
    }

    #[test]
    fn longer_cycle_detected() {
        let mut v = mini_doc();
        let a = v["tasks"][0]["id"].clone();
        let b = v["tasks"][1]["id"].clone();
        v["tasks"][0]["depends_on"] = serde_json::json!([b]);
        v["tasks"][1]["depends_on"] = serde_json::json!([a]);
        assert!(matches!(load(&v), Err(SimError::Cycle { .. })));
    }

    #[test]
    fn zero_humans_rejected() {
        let mut v = mini_doc();
        v["entities"]["humans"] = 0.into();
        match load(&v) {
            Err(SimError::Invalid { path, .. }) => assert_eq!(path, "entities.humans"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn node_inside_obstacle_rejected() {
        let mut v = mini_doc();
        let x = v["area_nodes"][1]["x"].as_f64().unwrap();
        let y = v["area_nodes"][1]["y"].as_f64().unwrap();
        v["obstacles"] = serde_json::json!([{"x_min": x - 0.5, "y_min": y - 0.5, "x_max": x + 0.5, "y_max": y + 0.5}]);
        match load(&v) {
            Err(SimError::NodeInObstacle { path, .. }) => assert_eq!(path, "area_nodes[1]"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_fields_and_references_reported_with_path() {
        let mut v = mini_doc();
        v["tasks"][1]["subtasks"][0]["node"] = "nowhere".into();
        match load(&v) {
            Err(SimError::Invalid { path, .. }) => assert_eq!(path, "tasks[1].subtasks[0].node"),
            other => panic!("{other:?}"),
        }
        let mut v = mini_doc();
        v["tasks"][0]["subtasks"][0]["duration"] = 0.into();
        match load(&v) {
            Err(SimError::Invalid { path, .. }) => assert_eq!(path, "tasks[0].subtasks[0].duration"),
            other => panic!("{other:?}"),
        }
        let mut v = mini_doc();
        v["bogus"] = 1.into();
        assert!(matches!(load(&v), Err(SimError::Parse(_))));
    }

    #[test]
    fn material_class_subtask_rejected() {
        let mut v = mini_doc();
        v["tasks"][0]["subtasks"][0]["class"] = "material".into();
        assert!(matches!(load(&v), Err(SimError::Invalid { .. })));
    }

    #[test]
    fn overrides_revalidate() {
        let m = Scenario::from_json(builtin::MINIATURE).unwrap();
        assert_eq!(m.with_team(3, 2).unwrap().n_humans, 3);
        assert!(m.with_team(0, 1).is_err());
        assert_eq!(m.with_order(4).unwrap().order_quantity, 4);
        assert_ne!(m.hash_hex(), m.with_order(4).unwrap().hash_hex());
    }
}
