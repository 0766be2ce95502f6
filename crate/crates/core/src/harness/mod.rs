//! Experiment plumbing: run directories, sweeps, evaluation tables, Gantt
//! export and cross-run reports.

mod eval;
mod gantt;
mod report;
mod run;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use eval::{check_action_space, eval_grid, eval_orders, grid_markdown, orders_markdown, EvalPolicy, GridCell, OrderRow};
pub use gantt::{gantt, render_svg, Bar, EpisodeTrace, Gantt, GanttError};
pub use report::{build_report, Report, ReportRow, RunFailure};
pub use run::{
    execute_run, load_network, load_scenario, RunSnapshot, RunSummary, CHECKPOINT_DIR, EVAL_FILE, FINAL_CHECKPOINT,
    METRICS_FILE, METRICS_HEADER, REPORT_FILE, SNAPSHOT_FILE, SUMMARY_FILE, TRACE_DIR,
};

use crate::agent::{EnvError, RunError, TrainConfig};
use crate::nn::CheckpointError;
use crate::sim::{Scenario, SimError};
use crate::spatial::SpatialError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}: {1}")]
    Json(String, serde_json::Error),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Spatial(#[from] SpatialError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Gantt(#[from] GanttError),
    #[error("action space mismatch: {0}")]
    ActionSpace(String),
    #[error("{0}")]
    Invalid(String),
}

impl HarnessError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Io { .. } => "io",
            HarnessError::Json(..) => "json",
            HarnessError::Sim(_) => "scenario",
            HarnessError::Spatial(_) => "spatial",
            HarnessError::Env(_) => "environment",
            HarnessError::Run(_) => "training",
            HarnessError::Checkpoint(_) => "checkpoint",
            HarnessError::Gantt(_) => "trace",
            HarnessError::ActionSpace(_) => "action_space",
            HarnessError::Invalid(_) => "invalid_input",
        }
    }
}

/// Writes via a temporary sibling and a rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| HarnessError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
}

/// What a sweep varies besides the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SweepAxis {
    Team { humans: Vec<usize>, robots: Vec<usize> },
    Orders(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCellResult {
    pub cell: String,
    pub seed: u64,
    pub dir: String,
    pub summary: Option<RunSummary>,
    pub error: Option<String>,
}

/// Trains one run per (cell, seed) under `out/<cell>/seed_<seed>`. Cells run
/// on up to `workers` threads; results come back in cell order.
pub fn run_sweep(
    base: &Scenario,
    train: &TrainConfig,
    seeds: &[u64],
    axis: Option<&SweepAxis>,
    out: &Path,
    workers: usize,
) -> Result<Vec<SweepCellResult>, HarnessError> {
    if seeds.is_empty() {
        return Err(HarnessError::Invalid("sweep needs at least one seed".into()));
    }
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(HarnessError::Invalid(format!("seed {} appears more than once", w[0])));
    }
    let cells: Vec<(String, Scenario)> = match axis {
        None => vec![("base".to_string(), base.clone())],
        Some(SweepAxis::Team { humans, robots }) => {
            let mut v = Vec::new();
            for &h in humans {
                for &r in robots {
                    v.push((format!("h{h}_r{r}"), base.with_team(h, r)?));
                }
            }
            v
        }
        Some(SweepAxis::Orders(orders)) => orders
            .iter()
            .map(|&o| Ok((format!("order_{o}"), base.with_order(o)?)))
            .collect::<Result<_, HarnessError>>()?,
    };
    let jobs: Vec<(usize, String, u64, Scenario)> = cells
        .iter()
        .flat_map(|(id, sc)| seeds.iter().map(move |&s| (id.clone(), s, sc.clone())))
        .enumerate()
        .map(|(i, (id, s, sc))| (i, id, s, sc))
        .collect();
    let queue = Mutex::new(jobs.into_iter());
    let results = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..workers.max(1) {
            scope.spawn(|| loop {
                let next = queue.lock().expect("queue lock").next();
                let Some((i, cell, seed, sc)) = next else { break };
                let dir = out.join(&cell).join(format!("seed_{seed}"));
                let snap = RunSnapshot::new(&sc, TrainConfig { seed, ..train.clone() });
                let res = execute_run(&snap, &dir);
                let entry = SweepCellResult {
                    cell,
                    seed,
                    dir: dir.display().to_string(),
                    error: res.as_ref().err().map(|e| e.to_string()),
                    summary: res.ok(),
                };
                results.lock().expect("results lock").push((i, entry));
            });
        }
    });
    let mut results = results.into_inner().expect("results lock");
    results.sort_by_key(|r| r.0);
    Ok(results.into_iter().map(|r| r.1).collect())
}

pub fn sweep_markdown(results: &[SweepCellResult]) -> String {
    use std::fmt::Write as _;
    let mut s = String::from("| cell | seed | mean makespan | success rate | mean distance | status |\n|---|---|---|---|---|---|\n");
    for r in results {
        match (&r.summary, &r.error) {
            (Some(sm), _) => {
                let e = &sm.final_eval;
                let _ = writeln!(
                    s,
                    "| {} | {} | {:.2} | {:.3} | {:.2} | ok |",
                    r.cell, r.seed, e.mean_makespan, e.success_rate, e.mean_distance
                );
            }
            (None, err) => {
                let _ = writeln!(s, "| {} | {} | - | - | - | {} |", r.cell, r.seed, err.as_deref().unwrap_or("failed"));
            }
        }
    }
    s
}
