//! Run directories: one training (or baseline) run with all of its artifacts.

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::gantt::{gantt, render_svg, EpisodeTrace};
use super::{write_atomic, HarnessError};
use crate::agent::{
    evaluate, rollout, train, Algorithm, EpisodeMetrics, EvalRecord, EvalStats, GreedyPolicy, Policy, RandomPolicy,
    TrainConfig, TrainObserver,
};
use crate::nn::{load_checkpoint, QNetwork};
use crate::sim::{builtin, Scenario, ScenarioDoc, Simulator};

pub const SNAPSHOT_FILE: &str = "config.snapshot";
pub const METRICS_FILE: &str = "metrics.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const REPORT_FILE: &str = "report.md";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const TRACE_DIR: &str = "traces";
pub const FINAL_CHECKPOINT: &str = "final.tpqn";

const SNAPSHOT_FORMAT: u32 = 1;

/// Loads a built-in scenario by name or a scenario file by path.
pub fn load_scenario(spec: &str) -> Result<Scenario, HarnessError> {
    let text = match builtin::get(spec) {
        Some(t) => t.to_string(),
        None => fs::read_to_string(spec).map_err(|e| HarnessError::io(spec, e))?,
    };
    Ok(Scenario::from_json(&text)?)
}

/// Everything needed to regenerate a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSnapshot {
    pub format: u32,
    pub scenario: ScenarioDoc,
    pub scenario_hash: String,
    pub train: TrainConfig,
    /// Greedy evaluation after training.
    pub final_eval_episodes: usize,
    pub final_eval_seed: u64,
    /// Evaluation episodes recorded under `traces/`.
    pub traced_episodes: usize,
}

impl RunSnapshot {
    pub fn new(scenario: &Scenario, train: TrainConfig) -> Self {
        Self {
            format: SNAPSHOT_FORMAT,
            scenario: scenario.doc().clone(),
            scenario_hash: scenario.hash_hex(),
            final_eval_seed: train.eval_seed,
            final_eval_episodes: train.eval_episodes.max(1),
            traced_episodes: 1,
            train,
        }
    }

    pub fn scenario(&self) -> Result<Scenario, HarnessError> {
        let sc = Scenario::from_doc(self.scenario.clone())?;
        if sc.hash_hex() != self.scenario_hash {
            return Err(HarnessError::Invalid(format!(
                "snapshot scenario hash {} does not match its document ({})",
                self.scenario_hash,
                sc.hash_hex()
            )));
        }
        Ok(sc)
    }

    pub fn read(dir: &Path) -> Result<Self, HarnessError> {
        let path = dir.join(SNAPSHOT_FILE);
        let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
        let snap: Self = serde_json::from_str(&text).map_err(|e| HarnessError::Json(path.display().to_string(), e))?;
        if snap.format != SNAPSHOT_FORMAT {
            return Err(HarnessError::Invalid(format!("unsupported snapshot format {}", snap.format)));
        }
        Ok(snap)
    }

    pub fn eval_seeds(&self) -> Vec<u64> {
        (0..self.final_eval_episodes as u64).map(|i| self.final_eval_seed + i).collect()
    }
}

/// Final results of a run, written to `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub algorithm: Algorithm,
    pub low_level: String,
    pub seed: u64,
    pub scenario: String,
    pub scenario_hash: String,
    pub episodes_run: usize,
    pub grad_steps: u64,
    pub successful_episodes: usize,
    pub threshold_reached_at: Option<usize>,
    pub final_eval: EvalStats,
}

struct CsvSink {
    tmp: PathBuf,
    dest: PathBuf,
    writer: csv::Writer<File>,
}

impl CsvSink {
    fn create(dest: PathBuf) -> Result<Self, HarnessError> {
        let tmp = dest.with_extension("csv.partial");
        let file = File::create(&tmp).map_err(|e| HarnessError::io(&tmp, e))?;
        Ok(Self {
            tmp,
            dest,
            writer: csv::Writer::from_writer(file),
        })
    }

    fn row<T: Serialize>(&mut self, row: &T) -> std::io::Result<()> {
        self.writer.serialize(row).map_err(std::io::Error::other)?;
        self.writer.flush()
    }

    /// Writes the header even when no rows were recorded, then moves the
    /// file into place.
    fn finish(mut self, header: &[&str], empty: bool) -> Result<(), HarnessError> {
        if empty {
            self.writer.write_record(header).map_err(|e| HarnessError::io(&self.tmp, std::io::Error::other(e)))?;
        }
        self.writer.flush().map_err(|e| HarnessError::io(&self.tmp, e))?;
        drop(self.writer);
        fs::rename(&self.tmp, &self.dest).map_err(|e| HarnessError::io(&self.dest, e))
    }
}

pub const METRICS_HEADER: [&str; 11] = [
    "episode",
    "steps",
    "decisions",
    "return",
    "makespan",
    "progress",
    "success",
    "loss_mean",
    "epsilon",
    "buffer_size",
    "grad_steps",
];
const EVAL_HEADER: [&str; 6] = [
    "episode",
    "mean_makespan",
    "std_makespan",
    "success_rate",
    "mean_progress",
    "mean_distance",
];

struct RunObserver {
    metrics: CsvSink,
    evals: CsvSink,
    checkpoints: PathBuf,
    rows: usize,
    eval_rows: usize,
    err: Option<HarnessError>,
}

impl TrainObserver for RunObserver {
    fn on_episode(&mut self, m: &EpisodeMetrics) -> std::io::Result<()> {
        self.rows += 1;
        self.metrics.row(m)
    }

    fn on_eval(&mut self, e: &EvalRecord) -> std::io::Result<()> {
        self.eval_rows += 1;
        self.evals.row(e)
    }

    fn on_checkpoint(&mut self, episode: usize, bytes: &[u8], last: bool) -> std::io::Result<()> {
        let name = if last {
            FINAL_CHECKPOINT.to_string()
        } else {
            format!("episode_{episode:06}.tpqn")
        };
        if let Err(e) = write_atomic(&self.checkpoints.join(name), bytes) {
            let msg = e.to_string();
            self.err = Some(e);
            return Err(std::io::Error::other(msg));
        }
        Ok(())
    }
}

/// Executes `snap` into `dir`, creating it if needed. Existing artifacts are
/// replaced.
pub fn execute_run(snap: &RunSnapshot, dir: &Path) -> Result<RunSummary, HarnessError> {
    let sc = snap.scenario()?;
    let sim = Simulator::new(sc)?;
    let checkpoints = dir.join(CHECKPOINT_DIR);
    let traces = dir.join(TRACE_DIR);
    for d in [dir, &checkpoints, &traces] {
        fs::create_dir_all(d).map_err(|e| HarnessError::io(d, e))?;
    }
    let snapshot_text = serde_json::to_string_pretty(snap).expect("snapshot serializes") + "\n";
    write_atomic(&dir.join(SNAPSHOT_FILE), snapshot_text.as_bytes())?;

    let cfg = &snap.train;
    let mut obs = RunObserver {
        metrics: CsvSink::create(dir.join(METRICS_FILE))?,
        evals: CsvSink::create(dir.join(EVAL_FILE))?,
        checkpoints,
        rows: 0,
        eval_rows: 0,
        err: None,
    };
    let (net, episodes_run, grad_steps, successful_episodes, threshold) = if cfg.algorithm.is_learning() {
        let out = match train(&sim, cfg, &mut obs) {
            Ok(o) => o,
            Err(e) => return Err(obs.err.take().unwrap_or(HarnessError::Run(e))),
        };
        (
            Some(out.network),
            out.episodes_run,
            out.grad_steps,
            out.successful_episodes,
            out.threshold_reached_at,
        )
    } else {
        (None, 0, 0, 0, None)
    };
    let (rows, eval_rows) = (obs.rows, obs.eval_rows);
    obs.metrics.finish(&METRICS_HEADER, rows == 0)?;
    obs.evals.finish(&EVAL_HEADER, eval_rows == 0)?;

    let mut policy: Box<dyn Policy> = match &net {
        Some(n) => Box::new(GreedyPolicy::new(n)),
        None => Box::new(RandomPolicy::new(cfg.seed)),
    };
    let seeds = snap.eval_seeds();
    let (stats, _) = evaluate(&sim, cfg.low_level, policy.as_mut(), &seeds)?;

    for &seed in seeds.iter().take(snap.traced_episodes) {
        let mut policy: Box<dyn Policy> = match &net {
            Some(n) => Box::new(GreedyPolicy::new(n)),
            None => Box::new(RandomPolicy::new(cfg.seed)),
        };
        let r = rollout(&sim, cfg.low_level, seed, policy.as_mut(), true)?;
        let trace = EpisodeTrace::new(&sim, seed, r.trace, r.summary);
        let g = gantt(&trace)?;
        let base = traces.join(format!("seed_{seed}"));
        write_atomic(&base.with_extension("trace.json"), &serde_json::to_vec(&trace).expect("trace serializes"))?;
        write_atomic(&base.with_extension("gantt.json"), &serde_json::to_vec_pretty(&g).expect("gantt serializes"))?;
        write_atomic(&base.with_extension("svg"), render_svg(&g, &trace.tasks).as_bytes())?;
    }

    let summary = RunSummary {
        algorithm: cfg.algorithm,
        low_level: cfg.low_level.name().to_string(),
        seed: cfg.seed,
        scenario: sim.scenario().name.clone(),
        scenario_hash: snap.scenario_hash.clone(),
        episodes_run,
        grad_steps,
        successful_episodes,
        threshold_reached_at: threshold,
        final_eval: stats,
    };
    write_atomic(
        &dir.join(SUMMARY_FILE),
        (serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n").as_bytes(),
    )?;
    write_atomic(&dir.join(REPORT_FILE), run_report(&summary).as_bytes())?;
    Ok(summary)
}

fn run_report(s: &RunSummary) -> String {
    let e = &s.final_eval;
    format!(
        "# Run: {} / {} on {}\n\n\
         seed {} | training episodes {} | gradient steps {} | successful training episodes {}\n\n\
         | metric | value |\n|---|---|\n\
         | eval episodes | {} |\n| mean makespan | {:.2} ± {:.2} |\n| success rate | {:.3} |\n\
         | mean progress | {:.3} |\n| mean distance | {:.2} ± {:.2} |\n",
        s.algorithm,
        s.low_level,
        s.scenario,
        s.seed,
        s.episodes_run,
        s.grad_steps,
        s.successful_episodes,
        e.episodes,
        e.mean_makespan,
        e.std_makespan,
        e.success_rate,
        e.mean_progress,
        e.mean_distance,
        e.std_distance,
    )
}

/// Loads the network stored in a checkpoint file.
pub fn load_network(path: &Path) -> Result<QNetwork, HarnessError> {
    let bytes = fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(load_checkpoint(&bytes)?.network)
}
