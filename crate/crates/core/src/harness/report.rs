//! Cross-run comparison tables.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::run::{RunSnapshot, RunSummary, METRICS_FILE, SUMMARY_FILE};
use super::HarnessError;
use crate::agent::Algorithm;

/// A run directory that could not be included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub dir: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub algorithm: Algorithm,
    pub low_level: String,
    pub runs: usize,
    pub mean_makespan: f64,
    pub success_rate: f64,
    pub mean_progress: f64,
    pub mean_distance: f64,
    /// Baseline mean makespan divided by this row's; above 1 is better.
    pub improvement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub baseline: Algorithm,
    pub scenario_hash: String,
    pub rows: Vec<ReportRow>,
    pub failures: Vec<RunFailure>,
}

fn load_run(dir: &Path) -> Result<RunSummary, HarnessError> {
    let snap = RunSnapshot::read(dir)?;
    let metrics = dir.join(METRICS_FILE);
    if !metrics.is_file() {
        return Err(HarnessError::Invalid(format!("missing {}", metrics.display())));
    }
    let path = dir.join(SUMMARY_FILE);
    let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
    let summary: RunSummary = serde_json::from_str(&text).map_err(|e| HarnessError::Json(path.display().to_string(), e))?;
    if summary.scenario_hash != snap.scenario_hash {
        return Err(HarnessError::Invalid("summary and snapshot disagree on the scenario".into()));
    }
    Ok(summary)
}

/// Groups runs by (algorithm, low-level rule) and compares each group's mean
/// makespan against the baseline algorithm with the same low-level rule.
/// Unreadable runs are listed as failures; at least two must load.
pub fn build_report(dirs: &[PathBuf], baseline: Algorithm) -> Result<Report, HarnessError> {
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for d in dirs {
        match load_run(d) {
            Ok(s) => runs.push(s),
            Err(e) => failures.push(RunFailure {
                dir: d.display().to_string(),
                error: e.to_string(),
            }),
        }
    }
    if runs.len() < 2 {
        return Err(HarnessError::Invalid(format!(
            "report needs at least two completed runs, found {}",
            runs.len()
        )));
    }
    let hash = runs[0].scenario_hash.clone();
    if let Some(other) = runs.iter().find(|r| r.scenario_hash != hash) {
        return Err(HarnessError::Invalid(format!(
            "runs use different scenarios ({} vs {})",
            &hash[..12],
            &other.scenario_hash[..12]
        )));
    }

    let mut keys: Vec<(Algorithm, String)> = Vec::new();
    for r in &runs {
        let k = (r.algorithm, r.low_level.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let mut rows: Vec<ReportRow> = keys
        .iter()
        .map(|(a, low)| {
            let g: Vec<&RunSummary> = runs.iter().filter(|r| r.algorithm == *a && r.low_level == *low).collect();
            let n = g.len() as f64;
            let mean = |f: &dyn Fn(&RunSummary) -> f64| g.iter().map(|r| f(r)).sum::<f64>() / n;
            ReportRow {
                algorithm: *a,
                low_level: low.clone(),
                runs: g.len(),
                mean_makespan: mean(&|r| r.final_eval.mean_makespan),
                success_rate: mean(&|r| r.final_eval.success_rate),
                mean_progress: mean(&|r| r.final_eval.mean_progress),
                mean_distance: mean(&|r| r.final_eval.mean_distance),
                improvement: None,
            }
        })
        .collect();
    let base: Vec<(String, f64)> = rows
        .iter()
        .filter(|r| r.algorithm == baseline)
        .map(|r| (r.low_level.clone(), r.mean_makespan))
        .collect();
    for r in &mut rows {
        r.improvement = base.iter().find(|b| b.0 == r.low_level).map(|b| b.1 / r.mean_makespan);
    }
    Ok(Report {
        baseline,
        scenario_hash: hash,
        rows,
        failures,
    })
}

impl Report {
    pub fn markdown(&self) -> String {
        let mut s = format!(
            "# Comparison (baseline {})\n\n\
             | algorithm | low level | runs | mean makespan | success rate | mean progress | mean distance | improvement |\n\
             |---|---|---|---|---|---|---|---|\n",
            self.baseline
        );
        for r in &self.rows {
            let imp = r.improvement.map_or("-".to_string(), |v| format!("{v:.3}"));
            let _ = writeln!(
                s,
                "| {} | {} | {} | {:.2} | {:.3} | {:.3} | {:.2} | {} |",
                r.algorithm, r.low_level, r.runs, r.mean_makespan, r.success_rate, r.mean_progress, r.mean_distance, imp
            );
        }
        if !self.failures.is_empty() {
            s.push_str("\n## Runs not included\n\n");
            for f in &self.failures {
                let _ = writeln!(s, "- `{}`: {}", f.dir, f.error);
            }
        }
        s
    }

    pub fn csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("report rows serialize");
        }
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 csv")
    }
}
