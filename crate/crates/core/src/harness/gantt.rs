//! Per-entity timelines from episode traces, as structured bars and SVG.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::EpisodeSummary;
use crate::sim::{Simulator, TickRecord};

/// A recorded episode with enough context to render it standalone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub scenario: String,
    pub seed: u64,
    pub horizon: u32,
    /// Entity labels in id order.
    pub entities: Vec<String>,
    pub tasks: Vec<String>,
    pub records: Vec<TickRecord>,
    pub summary: EpisodeSummary,
}

impl EpisodeTrace {
    pub fn new(sim: &Simulator, seed: u64, records: Vec<TickRecord>, summary: EpisodeSummary) -> Self {
        let sc = sim.scenario();
        Self {
            scenario: sc.name.clone(),
            seed,
            horizon: sc.horizon,
            entities: sim.reset(seed).entities.iter().map(|e| e.label.clone()).collect(),
            tasks: sc.tasks.iter().map(|t| t.id.clone()).collect(),
            records,
            summary,
        }
    }
}

/// Entity `entity` worked on `task` during ticks `[start_tick, end_tick)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bar {
    pub entity: String,
    pub task: String,
    pub start_tick: u32,
    pub end_tick: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gantt {
    pub rows: Vec<String>,
    pub makespan: u32,
    pub bars: Vec<Bar>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GanttError {
    #[error("trace is truncated: expected tick {expected}, found {found}")]
    Truncated { expected: u32, found: u32 },
    #[error("trace ends at tick {last} but the episode ran to {makespan}")]
    Incomplete { last: u32, makespan: u32 },
    #[error("record at tick {tick} lists {found} entities, expected {expected}")]
    EntityCount { tick: u32, found: usize, expected: usize },
    #[error("record at tick {tick} refers to unknown task {task}")]
    UnknownTask { tick: u32, task: usize },
}

/// Builds one row per entity with a bar for every maximal run of ticks spent
/// assigned to the same task. A record at tick `t` describes tick `[t-1, t)`.
pub fn gantt(trace: &EpisodeTrace) -> Result<Gantt, GanttError> {
    let n = trace.entities.len();
    let mut open: Vec<Option<(usize, u32)>> = vec![None; n];
    let mut bars = Vec::new();
    let close = |bars: &mut Vec<Bar>, e: usize, (task, start): (usize, u32), end: u32| {
        bars.push(Bar {
            entity: trace.entities[e].clone(),
            task: trace.tasks[task].clone(),
            start_tick: start,
            end_tick: end,
        });
    };
    for (i, rec) in trace.records.iter().enumerate() {
        let expected = i as u32 + 1;
        if rec.tick != expected {
            return Err(GanttError::Truncated {
                expected,
                found: rec.tick,
            });
        }
        if rec.entities.len() != n {
            return Err(GanttError::EntityCount {
                tick: rec.tick,
                found: rec.entities.len(),
                expected: n,
            });
        }
        for (e, snap) in rec.entities.iter().enumerate() {
            if let Some(t) = snap.task {
                if t >= trace.tasks.len() {
                    return Err(GanttError::UnknownTask { tick: rec.tick, task: t });
                }
            }
            match (open[e], snap.task) {
                (Some((t, _)), Some(now)) if t == now => {}
                (prev, now) => {
                    if let Some(p) = prev {
                        close(&mut bars, e, p, rec.tick - 1);
                    }
                    open[e] = now.map(|t| (t, rec.tick - 1));
                }
            }
        }
    }
    let last = trace.records.last().map_or(0, |r| r.tick);
    if last != trace.summary.makespan {
        return Err(GanttError::Incomplete {
            last,
            makespan: trace.summary.makespan,
        });
    }
    for (e, o) in open.iter().enumerate() {
        if let Some(p) = *o {
            close(&mut bars, e, p, last);
        }
    }
    bars.sort_by(|a, b| {
        let ra = trace.entities.iter().position(|x| *x == a.entity);
        let rb = trace.entities.iter().position(|x| *x == b.entity);
        ra.cmp(&rb).then(a.start_tick.cmp(&b.start_tick))
    });
    Ok(Gantt {
        rows: trace.entities.clone(),
        makespan: last,
        bars,
    })
}

const PALETTE: [&str; 10] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders the chart. Idle time is left as the row background.
pub fn render_svg(g: &Gantt, tasks: &[String]) -> String {
    let label_w = 110.0;
    let row_h = 26.0;
    let plot_w = 800.0;
    let top = 20.0;
    let legend_h = 22.0 * ((tasks.len() + 3) / 4) as f64;
    let span = f64::from(g.makespan.max(1));
    let width = label_w + plot_w + 20.0;
    let height = top + row_h * g.rows.len() as f64 + 30.0 + legend_h;
    let x = |t: u32| label_w + plot_w * f64::from(t) / span;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#
    );
    for (r, name) in g.rows.iter().enumerate() {
        let y = top + row_h * r as f64;
        let _ = writeln!(
            s,
            r##"<rect x="{label_w}" y="{y}" width="{plot_w}" height="{:.0}" fill="#f2f2f2"/>"##,
            row_h - 4.0
        );
        let _ = writeln!(s, r#"<text x="4" y="{:.0}">{}</text>"#, y + row_h / 2.0 + 2.0, escape(name));
    }
    for b in &g.bars {
        let r = g.rows.iter().position(|x| *x == b.entity).unwrap_or(0);
        let ti = tasks.iter().position(|t| *t == b.task).unwrap_or(0);
        let y = top + row_h * r as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{y}" width="{:.2}" height="{:.0}" fill="{}"><title>{} {}-{}</title></rect>"#,
            x(b.start_tick),
            x(b.end_tick) - x(b.start_tick),
            row_h - 4.0,
            PALETTE[ti % PALETTE.len()],
            escape(&b.task),
            b.start_tick,
            b.end_tick
        );
    }
    let axis_y = top + row_h * g.rows.len() as f64 + 12.0;
    let _ = writeln!(s, r#"<text x="{label_w}" y="{axis_y}">0</text>"#);
    let _ = writeln!(s, r#"<text x="{:.0}" y="{axis_y}" text-anchor="end">{}</text>"#, label_w + plot_w, g.makespan);
    for (i, t) in tasks.iter().enumerate() {
        let lx = label_w + 200.0 * (i % 4) as f64;
        let ly = axis_y + 12.0 + 22.0 * (i / 4) as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{lx}" y="{ly}" width="12" height="12" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            PALETTE[i % PALETTE.len()],
            lx + 16.0,
            ly + 10.0,
            escape(t)
        );
    }
    s.push_str("</svg>\n");
    s
}
