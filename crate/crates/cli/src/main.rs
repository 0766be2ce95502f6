use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use tpa_core::agent::{Algorithm, TrainConfig};
use tpa_core::alloc::LowLevelRule;
use tpa_core::harness::{
    build_report, eval_grid, eval_orders, execute_run, gantt, grid_markdown, load_network, load_scenario,
    orders_markdown, render_svg, run_sweep, sweep_markdown, write_atomic, EpisodeTrace, EvalPolicy, HarnessError,
    RunSnapshot, SweepAxis,
};
use tpa_core::nn::QNetwork;
use tpa_core::spatial::{build_node_graph, GridAstar, NodeGraph};

#[derive(Parser)]
#[command(name = "tpa", version, about = "Human-robot task planning and allocation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run into an output directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or the random baseline) over a team-size grid.
    Eval(EvalArgs),
    /// Train one run per seed and sweep cell.
    Sweep(SweepArgs),
    /// Evaluate a checkpoint on order quantities it was not trained on.
    Zeroshot(ZeroshotArgs),
    /// Build or inspect precomputed node graphs.
    #[command(subcommand)]
    Graph(GraphCommand),
    /// Export a recorded episode trace as a Gantt chart.
    Gantt(GanttArgs),
    /// Compare finished runs.
    Report(ReportArgs),
}

#[derive(Args, Clone)]
struct RunOptions {
    /// Built-in scenario name (`default`, `miniature`) or path to a scenario file.
    #[arg(long, default_value = "default")]
    scenario: String,
    #[arg(long, default_value = "EBQ-N")]
    algo: Algorithm,
    #[arg(long, default_value = "SAP", value_parser = parse_rule)]
    low: LowLevelRule,
    /// JSON file with training settings; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    warmup: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    d_model: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunOptions,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Re-execute a saved `config.snapshot`; other run options are ignored.
    #[arg(long)]
    snapshot: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate; omit together with `--algo Random` for the baseline.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "default")]
    scenario: String,
    #[arg(long)]
    algo: Option<Algorithm>,
    #[arg(long, default_value = "SAP", value_parser = parse_rule)]
    low: LowLevelRule,
    /// `humans=A..B robots=C..D`; defaults to the scenario's team.
    #[arg(long, num_args = 1..=2)]
    grid: Vec<String>,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunOptions,
    /// Seed list, e.g. `1,2,3` or `0..4`.
    #[arg(long, default_value = "0")]
    seeds: String,
    #[arg(long, num_args = 1..=2, conflicts_with = "orders")]
    grid: Vec<String>,
    #[arg(long)]
    orders: Option<String>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ZeroshotArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "default")]
    scenario: String,
    #[arg(long)]
    algo: Option<Algorithm>,
    #[arg(long, default_value = "SAP", value_parser = parse_rule)]
    low: LowLevelRule,
    #[arg(long, default_value = "1..10")]
    orders: String,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum GraphCommand {
    /// Plan all node-to-node paths for a scenario and save them.
    Build {
        #[arg(long, default_value = "default")]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a saved graph as JSON.
    Inspect { path: PathBuf },
}

#[derive(Args)]
struct GanttArgs {
    /// A `*.trace.json` file from a run's `traces/` directory.
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories to compare.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    #[arg(long, default_value = "D3QN")]
    baseline: Algorithm,
    #[arg(long)]
    out: PathBuf,
}

fn parse_rule(s: &str) -> Result<LowLevelRule, String> {
    match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
        "sap" => Ok(LowLevelRule::Sap),
        "nospatial" => Ok(LowLevelRule::NoSpatial),
        "longestpath" => Ok(LowLevelRule::LongestPath),
        _ => Err(format!("unknown low-level rule `{s}` (expected SAP, NoSpatial or LongestPath)")),
    }
}

/// Parses `3`, `1,2,5` or the inclusive range `1..3`.
fn parse_list(s: &str) -> Result<Vec<u64>, HarnessError> {
    let bad = || HarnessError::Invalid(format!("cannot parse list `{s}`"));
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect()
}

fn parse_grid(args: &[String]) -> Result<(Vec<usize>, Vec<usize>), HarnessError> {
    let (mut humans, mut robots) = (None, None);
    for a in args {
        let (k, v) = a
            .split_once('=')
            .ok_or_else(|| HarnessError::Invalid(format!("grid axis `{a}` must look like humans=1..3")))?;
        let vals: Vec<usize> = parse_list(v)?.into_iter().map(|x| x as usize).collect();
        match k {
            "humans" => humans = Some(vals),
            "robots" => robots = Some(vals),
            _ => return Err(HarnessError::Invalid(format!("unknown grid axis `{k}`"))),
        }
    }
    match (humans, robots) {
        (Some(h), Some(r)) => Ok((h, r)),
        _ => Err(HarnessError::Invalid("grid needs both humans= and robots=".into())),
    }
}

fn train_config(o: &RunOptions, seed: u64) -> Result<TrainConfig, HarnessError> {
    let mut cfg = match &o.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| HarnessError::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| HarnessError::Json(p.display().to_string(), e))?
        }
        None => TrainConfig::default(),
    };
    cfg.algorithm = o.algo;
    cfg.low_level = o.low;
    cfg.seed = seed;
    if let Some(v) = o.episodes {
        cfg.episodes = v;
    }
    if let Some(v) = o.eval_every {
        cfg.eval_every = v;
    }
    if let Some(v) = o.eval_episodes {
        cfg.eval_episodes = v;
    }
    if let Some(v) = o.checkpoint_every {
        cfg.checkpoint_every = v;
    }
    if let Some(v) = o.batch {
        cfg.batch = v;
    }
    if let Some(v) = o.warmup {
        cfg.warmup = v;
    }
    if let Some(v) = o.lr {
        cfg.lr = v;
    }
    if let Some(v) = o.d_model {
        cfg.net.d_model = v;
        cfg.net.encoder_hidden = v;
        cfg.net.stream_hidden = v;
    }
    if cfg.algorithm.is_learning() {
        cfg.validate().map_err(HarnessError::Invalid)?;
    }
    Ok(cfg)
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    write_atomic(&dir.join(name), text.as_bytes())
}

fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize) -> Result<(), HarnessError> {
    write_text(dir, name, &(serde_json::to_string_pretty(value).expect("serializable") + "\n"))
}

/// Resolves the evaluated policy: a checkpoint, or the random baseline.
fn policy_source(checkpoint: &Option<PathBuf>, algo: Option<Algorithm>) -> Result<Option<QNetwork>, HarnessError> {
    match (checkpoint, algo) {
        (Some(p), None | Some(_)) if algo != Some(Algorithm::Random) => Ok(Some(load_network(p)?)),
        (None, Some(Algorithm::Random)) => Ok(None),
        (Some(_), Some(Algorithm::Random)) => Err(HarnessError::Invalid("the random baseline takes no checkpoint".into())),
        _ => Err(HarnessError::Invalid("pass --checkpoint, or --algo Random for the baseline".into())),
    }
}

fn run(cmd: Command) -> Result<(), HarnessError> {
    match cmd {
        Command::Train(a) => {
            let snap = match &a.snapshot {
                Some(p) => {
                    let dir = if p.is_dir() { p.clone() } else { p.parent().map(Path::to_path_buf).unwrap_or_default() };
                    RunSnapshot::read(&dir)?
                }
                None => {
                    let sc = load_scenario(&a.run.scenario)?;
                    RunSnapshot::new(&sc, train_config(&a.run, a.seed)?)
                }
            };
            let s = execute_run(&snap, &a.out)?;
            println!("{}", serde_json::to_string(&s).expect("summary serializes"));
        }
        Command::Eval(a) => {
            let sc = load_scenario(&a.scenario)?;
            let net = policy_source(&a.checkpoint, a.algo)?;
            let policy = match &net {
                Some(n) => EvalPolicy::Network(n),
                None => EvalPolicy::Random(a.seed),
            };
            let (h, r) = if a.grid.is_empty() {
                (vec![sc.n_humans], vec![sc.n_robots])
            } else {
                parse_grid(&a.grid)?
            };
            let cells = eval_grid(&sc, &policy, a.low, &h, &r, a.trials, a.seed)?;
            write_json(&a.out, "eval.json", &cells)?;
            let md = grid_markdown(&cells);
            write_text(&a.out, "eval.md", &md)?;
            print!("{md}");
        }
        Command::Sweep(a) => {
            let sc = load_scenario(&a.run.scenario)?;
            let cfg = train_config(&a.run, 0)?;
            let seeds = parse_list(&a.seeds)?;
            let axis = if !a.grid.is_empty() {
                let (humans, robots) = parse_grid(&a.grid)?;
                Some(SweepAxis::Team { humans, robots })
            } else if let Some(o) = &a.orders {
                Some(SweepAxis::Orders(parse_list(o)?.into_iter().map(|x| x as u32).collect()))
            } else {
                None
            };
            let results = run_sweep(&sc, &cfg, &seeds, axis.as_ref(), &a.out, a.workers)?;
            write_json(&a.out, "sweep.json", &results)?;
            let md = sweep_markdown(&results);
            write_text(&a.out, "sweep.md", &md)?;
            print!("{md}");
            if let Some(bad) = results.iter().find(|r| r.error.is_some()) {
                return Err(HarnessError::Invalid(format!(
                    "sweep cell {} seed {} failed: {}",
                    bad.cell,
                    bad.seed,
                    bad.error.as_deref().unwrap_or_default()
                )));
            }
        }
        Command::Zeroshot(a) => {
            let sc = load_scenario(&a.scenario)?;
            let net = policy_source(&a.checkpoint, a.algo)?;
            let policy = match &net {
                Some(n) => EvalPolicy::Network(n),
                None => EvalPolicy::Random(a.seed),
            };
            let orders: Vec<u32> = parse_list(&a.orders)?.into_iter().map(|x| x as u32).collect();
            let rows = eval_orders(&sc, &policy, a.low, &orders, a.trials, a.seed)?;
            write_json(&a.out, "zeroshot.json", &rows)?;
            let md = orders_markdown(&rows);
            write_text(&a.out, "zeroshot.md", &md)?;
            print!("{md}");
        }
        Command::Graph(GraphCommand::Build { scenario, out }) => {
            let sc = load_scenario(&scenario)?;
            let grid = sc.rasterize();
            let g = build_node_graph(&grid, &sc.area_nodes, &GridAstar)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
            }
            write_atomic(&out, &g.to_bytes())?;
            println!("{}", graph_json(&g));
        }
        Command::Graph(GraphCommand::Inspect { path }) => {
            let bytes = fs::read(&path).map_err(|e| HarnessError::io(&path, e))?;
            let g = NodeGraph::from_bytes(&bytes)?;
            println!("{}", serde_json::to_string_pretty(&graph_json(&g)).expect("json"));
        }
        Command::Gantt(a) => {
            let text = fs::read_to_string(&a.trace).map_err(|e| HarnessError::io(&a.trace, e))?;
            let trace: EpisodeTrace =
                serde_json::from_str(&text).map_err(|e| HarnessError::Json(a.trace.display().to_string(), e))?;
            let g = gantt(&trace)?;
            write_json(&a.out, "gantt.json", &g)?;
            write_text(&a.out, "gantt.svg", &render_svg(&g, &trace.tasks))?;
        }
        Command::Report(a) => {
            let report = build_report(&a.runs, a.baseline)?;
            let md = report.markdown();
            write_text(&a.out, "report.md", &md)?;
            write_text(&a.out, "report.csv", &report.csv())?;
            print!("{md}");
        }
    }
    Ok(())
}

fn graph_json(g: &NodeGraph) -> serde_json::Value {
    let n = g.nodes().len();
    let distances: Vec<Vec<Option<f64>>> = (0..n).map(|i| (0..n).map(|j| g.distance(i, j)).collect()).collect();
    let hash: String = g.grid_hash().iter().map(|b| format!("{b:02x}")).collect();
    json!({
        "nodes": g.nodes().iter().map(|x| &x.id).collect::<Vec<_>>(),
        "entries": g.entry_count(),
        "complete": g.is_complete(),
        "grid_hash": hash,
        "distances": distances,
    })
}

fn out_dir(cmd: &Command) -> Option<&Path> {
    match cmd {
        Command::Train(a) => Some(&a.out),
        Command::Eval(a) => Some(&a.out),
        Command::Sweep(a) => Some(&a.out),
        Command::Zeroshot(a) => Some(&a.out),
        Command::Gantt(a) => Some(&a.out),
        Command::Report(a) => Some(&a.out),
        Command::Graph(_) => None,
    }
}

fn error_record(kind: &str, message: &str) -> String {
    json!({ "error": { "kind": kind, "message": message } }).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("{}", error_record("usage", first));
            return ExitCode::from(2);
        }
    };
    let out = out_dir(&cli.command).map(Path::to_path_buf);
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let rec = error_record(e.kind(), &e.to_string());
            eprintln!("{rec}");
            if let Some(dir) = out.filter(|d| d.is_dir()) {
                let _ = write_atomic(&dir.join("error.json"), (rec + "\n").as_bytes());
            }
            ExitCode::from(1)
        }
    }
}
