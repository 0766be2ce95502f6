//! Checkpoint evaluation across team sizes and order quantities.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::agent::{evaluate, EvalStats, GreedyPolicy, Policy, RandomPolicy};
use crate::alloc::LowLevelRule;
use crate::nn::{QNetConfig, QNetwork};
use crate::sim::{Scenario, Simulator};

/// Which high-level policy an evaluation runs.
pub enum EvalPolicy<'a> {
    Network(&'a QNetwork),
    /// Uniform legal actions from the given seed.
    Random(u64),
}

impl EvalPolicy<'_> {
    fn build(&self) -> Box<dyn Policy> {
        match self {
            EvalPolicy::Network(n) => Box::new(GreedyPolicy::new(n)),
            EvalPolicy::Random(s) => Box::new(RandomPolicy::new(*s)),
        }
    }
}

/// Checks that `net` can act in `scenario`.
pub fn check_action_space(net: &QNetwork, scenario: &Scenario) -> Result<(), HarnessError> {
    let want = QNetConfig::for_scenario(scenario);
    let have = net.config();
    if have.n_actions != want.n_actions || have.group_widths != want.group_widths {
        return Err(HarnessError::ActionSpace(format!(
            "network expects {} actions and token widths {:?}; scenario `{}` has {} and {:?}",
            have.n_actions, have.group_widths, scenario.name, want.n_actions, want.group_widths
        )));
    }
    Ok(())
}

fn run_cell(
    scenario: Scenario,
    policy: &EvalPolicy<'_>,
    rule: LowLevelRule,
    trials: usize,
    seed: u64,
) -> Result<EvalStats, HarnessError> {
    if trials == 0 {
        return Err(HarnessError::Invalid("evaluation needs at least one trial".into()));
    }
    if let EvalPolicy::Network(n) = policy {
        check_action_space(n, &scenario)?;
    }
    let sim = Simulator::new(scenario)?;
    let seeds: Vec<u64> = (0..trials as u64).map(|i| seed + i).collect();
    let mut p = policy.build();
    Ok(evaluate(&sim, rule, p.as_mut(), &seeds)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub humans: usize,
    pub robots: usize,
    pub stats: EvalStats,
}

/// Evaluates every (humans, robots) combination with the same seed list.
pub fn eval_grid(
    base: &Scenario,
    policy: &EvalPolicy<'_>,
    rule: LowLevelRule,
    humans: &[usize],
    robots: &[usize],
    trials: usize,
    seed: u64,
) -> Result<Vec<GridCell>, HarnessError> {
    let mut out = Vec::with_capacity(humans.len() * robots.len());
    for &h in humans {
        for &r in robots {
            let stats = run_cell(base.with_team(h, r)?, policy, rule, trials, seed)?;
            out.push(GridCell {
                humans: h,
                robots: r,
                stats,
            });
        }
    }
    Ok(out)
}

/// Makespan table with humans as rows and robots as columns.
pub fn grid_markdown(cells: &[GridCell]) -> String {
    let mut hs: Vec<usize> = cells.iter().map(|c| c.humans).collect();
    let mut rs: Vec<usize> = cells.iter().map(|c| c.robots).collect();
    hs.sort_unstable();
    hs.dedup();
    rs.sort_unstable();
    rs.dedup();
    let mut s = String::from("| |");
    for r in &rs {
        let _ = write!(s, " R{r} |");
    }
    s.push_str("\n|---|");
    s.push_str(&"---|".repeat(rs.len()));
    s.push('\n');
    for h in &hs {
        let _ = write!(s, "| H{h} |");
        for r in &rs {
            match cells.iter().find(|c| c.humans == *h && c.robots == *r) {
                Some(c) => {
                    let _ = write!(
                        s,
                        " {:.2} ± {:.2} ({:.0}%) |",
                        c.stats.mean_makespan,
                        c.stats.std_makespan,
                        100.0 * c.stats.success_rate
                    );
                }
                None => s.push_str(" - |"),
            }
        }
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderRow {
    pub order: u32,
    pub stats: EvalStats,
}

/// Evaluates unseen order quantities; the task set, and so the action space,
/// stays fixed.
pub fn eval_orders(
    base: &Scenario,
    policy: &EvalPolicy<'_>,
    rule: LowLevelRule,
    orders: &[u32],
    trials: usize,
    seed: u64,
) -> Result<Vec<OrderRow>, HarnessError> {
    orders
        .iter()
        .map(|&order| {
            Ok(OrderRow {
                order,
                stats: run_cell(base.with_order(order)?, policy, rule, trials, seed)?,
            })
        })
        .collect()
}

pub fn orders_markdown(rows: &[OrderRow]) -> String {
    let mut s = String::from("| order | mean makespan | success rate | mean progress |\n|---|---|---|---|\n");
    for r in rows {
        let _ = writeln!(
            s,
            "| {} | {:.2} ± {:.2} | {:.3} | {:.3} |",
            r.order, r.stats.mean_makespan, r.stats.std_makespan, r.stats.success_rate, r.stats.mean_progress
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::builtin;

    #[test]
    fn zero_trials_rejected() {
        let sc = Scenario::from_json(builtin::MINIATURE).unwrap();
        let err = eval_grid(&sc, &EvalPolicy::Random(0), LowLevelRule::Sap, &[1], &[1], 0, 0).unwrap_err();
        assert!(matches!(err, HarnessError::Invalid(_)));
    }

    #[test]
    fn grid_is_repeatable_and_complete() {
        let sc = Scenario::from_json(builtin::MINIATURE).unwrap();
        let run = || eval_grid(&sc, &EvalPolicy::Random(3), LowLevelRule::Sap, &[1, 2], &[1, 2, 3], 4, 9).unwrap();
        let a = run();
        assert_eq!(a.len(), 6);
        assert_eq!(a, run());
        let md = grid_markdown(&a);
        assert!(md.contains("| H2 |") && md.contains(" R3 |"));
    }

    #[test]
    fn mismatched_network_rejected() {
        let mini = Scenario::from_json(builtin::MINIATURE).unwrap();
        let full = Scenario::from_json(builtin::DEFAULT).unwrap();
        let net = QNetwork::new(QNetConfig::for_scenario(&mini), 0);
        let err = eval_orders(&full, &EvalPolicy::Network(&net), LowLevelRule::Sap, &[1], 1, 0).unwrap_err();
        assert!(matches!(err, HarnessError::ActionSpace(_)));
    }
}
