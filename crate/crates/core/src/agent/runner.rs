//! Decision-level environment wrapper, fixed policies and evaluation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dqn::{masked_argmax, random_legal};
use crate::alloc::{allocate, candidate_distances, AllocError, LowLevelRule};
use crate::nn::QNetwork;
use crate::sim::{encode_state, Allocation, EncodedState, EntityId, EntityKind, SimError, Simulator, TickRecord, WorldState};

/// An allocation together with the alternatives that were idle at the time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationRecord {
    pub tick: u32,
    pub allocation: Allocation,
    pub human_candidates: Vec<(EntityId, f64)>,
    pub robot_candidates: Vec<(EntityId, f64)>,
}

impl AllocationRecord {
    /// Distance of the chosen entity of `kind` and the smallest candidate distance.
    pub fn chosen_and_best(&self, kind: EntityKind) -> Option<(f64, f64)> {
        let (chosen, cands) = match kind {
            EntityKind::Human => (self.allocation.human?, &self.human_candidates),
            _ => (self.allocation.robot?, &self.robot_candidates),
        };
        let d = cands.iter().find(|c| c.0 == chosen)?.1;
        let best = cands.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
        Some((d, best))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("action {action} is not legal at tick {tick}")]
    IllegalAction { action: usize, tick: u32 },
    #[error(transparent)]
    Alloc(#[from] AllocError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Result of one decision, possibly spanning several ticks.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroStep {
    /// Per-tick rewards in order.
    pub rewards: Vec<f64>,
    pub done: bool,
}

impl MacroStep {
    pub fn ticks(&self) -> u32 {
        self.rewards.len() as u32
    }

    pub fn total(&self) -> f64 {
        self.rewards.iter().sum()
    }

    /// `sum_j gamma^j r_j` over the covered ticks.
    pub fn discounted(&self, gamma: f64) -> f64 {
        self.rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc)
    }
}

/// Steps the simulator one decision at a time. Ticks where only the no-op is
/// legal are advanced automatically, so every observed state offers a choice.
pub struct MacroEnv<'a> {
    sim: &'a Simulator,
    rule: LowLevelRule,
    state: WorldState,
    record: bool,
    trace: Vec<TickRecord>,
    allocations: Vec<AllocationRecord>,
    decisions: usize,
    episode_return: f64,
}

impl<'a> MacroEnv<'a> {
    pub fn new(sim: &'a Simulator, rule: LowLevelRule, seed: u64, record: bool) -> Result<Self, EnvError> {
        let mut env = Self {
            sim,
            rule,
            state: sim.reset(seed),
            record,
            trace: Vec::new(),
            allocations: Vec::new(),
            decisions: 0,
            episode_return: 0.0,
        };
        env.fast_forward()?;
        Ok(env)
    }

    pub fn sim(&self) -> &Simulator {
        self.sim
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn observe(&self) -> EncodedState {
        encode_state(self.sim, &self.state)
    }

    pub fn legal(&self) -> Vec<bool> {
        self.sim.legal_actions(&self.state)
    }

    pub fn is_done(&self) -> bool {
        self.sim.is_done(&self.state)
    }

    pub fn trace(&self) -> &[TickRecord] {
        &self.trace
    }

    pub fn allocations(&self) -> &[AllocationRecord] {
        &self.allocations
    }

    fn only_noop(&self) -> bool {
        let legal = self.legal();
        let (last, rest) = legal.split_last().unwrap();
        *last && !rest.iter().any(|&l| l)
    }

    fn tick(&mut self, action: Option<usize>, alloc: Option<Allocation>) -> Result<(f64, bool), EnvError> {
        let out = self.sim.step(&mut self.state, alloc.as_ref())?;
        self.episode_return += out.reward;
        if self.record {
            self.trace
                .push(TickRecord::capture(&self.state, action, alloc, out.reward, out.events));
        }
        Ok((out.reward, out.done))
    }

    fn fast_forward(&mut self) -> Result<MacroStep, EnvError> {
        let mut step = MacroStep {
            rewards: Vec::new(),
            done: self.is_done(),
        };
        while !step.done && self.only_noop() {
            let (r, done) = self.tick(None, None)?;
            step.rewards.push(r);
            step.done = done;
        }
        Ok(step)
    }

    pub fn step(&mut self, action: usize) -> Result<MacroStep, EnvError> {
        let legal = self.legal();
        if !legal.get(action).copied().unwrap_or(false) {
            return Err(EnvError::IllegalAction {
                action,
                tick: self.state.tick,
            });
        }
        let task = (action < self.sim.scenario().n_tasks()).then_some(action);
        let cands = task.map(|t| {
            (
                candidate_distances(self.sim, &self.state, t, EntityKind::Human),
                candidate_distances(self.sim, &self.state, t, EntityKind::Robot),
            )
        });
        let alloc = allocate(self.sim, &mut self.state, action, self.rule)?;
        if let (Some(a), Some((h, r))) = (alloc, cands) {
            self.allocations.push(AllocationRecord {
                tick: self.state.tick,
                allocation: a,
                human_candidates: if a.human.is_some() { h } else { Vec::new() },
                robot_candidates: if a.robot.is_some() { r } else { Vec::new() },
            });
        }
        self.decisions += 1;
        let (reward, done) = self.tick(Some(action), alloc)?;
        let mut step = MacroStep {
            rewards: vec![reward],
            done,
        };
        if !done {
            let rest = self.fast_forward()?;
            step.rewards.extend(rest.rewards);
            step.done = rest.done;
        }
        Ok(step)
    }

    pub fn summary(&self) -> EpisodeSummary {
        EpisodeSummary {
            success: self.sim.is_success(&self.state),
            makespan: self.state.tick,
            progress: self.sim.progress(&self.state),
            total_distance: self.state.total_distance(),
            episode_return: self.episode_return,
            decisions: self.decisions,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub success: bool,
    /// Final tick: completion tick on success, the horizon otherwise.
    pub makespan: u32,
    pub progress: f64,
    pub total_distance: f64,
    pub episode_return: f64,
    pub decisions: usize,
}

/// A fixed decision rule used for rollouts.
pub trait Policy {
    fn act(&mut self, env: &MacroEnv<'_>) -> usize;
}

/// Uniform over legal actions, no-op included.
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Policy for RandomPolicy {
    fn act(&mut self, env: &MacroEnv<'_>) -> usize {
        random_legal(&env.legal(), &mut self.rng)
    }
}

/// Always starts the lowest-index available task; waits otherwise.
pub struct PriorityPolicy;

impl Policy for PriorityPolicy {
    fn act(&mut self, env: &MacroEnv<'_>) -> usize {
        let legal = env.legal();
        legal.iter().position(|&l| l).unwrap()
    }
}

/// Greedy in the network's q-values with layer noise disabled.
pub struct GreedyPolicy {
    net: QNetwork,
}

impl GreedyPolicy {
    pub fn new(net: &QNetwork) -> Self {
        let mut net = net.clone();
        net.set_noise(false);
        Self { net }
    }
}

impl Policy for GreedyPolicy {
    fn act(&mut self, env: &MacroEnv<'_>) -> usize {
        masked_argmax(&self.net.q_values(&env.observe()), &env.legal())
    }
}

/// A finished rollout.
pub struct Rollout {
    pub summary: EpisodeSummary,
    pub trace: Vec<TickRecord>,
    pub allocations: Vec<AllocationRecord>,
}

pub fn rollout(
    sim: &Simulator,
    rule: LowLevelRule,
    seed: u64,
    policy: &mut dyn Policy,
    record: bool,
) -> Result<Rollout, EnvError> {
    let mut env = MacroEnv::new(sim, rule, seed, record)?;
    while !env.is_done() {
        let a = policy.act(&env);
        env.step(a)?;
    }
    Ok(Rollout {
        summary: env.summary(),
        trace: env.trace,
        allocations: env.allocations,
    })
}

/// Aggregate statistics over evaluation episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub episodes: usize,
    pub mean_makespan: f64,
    pub std_makespan: f64,
    pub success_rate: f64,
    pub mean_progress: f64,
    pub mean_distance: f64,
    pub std_distance: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl EvalStats {
    pub fn from_summaries(s: &[EpisodeSummary]) -> Self {
        assert!(!s.is_empty(), "no episodes to summarize");
        let (mean_makespan, std_makespan) = mean_std(&s.iter().map(|e| f64::from(e.makespan)).collect::<Vec<_>>());
        let (mean_distance, std_distance) = mean_std(&s.iter().map(|e| e.total_distance).collect::<Vec<_>>());
        Self {
            episodes: s.len(),
            mean_makespan,
            std_makespan,
            success_rate: s.iter().filter(|e| e.success).count() as f64 / s.len() as f64,
            mean_progress: s.iter().map(|e| e.progress).sum::<f64>() / s.len() as f64,
            mean_distance,
            std_distance,
        }
    }
}

/// Runs `policy` once per seed.
pub fn evaluate(
    sim: &Simulator,
    rule: LowLevelRule,
    policy: &mut dyn Policy,
    seeds: &[u64],
) -> Result<(EvalStats, Vec<EpisodeSummary>), EnvError> {
    let summaries = seeds
        .iter()
        .map(|&s| rollout(sim, rule, s, policy, false).map(|r| r.summary))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((EvalStats::from_summaries(&summaries), summaries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{builtin, Scenario};

    fn mini() -> Simulator {
        Simulator::new(Scenario::from_json(builtin::MINIATURE).unwrap()).unwrap()
    }

    #[test]
    fn every_observed_state_offers_a_real_choice() {
        let sim = mini();
        let mut policy = RandomPolicy::new(3);
        for seed in 0..20 {
            let mut env = MacroEnv::new(&sim, LowLevelRule::Sap, seed, false).unwrap();
            while !env.is_done() {
                let legal = env.legal();
                assert!(legal[..legal.len() - 1].iter().any(|&l| l));
                let a = policy.act(&env);
                env.step(a).unwrap();
            }
        }
    }

    #[test]
    fn macro_rewards_sum_to_episode_return() {
        let sim = mini();
        let mut env = MacroEnv::new(&sim, LowLevelRule::Sap, 4, true).unwrap();
        let mut total = 0.0;
        let mut ticks = 0;
        while !env.is_done() {
            let s = env.step(PriorityPolicy.act(&env)).unwrap();
            total += s.total();
            ticks += s.ticks();
        }
        let tick_sum: f64 = env.trace().iter().map(|t| t.reward).sum();
        assert!((total - tick_sum).abs() < 1e-12);
        assert_eq!(ticks as usize, env.trace().len());
        assert_eq!(env.summary().makespan, ticks);
    }

    #[test]
    fn illegal_action_rejected() {
        let sim = mini();
        let mut env = MacroEnv::new(&sim, LowLevelRule::Sap, 0, false).unwrap();
        // assemble runs once per product, so it cannot be picked again
        env.step(1).unwrap();
        assert!(matches!(env.step(1), Err(EnvError::IllegalAction { .. })));
    }

    #[test]
    fn eval_is_repeatable() {
        let sim = mini();
        let seeds: Vec<u64> = (0..10).collect();
        let a = evaluate(&sim, LowLevelRule::Sap, &mut RandomPolicy::new(1), &seeds).unwrap();
        let b = evaluate(&sim, LowLevelRule::Sap, &mut RandomPolicy::new(1), &seeds).unwrap();
        assert_eq!(a, b);
    }
}
