//! The episode loop: act, hold the episode, rewrite it into replay, learn.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::algo::{Algorithm, Exploration};
use super::dqn::{select_action, ActionStrategy, Learner, LearnerConfig, TrainError};
use super::episode::{episode_end_process, BufferPolicy, Transition};
use super::runner::{evaluate, EnvError, EvalStats, GreedyPolicy, MacroEnv};
use crate::alloc::LowLevelRule;
use crate::nn::{save_checkpoint, AdamConfig, QNetConfig, QNetwork};
use crate::sim::Simulator;

/// Network size knobs; widths come from the scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub d_model: usize,
    pub heads: usize,
    pub depth: usize,
    pub encoder_hidden: usize,
    pub stream_hidden: usize,
}

impl Default for NetSpec {
    fn default() -> Self {
        Self {
            d_model: 64,
            heads: 2,
            depth: 2,
            encoder_hidden: 64,
            stream_hidden: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub low_level: LowLevelRule,
    pub seed: u64,
    /// Maximum number of training episodes.
    pub episodes: usize,
    pub replay_capacity: usize,
    pub batch: usize,
    /// Gradient steps between target-network syncs.
    pub target_sync: u64,
    /// Transitions pushed before the first update.
    pub warmup: u64,
    /// Update every this many pushed transitions.
    pub replay_period: u64,
    /// Gradient steps per trigger; defaults to `replay_period`.
    pub updates_per_period: Option<u64>,
    pub gamma: f64,
    pub lr: f64,
    pub clip_norm: Option<f64>,
    pub omega: f64,
    pub priority_floor: f64,
    pub beta_start: f64,
    pub beta_end: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the episode budget over which epsilon decays.
    pub epsilon_fraction: f64,
    pub net: NetSpec,
    /// Evaluate every this many episodes; 0 disables periodic evaluation.
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub eval_seed: u64,
    /// Write a checkpoint every this many episodes; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Stop once a periodic evaluation reaches this success rate.
    pub stop_at_success: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::EbqN,
            low_level: LowLevelRule::Sap,
            seed: 0,
            episodes: 2000,
            replay_capacity: 100_000,
            batch: 64,
            target_sync: 500,
            warmup: 2000,
            replay_period: 4,
            updates_per_period: None,
            gamma: 0.99,
            lr: 3e-4,
            clip_norm: Some(10.0),
            omega: 0.6,
            priority_floor: 1e-4,
            beta_start: 0.4,
            beta_end: 1.0,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_fraction: 0.3,
            net: NetSpec::default(),
            eval_every: 0,
            eval_episodes: 20,
            eval_seed: 1_000_000,
            checkpoint_every: 0,
            stop_at_success: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !self.algorithm.is_learning() {
            return Err(format!("{} is not a trainable algorithm", self.algorithm));
        }
        if self.batch == 0 || self.batch > self.replay_capacity {
            return Err(format!("batch {} must be in 1..={}", self.batch, self.replay_capacity));
        }
        if self.replay_period == 0 || self.target_sync == 0 {
            return Err("replay period and target sync period must be positive".into());
        }
        if self.episodes == 0 {
            return Err("episode budget must be positive".into());
        }
        if self.eval_every > 0 && self.eval_episodes == 0 {
            return Err("periodic evaluation needs at least one episode".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) || self.lr < 0.0 {
            return Err("gamma must be in [0, 1] and lr non-negative".into());
        }
        Ok(())
    }

    pub fn network_config(&self, sim: &Simulator) -> QNetConfig {
        let traits = self.algorithm.traits();
        QNetConfig {
            d_model: self.net.d_model,
            heads: self.net.heads,
            depth: self.net.depth,
            encoder_hidden: self.net.encoder_hidden,
            stream_hidden: self.net.stream_hidden,
            dueling: traits.dueling,
            noisy: traits.exploration.uses_noise(),
            ..QNetConfig::for_scenario(sim.scenario())
        }
    }

    pub fn epsilon(&self, episode: usize) -> f64 {
        let span = self.epsilon_fraction * self.episodes as f64;
        let frac = if span <= 0.0 { 1.0 } else { (episode as f64 / span).min(1.0) };
        self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)
    }

    pub fn beta(&self, episode: usize) -> f64 {
        let frac = if self.episodes <= 1 {
            1.0
        } else {
            episode as f64 / (self.episodes - 1) as f64
        };
        self.beta_start + frac.min(1.0) * (self.beta_end - self.beta_start)
    }

    pub fn eval_seeds(&self) -> Vec<u64> {
        (0..self.eval_episodes as u64).map(|i| self.eval_seed + i).collect()
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub steps: u32,
    pub decisions: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub makespan: u32,
    pub progress: f64,
    pub success: bool,
    pub loss_mean: Option<f64>,
    pub epsilon: f64,
    pub buffer_size: usize,
    pub grad_steps: u64,
}

/// Periodic greedy evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    /// Training episodes completed before this evaluation.
    pub episode: usize,
    pub mean_makespan: f64,
    pub std_makespan: f64,
    pub success_rate: f64,
    pub mean_progress: f64,
    pub mean_distance: f64,
}

impl EvalRecord {
    fn new(episode: usize, s: &EvalStats) -> Self {
        Self {
            episode,
            mean_makespan: s.mean_makespan,
            std_makespan: s.std_makespan,
            success_rate: s.success_rate,
            mean_progress: s.mean_progress,
            mean_distance: s.mean_distance,
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("training diverged in episode {episode}: {source}")]
    Train { episode: usize, source: TrainError },
    #[error("writing run output: {0}")]
    Io(#[from] std::io::Error),
}

/// Receives progress while training runs. Default methods do nothing.
pub trait TrainObserver {
    fn on_episode(&mut self, _m: &EpisodeMetrics) -> std::io::Result<()> {
        Ok(())
    }

    fn on_eval(&mut self, _e: &EvalRecord) -> std::io::Result<()> {
        Ok(())
    }

    fn on_checkpoint(&mut self, _episode: usize, _bytes: &[u8], _last: bool) -> std::io::Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

pub struct TrainOutcome {
    pub network: QNetwork,
    pub metrics: Vec<EpisodeMetrics>,
    pub evals: Vec<EvalRecord>,
    pub episodes_run: usize,
    /// Transitions pushed into replay, duplicates included.
    pub t_total: u64,
    pub grad_steps: u64,
    pub successful_episodes: usize,
    /// Replay insertions that came from successful episodes.
    pub success_entries: u64,
    /// First evaluation episode meeting `stop_at_success`, if any.
    pub threshold_reached_at: Option<usize>,
}

fn mix(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Environment seed of training episode `episode`.
pub fn episode_seed(seed: u64, episode: usize) -> u64 {
    mix(seed, 0x1000 + episode as u64)
}

fn strategy(exploration: Exploration, epsilon: f64) -> ActionStrategy {
    match exploration {
        Exploration::EpsilonGreedy => ActionStrategy::EpsilonGreedy(epsilon),
        Exploration::Noisy => ActionStrategy::Noisy,
        Exploration::Both => ActionStrategy::Both(epsilon),
    }
}

fn checkpoint_meta(config: &TrainConfig, sim: &Simulator) -> String {
    serde_json::json!({
        "algorithm": config.algorithm.name(),
        "low_level": config.low_level.name(),
        "seed": config.seed,
        "scenario": sim.scenario().name,
        "scenario_hash": sim.scenario().hash_hex(),
    })
    .to_string()
}

/// Runs the full training loop. Deterministic for a given `(config, sim)`.
pub fn train(sim: &Simulator, config: &TrainConfig, observer: &mut dyn TrainObserver) -> Result<TrainOutcome, RunError> {
    config.validate().map_err(RunError::Config)?;
    let traits = config.algorithm.traits();
    let reward = &sim.scenario().reward;
    let horizon = sim.scenario().horizon;
    let buffer_policy = BufferPolicy {
        efficient_buffer: traits.efficient_buffer,
        reward_modify: traits.reward_modify,
        eta4: reward.eta4,
        eta5: reward.eta5,
        eta6: reward.eta6,
        gamma: config.gamma,
    };
    let net = QNetwork::new(config.network_config(sim), mix(config.seed, 1));
    let mut learner = Learner::new(
        net,
        LearnerConfig {
            capacity: config.replay_capacity,
            batch: config.batch,
            gamma: config.gamma,
            double: traits.double,
            target_sync: config.target_sync,
            omega: config.omega,
            priority_floor: config.priority_floor,
            adam: AdamConfig {
                lr: config.lr,
                clip_norm: config.clip_norm,
                ..AdamConfig::default()
            },
        },
    );
    let mut explore_rng = ChaCha8Rng::seed_from_u64(mix(config.seed, 2));
    let mut replay_rng = ChaCha8Rng::seed_from_u64(mix(config.seed, 3));
    let updates = config.updates_per_period.unwrap_or(config.replay_period);
    let meta = checkpoint_meta(config, sim);
    let eval_seeds = config.eval_seeds();

    let mut out = TrainOutcome {
        network: learner.online.clone(),
        metrics: Vec::with_capacity(config.episodes),
        evals: Vec::new(),
        episodes_run: 0,
        t_total: 0,
        grad_steps: 0,
        successful_episodes: 0,
        success_entries: 0,
        threshold_reached_at: None,
    };

    for ep in 0..config.episodes {
        let epsilon = if traits.exploration.uses_epsilon() {
            config.epsilon(ep)
        } else {
            0.0
        };
        let mode = strategy(traits.exploration, epsilon);
        let beta = config.beta(ep);

        let mut env = MacroEnv::new(sim, config.low_level, episode_seed(config.seed, ep), false)?;
        let mut s = Arc::new(env.observe());
        let mut temp: Vec<Transition> = Vec::new();
        while !env.is_done() {
            let legal = env.legal();
            let a = select_action(&mut learner.online, &s, &legal, mode, &mut explore_rng);
            let step = env.step(a)?;
            let s_next = Arc::new(env.observe());
            temp.push(Transition {
                s,
                a,
                s_next: Arc::clone(&s_next),
                next_legal: Arc::new(env.legal()),
                r: step.discounted(config.gamma),
                terminal: step.done,
                ticks: step.ticks(),
            });
            s = s_next;
        }
        let summary = env.summary();
        let processed = episode_end_process(&temp, summary.success, summary.makespan, horizon, &buffer_policy);

        let mut losses = Vec::new();
        for t in processed {
            learner.push(t);
            out.t_total += 1;
            if summary.success {
                out.success_entries += 1;
            }
            if out.t_total >= config.warmup && out.t_total % config.replay_period == 0 && learner.replay.len() >= config.batch {
                for _ in 0..updates {
                    let loss = learner
                        .train_step(beta, &mut replay_rng)
                        .map_err(|source| RunError::Train { episode: ep, source })?;
                    losses.push(loss);
                }
            }
        }
        if summary.success {
            out.successful_episodes += 1;
        }

        let m = EpisodeMetrics {
            episode: ep,
            steps: summary.makespan,
            decisions: summary.decisions,
            episode_return: summary.episode_return,
            makespan: summary.makespan,
            progress: summary.progress,
            success: summary.success,
            loss_mean: (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64),
            epsilon,
            buffer_size: learner.replay.len(),
            grad_steps: learner.grad_steps(),
        };
        observer.on_episode(&m)?;
        out.metrics.push(m);
        out.episodes_run = ep + 1;

        let done_episodes = ep + 1;
        let last = done_episodes == config.episodes;
        if config.eval_every > 0 && (done_episodes % config.eval_every == 0 || last) {
            let (stats, _) = evaluate(sim, config.low_level, &mut GreedyPolicy::new(&learner.online), &eval_seeds)?;
            let rec = EvalRecord::new(done_episodes, &stats);
            observer.on_eval(&rec)?;
            out.evals.push(rec);
            if let Some(th) = config.stop_at_success {
                if stats.success_rate >= th {
                    out.threshold_reached_at = Some(done_episodes);
                    break;
                }
            }
        }
        if !last && config.checkpoint_every > 0 && done_episodes % config.checkpoint_every == 0 {
            let bytes = save_checkpoint(&learner.online, learner.grad_steps(), &meta);
            observer.on_checkpoint(done_episodes, &bytes, false)?;
        }
    }

    let bytes = save_checkpoint(&learner.online, learner.grad_steps(), &meta);
    observer.on_checkpoint(out.episodes_run, &bytes, true)?;
    out.grad_steps = learner.grad_steps();
    out.network = learner.online;
    Ok(out)
}
