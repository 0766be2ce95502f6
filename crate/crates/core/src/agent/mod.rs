//! High-level task-selection agent: replay, targets, exploration and training.

mod algo;
mod dqn;
mod episode;
mod replay;
mod runner;
mod train;

pub use algo::{AlgoTraits, Algorithm, Exploration};
pub use dqn::{masked_argmax, random_legal, select_action, sync_target, td_targets, ActionStrategy, Learner, LearnerConfig, TrainError};
pub use episode::{episode_end_process, reward_modification, tick_weight, BufferPolicy, Transition};
pub use replay::{PrioritizedReplay, Sample, SumTree};
pub use runner::{
    evaluate, rollout, AllocationRecord, EnvError, EpisodeSummary, EvalStats, GreedyPolicy, MacroEnv, MacroStep, Policy,
    PriorityPolicy, RandomPolicy, Rollout,
};
pub use train::{episode_seed, train, EpisodeMetrics, EvalRecord, NetSpec, RunError, TrainConfig, TrainObserver, TrainOutcome};
