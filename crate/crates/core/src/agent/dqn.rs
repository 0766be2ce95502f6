//! Action selection, bootstrap targets and the prioritized double-DQN update.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::episode::Transition;
use super::replay::PrioritizedReplay;
use crate::nn::{Adam, AdamConfig, Float, QNetwork};
use crate::sim::EncodedState;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("non-finite loss {loss} at gradient step {step}")]
    NonFiniteLoss { loss: f64, step: u64 },
    #[error("replay holds {have} transitions, batch needs {need}")]
    Underfull { have: usize, need: usize },
}

/// How an action is chosen at one decision point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActionStrategy {
    /// Noise off, no random actions.
    Greedy,
    EpsilonGreedy(f64),
    /// Fresh layer noise, then greedy.
    Noisy,
    Both(f64),
}

/// Index of the largest legal entry; ties go to the lowest index.
///
/// Panics when no action is legal.
pub fn masked_argmax(q: &[f64], legal: &[bool]) -> usize {
    assert_eq!(q.len(), legal.len(), "q-values and mask differ in length");
    let mut best: Option<usize> = None;
    for (i, (&v, &ok)) in q.iter().zip(legal).enumerate() {
        if ok && best.is_none_or(|b| v > q[b]) {
            best = Some(i);
        }
    }
    best.expect("no legal action")
}

/// Uniform draw among legal actions.
pub fn random_legal<R: Rng>(legal: &[bool], rng: &mut R) -> usize {
    let n = legal.iter().filter(|&&l| l).count();
    assert!(n > 0, "no legal action");
    let k = rng.random_range(0..n);
    legal.iter().enumerate().filter(|(_, &l)| l).nth(k).unwrap().0
}

/// Picks an action for `state`. Illegal actions are never returned.
pub fn select_action(
    net: &mut QNetwork,
    state: &EncodedState,
    legal: &[bool],
    strategy: ActionStrategy,
    rng: &mut ChaCha8Rng,
) -> usize {
    assert!(legal.iter().any(|&l| l), "no legal action");
    let (epsilon, noisy) = match strategy {
        ActionStrategy::Greedy => (0.0, false),
        ActionStrategy::EpsilonGreedy(e) => (e, false),
        ActionStrategy::Noisy => (0.0, true),
        ActionStrategy::Both(e) => (e, true),
    };
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return random_legal(legal, rng);
    }
    let noisy = noisy && net.config().noisy;
    net.set_noise(noisy);
    if noisy {
        net.resample_noise(rng);
    }
    masked_argmax(&net.q_values(state), legal)
}

/// Bootstrap targets. With `double`, the online network picks the next action
/// and the target network scores it; otherwise the target network's legal
/// maximum is used. Terminal transitions get no bootstrap term; others are
/// discounted once per tick they span.
pub fn td_targets(batch: &[&Transition], online: &QNetwork, target: &QNetwork, gamma: f64, double: bool) -> Vec<f64> {
    let live: Vec<usize> = (0..batch.len()).filter(|&i| !batch[i].terminal).collect();
    let mut out: Vec<f64> = batch.iter().map(|t| t.r).collect();
    if live.is_empty() || gamma == 0.0 {
        return out;
    }
    let next: Vec<&EncodedState> = live.iter().map(|&i| &*batch[i].s_next).collect();
    let tq = target.forward(&next);
    let oq = double.then(|| online.forward(&next));
    for (k, &i) in live.iter().enumerate() {
        let legal = &batch[i].next_legal;
        let scores = tq.q_values(k);
        let a = match &oq {
            Some(o) => masked_argmax(&o.q_values(k), legal),
            None => masked_argmax(&scores, legal),
        };
        out[i] += batch[i].discount(gamma) * scores[a];
    }
    out
}

/// Hard copy of all online parameters into the target network.
pub fn sync_target(online: &QNetwork, target: &mut QNetwork) {
    assert_eq!(online.config(), target.config(), "architecture mismatch");
    target.copy_params_from(online);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnerConfig {
    pub capacity: usize,
    pub batch: usize,
    pub gamma: f64,
    pub double: bool,
    /// Gradient steps between target syncs.
    pub target_sync: u64,
    pub omega: f64,
    pub priority_floor: f64,
    pub adam: AdamConfig,
}

/// Online and target networks, optimizer and replay memory.
#[derive(Debug, Clone)]
pub struct Learner {
    pub online: QNetwork,
    pub target: QNetwork,
    pub replay: PrioritizedReplay<Transition>,
    adam: Adam,
    config: LearnerConfig,
    grad_steps: u64,
}

impl Learner {
    pub fn new(online: QNetwork, config: LearnerConfig) -> Self {
        assert!(config.batch > 0 && config.batch <= config.capacity, "batch must be in 1..=capacity");
        assert!(config.target_sync > 0, "target sync period must be positive");
        let target = online.clone();
        let adam = Adam::new(config.adam, online.params());
        Self {
            online,
            target,
            replay: PrioritizedReplay::new(config.capacity, config.omega, config.priority_floor),
            adam,
            config,
            grad_steps: 0,
        }
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    pub fn grad_steps(&self) -> u64 {
        self.grad_steps
    }

    pub fn push(&mut self, t: Transition) {
        self.replay.push(t);
    }

    /// One sampled update. Returns the batch loss `mean((w * td)^2)`.
    pub fn train_step(&mut self, beta: f64, rng: &mut ChaCha8Rng) -> Result<f64, TrainError> {
        let n = self.config.batch;
        if self.replay.len() < n {
            return Err(TrainError::Underfull {
                have: self.replay.len(),
                need: n,
            });
        }
        let sample = self.replay.sample(n, beta, rng);
        if self.online.config().noisy {
            self.online.set_noise(true);
            self.target.set_noise(true);
            self.online.resample_noise(rng);
            self.target.resample_noise(rng);
        }
        let batch: Vec<&Transition> = sample.indices.iter().map(|&i| self.replay.get(i)).collect();
        let targets = td_targets(&batch, &self.online, &self.target, self.config.gamma, self.config.double);

        let states: Vec<&EncodedState> = batch.iter().map(|t| &*t.s).collect();
        let mut fwd = self.online.forward(&states);
        let n_actions = fwd.n_actions;
        let picks: Vec<usize> = batch.iter().enumerate().map(|(b, t)| b * n_actions + t.a).collect();
        let q = fwd.tape.value(fwd.q).data();
        let td: Vec<f64> = picks.iter().zip(&targets).map(|(&p, &y)| y - f64::from(q[p])).collect();
        let y: Vec<Float> = targets.iter().map(|&v| v as Float).collect();
        // squared so that the loss is mean((w * td)^2)
        let w2: Vec<Float> = sample.weights.iter().map(|&w| (w * w) as Float).collect();
        let loss_var = fwd.tape.pick_mse(fwd.q, &picks, &y, &w2);
        let loss = f64::from(fwd.tape.value(loss_var).data()[0]);
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                loss,
                step: self.grad_steps,
            });
        }
        let grads = fwd.tape.backward(loss_var);
        let pg = self.online.param_grads(&fwd, &grads);
        self.adam.update(self.online.params_mut(), &pg);
        self.replay.update_priorities(&sample.indices, &td);

        self.grad_steps += 1;
        if self.grad_steps % self.config.target_sync == 0 {
            sync_target(&self.online, &mut self.target);
        }
        Ok(loss)
    }
}
