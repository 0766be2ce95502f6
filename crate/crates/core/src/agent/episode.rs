//! Transitions and the end-of-episode buffer rewrite.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::sim::EncodedState;

/// One high-level decision and its consequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Arc<EncodedState>,
    pub a: usize,
    pub s_next: Arc<EncodedState>,
    /// Legal actions at `s_next`; bootstrap maxima range over these only.
    pub next_legal: Arc<Vec<bool>>,
    /// Reward over the decision's ticks, discounted within the decision.
    pub r: f64,
    pub terminal: bool,
    /// Simulator ticks covered by the decision (forced waits included).
    pub ticks: u32,
}

impl Transition {
    /// Bootstrap discount `gamma^ticks`.
    pub fn discount(&self, gamma: f64) -> f64 {
        gamma.powi(self.ticks as i32)
    }
}

/// `sum_{j < ticks} gamma^j`: the weight a per-tick bonus receives when
/// `ticks` ticks are folded into one transition. Equals 1 for a single tick.
pub fn tick_weight(gamma: f64, ticks: u32) -> f64 {
    (0..ticks).map(|j| gamma.powi(j as i32)).sum()
}

/// How finished episodes enter the replay buffer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BufferPolicy {
    /// Episode-end processing on/off. Off passes transitions through untouched.
    pub efficient_buffer: bool,
    /// Add the episode-outcome reward offset (off for the duplication-only ablation).
    pub reward_modify: bool,
    pub eta4: f64,
    pub eta5: f64,
    /// Copies of each transition emitted after a successful episode.
    pub eta6: u32,
    /// Discount used to fold the offset over multi-tick transitions.
    pub gamma: f64,
}

/// Outcome reward offset: `eta4 * (H - makespan) / makespan` on success,
/// `-eta5` on failure.
pub fn reward_modification(success: bool, makespan: u32, horizon: u32, eta4: f64, eta5: f64) -> f64 {
    if success {
        assert!(makespan > 0 && makespan <= horizon, "successful makespan {makespan} outside (0, {horizon}]");
        eta4 * f64::from(horizon - makespan) / f64::from(makespan)
    } else {
        -eta5
    }
}

/// Rewrites a finished episode for insertion into replay. Every tick of the
/// episode receives the outcome offset, so a transition spanning several
/// ticks gets it once per tick, discounted like its reward. Duplicates stay
/// adjacent and episode order is preserved.
pub fn episode_end_process(
    temp: &[Transition],
    success: bool,
    makespan: u32,
    horizon: u32,
    policy: &BufferPolicy,
) -> Vec<Transition> {
    assert!(
        temp.last().is_none_or(|t| t.terminal),
        "episode-end processing called before the episode finished"
    );
    if !policy.efficient_buffer {
        return temp.to_vec();
    }
    let offset = if policy.reward_modify {
        reward_modification(success, makespan, horizon, policy.eta4, policy.eta5)
    } else {
        0.0
    };
    let repeat = if success { policy.eta6 as usize } else { 1 };
    let mut out = Vec::with_capacity(temp.len() * repeat);
    for t in temp {
        let mut m = t.clone();
        m.r += offset * tick_weight(policy.gamma, t.ticks);
        for _ in 0..repeat {
            out.push(m.clone());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{builtin, encode_state, Scenario, Simulator};

    fn policy(efficient_buffer: bool, reward_modify: bool) -> BufferPolicy {
        BufferPolicy {
            efficient_buffer,
            reward_modify,
            eta4: 0.4,
            eta5: 0.001,
            eta6: 5,
            gamma: 0.99,
        }
    }

    fn episode(len: usize) -> Vec<Transition> {
        let sim = Simulator::new(Scenario::from_json(builtin::MINIATURE).unwrap()).unwrap();
        let s = Arc::new(encode_state(&sim, &sim.reset(0)));
        (0..len)
            .map(|i| Transition {
                s: Arc::clone(&s),
                a: i % 3,
                s_next: Arc::clone(&s),
                next_legal: Arc::new(vec![true; 3]),
                r: i as f64 * 0.5,
                terminal: i + 1 == len,
                ticks: 1,
            })
            .collect()
    }

    #[test]
    fn outcome_offsets() {
        assert_eq!(reward_modification(true, 1000, 2000, 0.4, 0.001), 0.4);
        assert_eq!(reward_modification(false, 2000, 2000, 0.4, 0.001), -0.001);
        assert_eq!(reward_modification(true, 2000, 2000, 0.4, 0.001), 0.0);
    }

    #[test]
    fn success_duplicates_adjacent_in_order() {
        let out = episode_end_process(&episode(4), true, 30, 60, &policy(true, true));
        assert_eq!(out.len(), 20);
        let offset = 0.4 * (30.0 / 30.0);
        for (k, t) in out.iter().enumerate() {
            let i = k / 5;
            assert_eq!(t.a, i % 3);
            assert_eq!(t.r, i as f64 * 0.5 + offset);
        }
    }

    #[test]
    fn failure_passes_once_with_penalty() {
        let out = episode_end_process(&episode(4), false, 60, 60, &policy(true, true));
        assert_eq!(out.len(), 4);
        assert!(out.iter().enumerate().all(|(i, t)| t.r == i as f64 * 0.5 - 0.001));
    }

    #[test]
    fn ablation_switches() {
        let ep = episode(3);
        let plain = episode_end_process(&ep, true, 30, 60, &policy(false, true));
        assert_eq!(plain, ep);
        let dup = episode_end_process(&ep, true, 30, 60, &policy(true, false));
        assert_eq!(dup.len(), 15);
        assert!(dup.iter().enumerate().all(|(k, t)| t.r == ep[k / 5].r));
    }

    #[test]
    fn multi_tick_transition_gets_offset_per_tick() {
        let mut ep = episode(1);
        ep[0].ticks = 3;
        let out = episode_end_process(&ep, false, 60, 60, &policy(true, true));
        let w = 1.0 + 0.99 + 0.99 * 0.99;
        assert!((tick_weight(0.99, 3) - w).abs() < 1e-15);
        assert_eq!(out[0].r, -0.001 * tick_weight(0.99, 3));
        assert_eq!(tick_weight(0.5, 1), 1.0);
    }

    #[test]
    #[should_panic(expected = "before the episode finished")]
    fn mid_episode_call_rejected() {
        let mut ep = episode(2);
        ep[1].terminal = false;
        episode_end_process(&ep, false, 60, 60, &policy(true, true));
    }
}
