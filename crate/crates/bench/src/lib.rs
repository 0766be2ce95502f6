//! Shared fixtures for the benchmarks.

use tpa_core::sim::{builtin, encode_state, EncodedState, Scenario, Simulator};

pub fn default_sim() -> Simulator {
    Simulator::new(Scenario::from_json(builtin::DEFAULT).expect("built-in scenario parses")).expect("built-in scenario is valid")
}

/// Encoded start states for `n` reset seeds.
pub fn start_states(sim: &Simulator, n: u64) -> Vec<EncodedState> {
    (0..n).map(|s| encode_state(sim, &sim.reset(s))).collect()
}
