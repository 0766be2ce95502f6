//! Randomized invariants over the simulator, allocator, replay and agent.

use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tpa_core::agent::{
    episode_end_process, masked_argmax, random_legal, select_action, ActionStrategy, BufferPolicy, MacroEnv,
    PrioritizedReplay, SumTree, Transition,
};
use tpa_core::alloc::{allocate, candidate_distances, LowLevelRule};
use tpa_core::nn::{QNetConfig, QNetwork};
use tpa_core::sim::{builtin, encode_state, EntityKind, Scenario, Simulator};

fn sim(name: &str) -> Simulator {
    Simulator::new(Scenario::from_json(builtin::get(name).unwrap()).unwrap()).unwrap()
}

fn rule(i: u8) -> LowLevelRule {
    [LowLevelRule::Sap, LowLevelRule::NoSpatial, LowLevelRule::LongestPath][i as usize % 3]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rewards_decompose_and_state_stays_consistent(seed in any::<u64>(), picks in prop::collection::vec(any::<u16>(), 1..400), r in 0u8..3) {
        let sim = sim("miniature");
        let sc = sim.scenario();
        let cfg = &sc.reward;
        let mut state = sim.reset(seed);
        let mut last_progress = 0.0;
        let mut last_done = 0;
        for p in picks {
            if sim.is_done(&state) {
                break;
            }
            let legal = sim.legal_actions(&state);
            prop_assert!(legal[sc.n_tasks()], "no-op must always be legal");
            let options: Vec<usize> = (0..legal.len()).filter(|&i| legal[i]).collect();
            let action = options[p as usize % options.len()];
            let alloc = allocate(&sim, &mut state, action, rule(r)).unwrap();
            let out = sim.step(&mut state, alloc.as_ref()).unwrap();
            let ok = [0.0, cfg.eta3].iter().any(|&prog| {
                [-cfg.eta2, 0.0, cfg.eta2].iter().any(|&goal| out.reward == -cfg.eta1 + prog + goal)
            });
            prop_assert!(ok, "reward {} is not a sum of reward terms", out.reward);
            let progress = sim.progress(&state);
            prop_assert!(progress >= last_progress && progress <= 1.0);
            prop_assert!(state.products_done >= last_done && state.products_done <= sc.order_quantity);
            last_progress = progress;
            last_done = state.products_done;
        }
    }

    #[test]
    fn allocations_only_use_idle_entities(seed in any::<u64>(), picks in prop::collection::vec(any::<u16>(), 1..200), r in 0u8..3) {
        let sim = sim("default");
        let sc = sim.scenario();
        let mut state = sim.reset(seed);
        for p in picks {
            if sim.is_done(&state) {
                break;
            }
            let legal = sim.legal_actions(&state);
            let options: Vec<usize> = (0..legal.len()).filter(|&i| legal[i]).collect();
            let action = options[p as usize % options.len()];
            if action < sc.n_tasks() {
                for kind in [EntityKind::Human, EntityKind::Robot] {
                    for (id, d) in candidate_distances(&sim, &state, action, kind) {
                        prop_assert!(d >= 0.0 && d.is_finite());
                        prop_assert!(state.entities[id.0].is_idle());
                    }
                }
            }
            let alloc = allocate(&sim, &mut state, action, rule(r)).unwrap();
            if let Some(a) = &alloc {
                for id in [a.human, a.robot].into_iter().flatten() {
                    prop_assert!(state.entities[id.0].is_idle());
                }
            }
            sim.step(&mut state, alloc.as_ref()).unwrap();
        }
    }

    #[test]
    fn action_selection_never_picks_illegal(seed in any::<u64>(), mask in prop::collection::vec(any::<bool>(), 3), eps in 0.0f64..1.0, kind in 0u8..4) {
        let sim = sim("miniature");
        let mut net = QNetwork::new(QNetConfig { d_model: 8, heads: 1, depth: 1, encoder_hidden: 8, stream_hidden: 8, noisy: true, ..QNetConfig::for_scenario(sim.scenario()) }, seed);
        let state = encode_state(&sim, &sim.reset(seed));
        let n = sim.scenario().n_actions();
        let mut legal: Vec<bool> = (0..n).map(|i| mask[i % mask.len()]).collect();
        legal[n - 1] = true;
        let strategy = match kind {
            0 => ActionStrategy::Greedy,
            1 => ActionStrategy::EpsilonGreedy(eps),
            2 => ActionStrategy::Noisy,
            _ => ActionStrategy::Both(eps),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let a = select_action(&mut net, &state, &legal, strategy, &mut rng);
            prop_assert!(legal[a]);
            prop_assert!(legal[random_legal(&legal, &mut rng)]);
        }
        let q = net.q_values(&state);
        prop_assert!(legal[masked_argmax(&q, &legal)]);
    }

    #[test]
    fn sum_tree_root_is_leaf_sum(cap in 1usize..300, ops in prop::collection::vec((any::<u16>(), 0.0f64..1e3), 1..500)) {
        let mut t = SumTree::new(cap);
        for (i, p) in ops {
            t.set(i as usize % cap, p);
            let sum: f64 = (0..cap).map(|k| t.get(k)).sum();
            prop_assert!((t.total() - sum).abs() <= 1e-9 * sum.max(1.0));
        }
        if t.total() > 0.0 {
            let i = t.find(t.total() * 0.999_999);
            prop_assert!(i < cap && t.get(i) > 0.0);
        }
    }

    #[test]
    fn replay_samples_only_filled_slots(cap in 2usize..64, pushes in 2usize..200, errs in prop::collection::vec(-10.0f64..10.0, 1..50), seed in any::<u64>()) {
        let mut r = PrioritizedReplay::new(cap, 0.6, 1e-4);
        for i in 0..pushes {
            r.push(i);
        }
        prop_assert_eq!(r.len(), pushes.min(cap));
        let idx: Vec<usize> = (0..errs.len()).map(|i| i % r.len()).collect();
        r.update_priorities(&idx, &errs);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = r.len().min(8);
        let s = r.sample(n, 0.5, &mut rng);
        prop_assert!(s.indices.iter().all(|&i| i < r.len()));
        prop_assert!(s.weights.iter().all(|&w| w > 0.0 && w <= 1.0));
    }

    #[test]
    fn buffer_accounting(len in 1usize..40, success in any::<bool>(), makespan in 1u32..=60, eta6 in 1u32..8, efficient in any::<bool>(), modify in any::<bool>()) {
        let sim = sim("miniature");
        let s = Arc::new(encode_state(&sim, &sim.reset(0)));
        let legal = Arc::new(sim.legal_actions(&sim.reset(0)));
        let temp: Vec<Transition> = (0..len)
            .map(|i| Transition { s: s.clone(), a: i % 3, s_next: s.clone(), next_legal: legal.clone(), r: -0.01 * i as f64, terminal: i + 1 == len, ticks: 1 + (i % 3) as u32 })
            .collect();
        let policy = BufferPolicy { efficient_buffer: efficient, reward_modify: modify, eta4: 0.4, eta5: 0.001, eta6, gamma: 0.99 };
        let out = episode_end_process(&temp, success, makespan, 60, &policy);
        let expect = if efficient && success { eta6 as usize * len } else { len };
        prop_assert_eq!(out.len(), expect);
        if !efficient || !modify {
            let per = expect / len;
            for (i, t) in out.iter().enumerate() {
                prop_assert_eq!(t.r, temp[i / per].r);
            }
        }
    }
}

#[test]
fn macro_env_walk_ends_within_horizon() {
    let sim = sim("miniature");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..20 {
        let mut env = MacroEnv::new(&sim, LowLevelRule::Sap, seed, false).unwrap();
        let mut ticks = 0;
        while !env.is_done() {
            let a = random_legal(&env.legal(), &mut rng);
            ticks += env.step(a).unwrap().ticks();
        }
        assert_eq!(ticks, env.summary().makespan);
        assert!(ticks <= sim.scenario().horizon);
    }
}
