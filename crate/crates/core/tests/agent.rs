//! Training-loop behavior through the public API.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tpa_core::agent::{
    train, Algorithm, Learner, LearnerConfig, MacroEnv, NetSpec, TrainConfig, Transition,
};
use tpa_core::alloc::LowLevelRule;
use tpa_core::nn::{AdamConfig, QNetConfig, QNetwork};
use tpa_core::sim::{builtin, Scenario, Simulator};

fn miniature() -> Simulator {
    Simulator::new(Scenario::from_json(builtin::MINIATURE).unwrap()).unwrap()
}

fn small(algorithm: Algorithm, seed: u64) -> TrainConfig {
    TrainConfig {
        algorithm,
        seed,
        episodes: 25,
        batch: 16,
        warmup: 50,
        target_sync: 20,
        lr: 1e-3,
        net: NetSpec {
            d_model: 8,
            heads: 1,
            depth: 1,
            encoder_hidden: 8,
            stream_hidden: 8,
        },
        ..TrainConfig::default()
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let sim = miniature();
    let cfg = QNetConfig {
        d_model: 8,
        heads: 1,
        depth: 1,
        encoder_hidden: 8,
        stream_hidden: 8,
        ..QNetConfig::for_scenario(sim.scenario())
    };
    let net = QNetwork::new(cfg, 3);
    let before = net.clone();
    let mut learner = Learner::new(
        net,
        LearnerConfig {
            capacity: 64,
            batch: 8,
            gamma: 0.99,
            double: true,
            target_sync: 1000,
            omega: 0.6,
            priority_floor: 1e-4,
            adam: AdamConfig {
                lr: 0.0,
                ..AdamConfig::default()
            },
        },
    );
    for seed in 0..10 {
        let mut env = MacroEnv::new(&sim, LowLevelRule::Sap, seed, false).unwrap();
        while !env.is_done() {
            let s = std::sync::Arc::new(env.observe());
            let a = env.legal().iter().position(|&l| l).unwrap();
            let step = env.step(a).unwrap();
            learner.push(Transition {
                s,
                a,
                s_next: std::sync::Arc::new(env.observe()),
                next_legal: std::sync::Arc::new(env.legal()),
                r: step.discounted(0.99),
                terminal: step.done,
                ticks: step.ticks(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..5 {
        learner.train_step(0.4, &mut rng).unwrap();
    }
    assert_eq!(learner.online.params(), before.params());
}

#[test]
fn same_seed_same_run() {
    let sim = miniature();
    for algo in [Algorithm::EbqN, Algorithm::D3qn] {
        let a = train(&sim, &small(algo, 9), &mut ()).unwrap();
        let b = train(&sim, &small(algo, 9), &mut ()).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.network.params(), b.network.params());
        let c = train(&sim, &small(algo, 10), &mut ()).unwrap();
        assert_ne!(a.metrics, c.metrics);
    }
}

#[test]
fn every_algorithm_trains_briefly() {
    let sim = miniature();
    for algo in Algorithm::ALL.iter().copied().filter(|a| a.is_learning()) {
        let out = train(&sim, &small(algo, 1), &mut ()).unwrap();
        assert_eq!(out.metrics.len(), 25, "{algo}");
        assert!(out.grad_steps > 0, "{algo}");
        assert!(
            out.metrics
                .iter()
                .all(|m| m.loss_mean.is_none_or(f64::is_finite)),
            "{algo}"
        );
    }
}

#[test]
fn random_is_not_trainable() {
    let err = train(&miniature(), &small(Algorithm::Random, 0), &mut ())
        .err()
        .unwrap();
    assert!(err.to_string().contains("not a trainable"));
}
