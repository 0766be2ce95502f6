//! Finite-difference checks for every tape operation and layer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::sim::{builtin, encode_state, Scenario, Simulator};

fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Max relative error between analytic and central-difference gradients of
/// `build` with respect to every input.
fn check<F>(inputs: &[Tensor], build: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let run = |ins: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&mut tape, &vars);
        (tape, vars, loss)
    };
    let (tape, vars, loss) = run(inputs);
    let grads = tape.backward(loss);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[k], t);
        for i in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            let (tp, _, lp) = run(&plus);
            let (tm, _, lm) = run(&minus);
            let numeric = (tp.value(lp).data()[0] - tm.value(lm).data()[0]) / (2.0 * h);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}

/// Weighted sum with a fixed random probe so every output element matters.
fn probe(tape: &mut Tape, x: Var, seed: u64) -> Var {
    let [r, c] = tape.value(x).shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.leaf(rand_tensor(&mut rng, r, c));
    let m = tape.mul(x, w);
    tape.sum(m)
}

#[test]
fn elementwise_and_matrix_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_tensor(&mut rng, 3, 4);
    let b = rand_tensor(&mut rng, 4, 5);
    let bt = rand_tensor(&mut rng, 5, 4);
    let bias = rand_tensor(&mut rng, 1, 5);
    assert!(check(&[a.clone(), b.clone(), bias.clone()], |t, v| {
        let m = t.matmul(v[0], v[1]);
        let m = t.add_row(m, v[2]);
        probe(t, m, 7)
    }) < 1e-4);
    assert!(check(&[a.clone(), bt], |t, v| {
        let m = t.matmul_t(v[0], v[1]);
        probe(t, m, 8)
    }) < 1e-4);
    let c = rand_tensor(&mut rng, 3, 4);
    assert!(check(&[a.clone(), c.clone()], |t, v| {
        let s = t.add(v[0], v[1]);
        let m = t.mul(s, v[1]);
        let r = t.relu(m);
        let sc = t.scale(r, 0.7);
        probe(t, sc, 9)
    }) < 1e-4);
    assert!(check(&[a, c], |t, v| {
        let g = t.gather_rows(v[0], &[2, 0, 2]);
        let cat = t.concat_rows(&[g, v[1]]);
        let bm = t.block_mean(cat, &[(0, 2), (2, 4)]);
        probe(t, bm, 10)
    }) < 1e-4);
}

#[test]
fn layer_norm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_tensor(&mut rng, 4, 6);
    let g = rand_tensor(&mut rng, 1, 6);
    let b = rand_tensor(&mut rng, 1, 6);
    assert!(check(&[x, g, b], |t, v| {
        let y = t.layer_norm(v[0], v[1], v[2]);
        probe(t, y, 11)
    }) < 1e-4);
}

#[test]
fn attention_gradients_multi_block_multi_head() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let q = rand_tensor(&mut rng, 5, 4);
    let k = rand_tensor(&mut rng, 6, 4);
    let v = rand_tensor(&mut rng, 6, 4);
    let err = check(&[q, k, v], |t, x| {
        let a = t.attention(x[0], x[1], x[2], 2, &[(0, 2), (2, 3)], &[(0, 4), (4, 2)]);
        probe(t, a, 12)
    });
    assert!(err < 1e-4, "{err}");
}

#[test]
fn noisy_dueling_and_loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mu = rand_tensor(&mut rng, 3, 2);
    let sigma = rand_tensor(&mut rng, 3, 2);
    let eps = rand_tensor(&mut rng, 3, 2);
    let x = rand_tensor(&mut rng, 4, 3);
    assert!(check(&[mu, sigma, x], |t, v| {
        let w = t.noisy_weight(v[0], v[1], &eps);
        let y = t.matmul(v[2], w);
        probe(t, y, 13)
    }) < 1e-4);
    let adv = rand_tensor(&mut rng, 5, 1);
    let val = rand_tensor(&mut rng, 2, 1);
    assert!(check(&[adv, val], |t, v| {
        let q = t.dueling(v[0], v[1], &[(0, 3), (3, 2)]);
        t.pick_mse(q, &[1, 4], &[0.3, -0.2], &[0.5, 1.0])
    }) < 1e-4);
}

#[test]
fn attention_matches_loop_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (q, k, v) = (rand_tensor(&mut rng, 4, 8), rand_tensor(&mut rng, 4, 8), rand_tensor(&mut rng, 4, 8));
    let mut tape = Tape::new();
    let (qv, kv, vv) = (tape.leaf(q.clone()), tape.leaf(k.clone()), tape.leaf(v.clone()));
    let out = tape.attention(qv, kv, vv, 1, &[(0, 4)], &[(0, 4)]);
    let scale = 1.0 / 8f64.sqrt();
    for i in 0..4 {
        let scores: Vec<f64> = (0..4)
            .map(|j| (0..8).map(|c| q.get(i, c) * k.get(j, c)).sum::<f64>() * scale)
            .collect();
        let z: f64 = scores.iter().map(|s| s.exp()).sum();
        for c in 0..8 {
            let want: f64 = (0..4).map(|j| scores[j].exp() / z * v.get(j, c)).sum();
            assert!((tape.value(out).get(i, c) - want).abs() < 1e-6);
        }
    }
    for p in tape.attention_weights(out).unwrap() {
        for row in p.chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn attention_trivial_cases() {
    let mut tape = Tape::new();
    let q = tape.leaf(Tensor::from_f64(1, 2, &[0.3, -0.4]));
    let v = tape.leaf(Tensor::from_f64(1, 2, &[5.0, 6.0]));
    let out = tape.attention(q, q, v, 1, &[(0, 1)], &[(0, 1)]);
    assert_eq!(tape.value(out).data(), &[5.0, 6.0]);
    let k = tape.leaf(Tensor::from_f64(2, 2, &[1.0, 1.0, 1.0, 1.0]));
    let vs = tape.leaf(Tensor::from_f64(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    let out = tape.attention(q, k, vs, 1, &[(0, 1)], &[(0, 2)]);
    assert_eq!(tape.value(out).data(), &[2.0, 3.0]);
}

#[test]
fn dueling_examples() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::from_f64(3, 1, &[1.0, 2.0, 3.0]));
    let v = tape.leaf(Tensor::from_f64(1, 1, &[1.0]));
    let q = tape.dueling(a, v, &[(0, 3)]);
    assert_eq!(tape.value(q).data(), &[0.0, 1.0, 2.0]);
    let a2 = tape.leaf(Tensor::from_f64(3, 1, &[8.5, 9.5, 10.5]));
    let q2 = tape.dueling(a2, v, &[(0, 3)]);
    assert_eq!(tape.value(q2).data(), &[0.0, 1.0, 2.0]);
    let v3 = tape.leaf(Tensor::from_f64(1, 1, &[4.0]));
    let q3 = tape.dueling(a, v3, &[(0, 3)]);
    assert_eq!(tape.value(q3).data(), &[3.0, 4.0, 5.0]);
}

#[test]
fn noisy_layer_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::new();
    let mut layer = NoisyLinear::new(&mut store, &mut rng, "n", 3, 2);
    layer.resample(&mut rng);
    let x = rand_tensor(&mut rng, 2, 3);
    let run = |store: &ParamStore, layer: &NoisyLinear, noisy: bool| {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let xv = tape.leaf(x.clone());
        let y = layer.forward(&mut tape, &p, xv, noisy);
        tape.value(y).clone()
    };
    // eval: plain affine map of the means
    let eval = run(&store, &layer, false);
    let mut tape = Tape::new();
    let p = store.bind(&mut tape);
    let xv = tape.leaf(x.clone());
    let h = tape.matmul(xv, p.var(layer.w_mu));
    let want = tape.add_row(h, p.var(layer.b_mu));
    assert_eq!(&eval, tape.value(want));
    // noise held between resamples
    let a = run(&store, &layer, true);
    assert_eq!(a, run(&store, &layer, true));
    assert_ne!(a, eval);
    layer.resample(&mut rng);
    assert_ne!(a, run(&store, &layer, true));
    // zero noise scales degenerate to eval
    let mut zero = store.clone();
    *zero.get_mut(layer.w_sigma) = Tensor::zeros(3, 2);
    *zero.get_mut(layer.b_sigma) = Tensor::zeros(1, 2);
    assert_eq!(run(&zero, &layer, true), eval);
}

#[test]
fn sum_of_parameters_has_unit_gradients() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::from_f64(2, 2, &[1.0, -3.0, 2.0, 0.5]));
    let s = tape.sum(a);
    let g = tape.backward(s);
    assert_eq!(g.get(a).unwrap().data(), &[1.0; 4]);
}

fn tiny_net(dueling: bool, noisy: bool) -> (Simulator, QNetwork) {
    let sc = Scenario::from_json(builtin::MINIATURE).unwrap();
    let sim = Simulator::new(sc).unwrap();
    let mut cfg = QNetConfig::for_scenario(sim.scenario());
    cfg.d_model = 8;
    cfg.heads = 1;
    cfg.depth = 1;
    cfg.encoder_hidden = 8;
    cfg.stream_hidden = 8;
    cfg.dueling = dueling;
    cfg.noisy = noisy;
    (sim, QNetwork::new(cfg, 42))
}

#[test]
fn full_network_gradient_matches_finite_differences() {
    let (sim, net) = tiny_net(true, true);
    let s0 = encode_state(&sim, &sim.reset(1));
    let s1 = encode_state(&sim, &sim.reset(2));
    let states = [&s0, &s1];
    let loss_of = |net: &QNetwork| {
        let mut f = net.forward(&states);
        let l = f.tape.pick_mse(f.q, &[0, 5], &[0.4, -0.3], &[1.0, 0.7]);
        (f.tape.value(l).data()[0], f, l)
    };
    let (_, f, l) = loss_of(&net);
    let grads = net.param_grads(&f, &f.tape.backward(l));
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for pi in 0..net.params().len() {
        for i in 0..net.params().values()[pi].len() {
            let mut plus = net.clone();
            plus.params_mut().values_mut()[pi].data_mut()[i] += h;
            let mut minus = net.clone();
            minus.params_mut().values_mut()[pi].data_mut()[i] -= h;
            let numeric = (loss_of(&plus).0 - loss_of(&minus).0) / (2.0 * h);
            let a = grads[pi].data()[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
        }
    }
    assert!(worst < 1e-3, "worst relative error {worst}");
}

#[test]
fn network_output_contract() {
    let (sim, mut net) = tiny_net(true, true);
    let s = encode_state(&sim, &sim.reset(3));
    assert_eq!(net.q_values(&s).len(), sim.scenario().n_actions());
    net.set_noise(false);
    assert_eq!(net.q_values(&s), net.q_values(&s));
    // batched rows equal single-state rows
    let s2 = encode_state(&sim, &sim.reset(9));
    let f = net.forward(&[&s, &s2]);
    let single = net.q_values(&s2);
    for (a, b) in f.q_values(1).iter().zip(&single) {
        assert!((a - b).abs() < 1e-12);
    }
    let (_, plain) = tiny_net(false, false);
    assert_eq!(plain.q_values(&s).len(), sim.scenario().n_actions());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let (sim, net) = tiny_net(true, true);
    let bytes = save_checkpoint(&net, 17, "{\"algo\":\"x\"}");
    let ck = load_checkpoint(&bytes).unwrap();
    assert_eq!(ck.step, 17);
    assert_eq!(ck.network.params(), net.params());
    assert_eq!(save_checkpoint(&ck.network, 17, "{\"algo\":\"x\"}"), bytes);
    let mut a = net.clone();
    let mut b = ck.network.clone();
    a.set_noise(false);
    b.set_noise(false);
    let s = encode_state(&sim, &sim.reset(0));
    assert_eq!(a.q_values(&s), b.q_values(&s));
    let mut bad = bytes.clone();
    bad[20] ^= 0xff;
    assert!(load_checkpoint(&bad).is_err());
}
