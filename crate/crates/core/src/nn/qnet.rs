//! Attention-based Q-network over grouped entity tokens.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{uniform, AttentionBlock, AttentionKind, Bound, Mlp, ParamId, ParamStore};
use super::tape::{Block, Gradients, Tape, Var};
use super::tensor::{Float, Tensor};
use crate::sim::{EncodedState, Scenario, TokenGroup};

pub const GROUPS: usize = 5;
const TASKS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QNetConfig {
    pub d_model: usize,
    pub heads: usize,
    /// Self-attention blocks before the cross-attention block.
    pub depth: usize,
    pub encoder_hidden: usize,
    pub stream_hidden: usize,
    pub dueling: bool,
    pub noisy: bool,
    pub group_widths: [usize; GROUPS],
    pub n_actions: usize,
}

impl QNetConfig {
    /// Defaults sized for CPU training on `scenario`.
    pub fn for_scenario(scenario: &Scenario) -> Self {
        let mut group_widths = [0; GROUPS];
        for (w, g) in group_widths.iter_mut().zip(TokenGroup::ALL) {
            *w = g.width(scenario);
        }
        Self {
            d_model: 64,
            heads: 2,
            depth: 2,
            encoder_hidden: 64,
            stream_hidden: 64,
            dueling: true,
            noisy: true,
            group_widths,
            n_actions: scenario.n_actions(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(format!("d_model {} must be a positive multiple of heads {}", self.d_model, self.heads));
        }
        if self.encoder_hidden == 0 || self.stream_hidden == 0 {
            return Err("hidden widths must be positive".into());
        }
        if self.n_actions < 1 || self.group_widths[TASKS] == 0 {
            return Err("network needs task tokens and at least one action".into());
        }
        Ok(())
    }
}

/// Result of a batched forward pass. Holds the tape for back-propagation.
pub struct Forward {
    pub tape: Tape,
    pub bound: Bound,
    /// `(batch * n_actions) x 1` column of q-values.
    pub q: Var,
    pub batch: usize,
    pub n_actions: usize,
}

impl Forward {
    /// q-values of state `b`.
    pub fn q_values(&self, b: usize) -> Vec<f64> {
        let q = self.tape.value(self.q).data();
        q[b * self.n_actions..(b + 1) * self.n_actions]
            .iter()
            .map(|&v| f64::from(v))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    config: QNetConfig,
    params: ParamStore,
    encoders: Vec<Mlp>,
    blocks: Vec<AttentionBlock>,
    cross: AttentionBlock,
    noop: ParamId,
    advantage: Mlp,
    value: Option<Mlp>,
    noise_on: bool,
}

impl QNetwork {
    pub fn new(config: QNetConfig, seed: u64) -> Self {
        config.validate().expect("valid network config");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let d = config.d_model;
        let names = ["humans", "robots", "machines", "materials", "tasks"];
        let encoders = names
            .iter()
            .zip(config.group_widths)
            .map(|(n, w)| Mlp::new(&mut params, &mut rng, &format!("enc.{n}"), w.max(1), config.encoder_hidden, d, false))
            .collect();
        let blocks = (0..config.depth)
            .map(|i| AttentionBlock::new(&mut params, &mut rng, &format!("self.{i}"), d, config.heads, AttentionKind::SelfAttention))
            .collect();
        let cross = AttentionBlock::new(&mut params, &mut rng, "cross", d, config.heads, AttentionKind::Cross);
        let noop = params.add("noop", uniform(&mut rng, 1, d, 1.0 / (d as f64).sqrt()));
        let advantage = Mlp::new(&mut params, &mut rng, "adv", d, config.stream_hidden, 1, config.noisy);
        let value = config
            .dueling
            .then(|| Mlp::new(&mut params, &mut rng, "value", d, config.stream_hidden, 1, config.noisy));
        let mut net = Self {
            config,
            params,
            encoders,
            blocks,
            cross,
            noop,
            advantage,
            value,
            noise_on: config.noisy,
        };
        net.resample_noise(&mut rng);
        net
    }

    pub fn config(&self) -> &QNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Enables or disables the noise term of noisy layers (evaluation turns it off).
    pub fn set_noise(&mut self, on: bool) {
        self.noise_on = on && self.config.noisy;
    }

    pub fn noise_enabled(&self) -> bool {
        self.noise_on
    }

    pub fn resample_noise(&mut self, rng: &mut ChaCha8Rng) {
        self.advantage.resample(rng);
        if let Some(v) = &mut self.value {
            v.resample(rng);
        }
    }

    /// Copies parameters (not noise) from another network of the same shape.
    pub fn copy_params_from(&mut self, other: &QNetwork) {
        assert_eq!(self.config, other.config, "architecture mismatch");
        self.params = other.params.clone();
    }

    pub(crate) fn replace_params(&mut self, params: ParamStore) {
        assert_eq!(params.names(), self.params.names(), "parameter layout mismatch");
        for (a, b) in params.values().iter().zip(self.params.values()) {
            assert_eq!(a.shape(), b.shape(), "parameter shape mismatch");
        }
        self.params = params;
    }

    /// Batched forward pass.
    pub fn forward(&self, states: &[&EncodedState]) -> Forward {
        let cfg = &self.config;
        let batch = states.len();
        assert!(batch > 0, "empty batch");
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);

        // Encode each group with all states stacked.
        let mut group_vars: Vec<Option<Var>> = Vec::with_capacity(GROUPS);
        let mut row_starts = vec![vec![0usize; batch + 1]; GROUPS];
        for g in 0..GROUPS {
            let width = cfg.group_widths[g];
            let mut data = Vec::new();
            for (s, st) in states.iter().enumerate() {
                let tokens = &st.groups[g];
                assert_eq!(tokens.width, width, "feature width mismatch in group {:?}", tokens.group);
                data.extend(tokens.data.iter().map(|&v| v as Float));
                row_starts[g][s + 1] = row_starts[g][s] + tokens.rows;
            }
            let rows = row_starts[g][batch];
            group_vars.push((rows > 0).then(|| {
                let x = tape.leaf(Tensor::from_vec(rows, width, data));
                self.encoders[g].forward(&mut tape, &p, x, false)
            }));
        }

        // Lay tokens out state by state.
        let present: Vec<Var> = group_vars.iter().flatten().copied().collect();
        let all = tape.concat_rows(&present);
        let mut base = [0usize; GROUPS];
        let mut acc = 0;
        for g in 0..GROUPS {
            base[g] = acc;
            acc += row_starts[g][batch];
        }
        let mut order = Vec::with_capacity(acc);
        let mut blocks: Vec<Block> = Vec::with_capacity(batch);
        for s in 0..batch {
            let start = order.len();
            for g in 0..GROUPS {
                order.extend((row_starts[g][s]..row_starts[g][s + 1]).map(|r| base[g] + r));
            }
            blocks.push((start, order.len() - start));
        }
        let mut x = tape.gather_rows(all, &order);
        for b in &self.blocks {
            x = b.forward_self(&mut tape, &p, x, &blocks);
        }

        // Action queries: each state's task embeddings followed by the no-op token.
        let tasks = group_vars[TASKS].expect("task tokens present");
        let n_actions = cfg.n_actions;
        let with_noop = tape.concat_rows(&[tasks, p.var(self.noop)]);
        let noop_row = row_starts[TASKS][batch];
        let mut q_index = Vec::with_capacity(batch * n_actions);
        let mut q_blocks = Vec::with_capacity(batch);
        for s in 0..batch {
            let n = row_starts[TASKS][s + 1] - row_starts[TASKS][s];
            assert_eq!(n + 1, n_actions, "action count changed between states");
            q_blocks.push((q_index.len(), n_actions));
            q_index.extend(row_starts[TASKS][s]..row_starts[TASKS][s + 1]);
            q_index.push(noop_row);
        }
        let queries = tape.gather_rows(with_noop, &q_index);
        let phi = self.cross.forward_cross(&mut tape, &p, queries, &q_blocks, x, &blocks);

        let adv = self.advantage.forward(&mut tape, &p, phi, self.noise_on);
        let q = match &self.value {
            Some(vs) => {
                let pooled = tape.block_mean(phi, &q_blocks);
                let v = vs.forward(&mut tape, &p, pooled, self.noise_on);
                tape.dueling(adv, v, &q_blocks)
            }
            None => adv,
        };
        debug_assert!(tape.value(q).is_finite(), "non-finite q-values");
        Forward {
            tape,
            bound: p,
            q,
            batch,
            n_actions,
        }
    }

    /// q-values of a single state.
    pub fn q_values(&self, state: &EncodedState) -> Vec<f64> {
        self.forward(&[state]).q_values(0)
    }

    /// Parameter gradients in [`ParamStore`] order; unreachable parameters get zeros.
    pub fn param_grads(&self, fwd: &Forward, grads: &Gradients) -> Vec<Tensor> {
        fwd.bound
            .vars()
            .iter()
            .zip(self.params.values())
            .map(|(&v, t)| grads.get_or_zeros(v, t))
            .collect()
    }
}
