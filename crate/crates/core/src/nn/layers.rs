//! Parameter storage and the building-block layers of the Q-network.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::tape::{Block, Tape, Var};
use super::tensor::{Float, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named learnable tensors in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter `{name}`");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    /// Total scalar count.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Records every parameter on the tape as a leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.values.iter().map(|t| tape.leaf(t.clone())).collect(),
        }
    }
}

/// Tape handles for a [`ParamStore`], indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

pub(crate) fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound) as Float)
        .collect();
    Tensor::from_vec(rows, cols, data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Fan-in scaled uniform initialization of weight and bias.
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = store.add(format!("{name}.w"), uniform(rng, fan_in, fan_out, bound));
        let b = store.add(format!("{name}.b"), uniform(rng, 1, fan_out, bound));
        Self { w, b, fan_in, fan_out }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Var {
        assert_eq!(tape.value(x).cols(), self.fan_in, "linear input width");
        let h = tape.matmul(x, p.var(self.w));
        tape.add_row(h, p.var(self.b))
    }
}

/// Factorized-Gaussian noisy affine layer. Noise is held between
/// [`NoisyLinear::resample`] calls; with noise disabled it is the plain
/// affine map of the mean parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyLinear {
    pub w_mu: ParamId,
    pub w_sigma: ParamId,
    pub b_mu: ParamId,
    pub b_sigma: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
    eps_w: Tensor,
    eps_b: Tensor,
}

fn signed_sqrt(x: f64) -> f64 {
    x.signum() * x.abs().sqrt()
}

impl NoisyLinear {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let sigma0 = (0.5 / (fan_in as f64).sqrt()) as Float;
        let w_mu = store.add(format!("{name}.w_mu"), uniform(rng, fan_in, fan_out, bound));
        let w_sigma = store.add(format!("{name}.w_sigma"), Tensor::full(fan_in, fan_out, sigma0));
        let b_mu = store.add(format!("{name}.b_mu"), uniform(rng, 1, fan_out, bound));
        let b_sigma = store.add(format!("{name}.b_sigma"), Tensor::full(1, fan_out, sigma0));
        Self {
            w_mu,
            w_sigma,
            b_mu,
            b_sigma,
            fan_in,
            fan_out,
            eps_w: Tensor::zeros(fan_in, fan_out),
            eps_b: Tensor::zeros(1, fan_out),
        }
    }

    /// Draws fresh factorized noise.
    pub fn resample(&mut self, rng: &mut ChaCha8Rng) {
        let e_in: Vec<f64> = (0..self.fan_in).map(|_| signed_sqrt(rng.sample(StandardNormal))).collect();
        let e_out: Vec<f64> = (0..self.fan_out).map(|_| signed_sqrt(rng.sample(StandardNormal))).collect();
        for (i, a) in e_in.iter().enumerate() {
            for (j, b) in e_out.iter().enumerate() {
                self.eps_w.set(i, j, (a * b) as Float);
            }
        }
        for (j, b) in e_out.iter().enumerate() {
            self.eps_b.set(0, j, *b as Float);
        }
    }

    pub fn noise(&self) -> (&Tensor, &Tensor) {
        (&self.eps_w, &self.eps_b)
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var, noisy: bool) -> Var {
        assert_eq!(tape.value(x).cols(), self.fan_in, "noisy linear input width");
        let (w, b) = if noisy {
            (
                tape.noisy_weight(p.var(self.w_mu), p.var(self.w_sigma), &self.eps_w),
                tape.noisy_weight(p.var(self.b_mu), p.var(self.b_sigma), &self.eps_b),
            )
        } else {
            (p.var(self.w_mu), p.var(self.b_mu))
        };
        let h = tape.matmul(x, w);
        tape.add_row(h, b)
    }
}

/// Affine layer that is either plain or noisy.
#[derive(Debug, Clone, PartialEq)]
pub enum Dense {
    Plain(Linear),
    Noisy(NoisyLinear),
}

impl Dense {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, fan_in: usize, fan_out: usize, noisy: bool) -> Self {
        if noisy {
            Dense::Noisy(NoisyLinear::new(store, rng, name, fan_in, fan_out))
        } else {
            Dense::Plain(Linear::new(store, rng, name, fan_in, fan_out))
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var, noise_on: bool) -> Var {
        match self {
            Dense::Plain(l) => l.forward(tape, p, x),
            Dense::Noisy(l) => l.forward(tape, p, x, noise_on),
        }
    }

    pub fn resample(&mut self, rng: &mut ChaCha8Rng) {
        if let Dense::Noisy(l) = self {
            l.resample(rng);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(1, width, 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(1, width)),
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Var {
        tape.layer_norm(x, p.var(self.gamma), p.var(self.beta))
    }
}

/// Two-layer ReLU feedforward map.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub l1: Dense,
    pub l2: Dense,
}

impl Mlp {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        fan_in: usize,
        hidden: usize,
        fan_out: usize,
        noisy: bool,
    ) -> Self {
        Self {
            l1: Dense::new(store, rng, &format!("{name}.0"), fan_in, hidden, noisy),
            l2: Dense::new(store, rng, &format!("{name}.1"), hidden, fan_out, noisy),
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var, noise_on: bool) -> Var {
        let h = self.l1.forward(tape, p, x, noise_on);
        let h = tape.relu(h);
        self.l2.forward(tape, p, h, noise_on)
    }

    pub fn resample(&mut self, rng: &mut ChaCha8Rng) {
        self.l1.resample(rng);
        self.l2.resample(rng);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionKind {
    SelfAttention,
    Cross,
}

/// Pre-norm residual multi-head attention block.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlock {
    pub kind: AttentionKind,
    pub heads: usize,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub norm_q: LayerNorm,
    /// Separate normalization of the memory for cross-attention.
    pub norm_kv: Option<LayerNorm>,
}

impl AttentionBlock {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d: usize, heads: usize, kind: AttentionKind) -> Self {
        assert!(heads > 0 && d % heads == 0, "model width {d} not divisible by {heads} heads");
        Self {
            kind,
            heads,
            wq: Linear::new(store, rng, &format!("{name}.q"), d, d),
            wk: Linear::new(store, rng, &format!("{name}.k"), d, d),
            wv: Linear::new(store, rng, &format!("{name}.v"), d, d),
            wo: Linear::new(store, rng, &format!("{name}.o"), d, d),
            norm_q: LayerNorm::new(store, &format!("{name}.norm_q"), d),
            norm_kv: (kind == AttentionKind::Cross).then(|| LayerNorm::new(store, &format!("{name}.norm_kv"), d)),
        }
    }

    /// `x + W_o * attn(norm(x), norm(x))` with block-diagonal attention.
    pub fn forward_self(&self, tape: &mut Tape, p: &Bound, x: Var, blocks: &[Block]) -> Var {
        let h = self.norm_q.forward(tape, p, x);
        self.attend(tape, p, x, h, h, blocks, blocks)
    }

    /// `query + W_o * attn(norm_q(query), norm_kv(memory))`.
    pub fn forward_cross(
        &self,
        tape: &mut Tape,
        p: &Bound,
        query: Var,
        q_blocks: &[Block],
        memory: Var,
        k_blocks: &[Block],
    ) -> Var {
        let hq = self.norm_q.forward(tape, p, query);
        let hk = self
            .norm_kv
            .as_ref()
            .expect("cross-attention block has a memory norm")
            .forward(tape, p, memory);
        self.attend(tape, p, query, hq, hk, q_blocks, k_blocks)
    }

    #[allow(clippy::too_many_arguments)]
    fn attend(
        &self,
        tape: &mut Tape,
        p: &Bound,
        residual: Var,
        hq: Var,
        hk: Var,
        q_blocks: &[Block],
        k_blocks: &[Block],
    ) -> Var {
        let q = self.wq.forward(tape, p, hq);
        let k = self.wk.forward(tape, p, hk);
        let v = self.wv.forward(tape, p, hk);
        let a = tape.attention(q, k, v, self.heads, q_blocks, k_blocks);
        let o = self.wo.forward(tape, p, a);
        tape.add(residual, o)
    }
}
