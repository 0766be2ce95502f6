//! Reverse-mode automatic differentiation over 2-D tensors.

use super::tensor::{gemm, Float, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Contiguous row range `start..start + len`.
pub type Block = (usize, usize);

const LN_EPS: Float = 1e-5;

enum Op {
    Leaf,
    MatMul { a: Var, b: Var, trans_b: bool },
    AddRow { a: Var, bias: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Relu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Tensor, inv_std: Vec<Float> },
    Attention(Box<AttentionRecord>),
    GatherRows { a: Var, idx: Vec<usize> },
    ConcatRows(Vec<Var>),
    BlockMean { a: Var, blocks: Vec<Block> },
    NoisyWeight { mu: Var, sigma: Var, eps: Tensor },
    Dueling { adv: Var, value: Var, blocks: Vec<Block> },
    PickMse { q: Var, picks: Vec<usize>, targets: Vec<Float>, weights: Vec<Float> },
    Sum(Var),
    Scale(Var, Float),
}

struct AttentionRecord {
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    q_blocks: Vec<Block>,
    k_blocks: Vec<Block>,
    /// Softmax weights per (block, head), each `q_len x k_len` row-major.
    probs: Vec<Vec<Float>>,
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records a forward computation so gradients can be pulled back from a scalar.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients for every node reachable from the loss.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` if `v` did not influence the loss.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.rows(), like.cols()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        debug_assert!(value.is_finite(), "non-finite value produced on tape");
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Inputs and parameters.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols(), bv.rows(), "matmul inner dimensions differ");
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = Tensor::zeros(m, n);
        gemm(m, k, n, 1.0, av.data(), false, bv.data(), false, 0.0, out.data_mut());
        self.push(out, Op::MatMul { a, b, trans_b: false })
    }

    /// `a * b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols(), bv.cols(), "matmul_t inner dimensions differ");
        let (m, k, n) = (av.rows(), av.cols(), bv.rows());
        let mut out = Tensor::zeros(m, n);
        gemm(m, k, n, 1.0, av.data(), false, bv.data(), true, 0.0, out.data_mut());
        self.push(out, Op::MatMul { a, b, trans_b: true })
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(bias));
        assert_eq!(bv.shape(), [1, av.cols()], "bias shape mismatch");
        let mut out = av.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += *b;
            }
        }
        self.push(out, Op::AddRow { a, bias })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!(out.shape(), self.value(b).shape(), "add shape mismatch");
        out.add_assign(self.value(b));
        self.push(out, Op::Add { a, b })
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!(out.shape(), self.value(b).shape(), "mul shape mismatch");
        for (o, x) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o *= x;
        }
        self.push(out, Op::Mul { a, b })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for v in out.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        self.push(out, Op::Relu(a))
    }

    pub fn scale(&mut self, a: Var, s: Float) -> Var {
        let mut out = self.value(a).clone();
        for v in out.data_mut() {
            *v *= s;
        }
        self.push(out, Op::Scale(a, s))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: Float = self.value(a).data().iter().sum();
        self.push(Tensor::from_vec(1, 1, vec![s]), Op::Sum(a))
    }

    /// Row-wise layer normalization with learned `1 x n` gain and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (rows, n) = (xv.rows(), xv.cols());
        assert_eq!(self.value(gamma).shape(), [1, n], "layer norm gain shape");
        assert_eq!(self.value(beta).shape(), [1, n], "layer norm shift shape");
        let mut xhat = Tensor::zeros(rows, n);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<Float>() / n as Float;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<Float>() / n as Float;
            let is = 1.0 / (var + LN_EPS).sqrt();
            for (o, v) in xhat.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let (g, b) = (self.value(gamma), self.value(beta));
        let mut out = xhat.clone();
        for r in 0..rows {
            for ((o, gv), bv) in out.row_mut(r).iter_mut().zip(g.data()).zip(b.data()) {
                *o = *o * gv + bv;
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Multi-head scaled dot-product attention. Query block `i` attends only
    /// to key block `i`, which lets one call serve a batch of states.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, q_blocks: &[Block], k_blocks: &[Block]) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.cols();
        assert!(heads > 0 && d % heads == 0, "width {d} not divisible by {heads} heads");
        assert_eq!(kv.cols(), d, "key width differs from query width");
        assert_eq!(vv.cols(), d, "value width differs from query width");
        assert_eq!(kv.rows(), vv.rows(), "keys and values differ in count");
        assert_eq!(q_blocks.len(), k_blocks.len(), "block lists differ in length");
        let dh = d / heads;
        let scale = 1.0 / (dh as Float).sqrt();
        let mut out = Tensor::zeros(qv.rows(), d);
        let mut probs = Vec::with_capacity(q_blocks.len() * heads);
        for (&(qs, ql), &(ks, kl)) in q_blocks.iter().zip(k_blocks) {
            assert!(kl > 0 || ql == 0, "query block attends to an empty key block");
            for h in 0..heads {
                let c0 = h * dh;
                let mut p = vec![0.0; ql * kl];
                for i in 0..ql {
                    let qrow = &qv.row(qs + i)[c0..c0 + dh];
                    let prow = &mut p[i * kl..(i + 1) * kl];
                    let mut max = Float::NEG_INFINITY;
                    for j in 0..kl {
                        let krow = &kv.row(ks + j)[c0..c0 + dh];
                        let s = qrow.iter().zip(krow).map(|(a, b)| a * b).sum::<Float>() * scale;
                        prow[j] = s;
                        max = max.max(s);
                    }
                    let mut z = 0.0;
                    for s in prow.iter_mut() {
                        *s = (*s - max).exp();
                        z += *s;
                    }
                    for s in prow.iter_mut() {
                        *s /= z;
                    }
                    let orow = &mut out.row_mut(qs + i)[c0..c0 + dh];
                    for j in 0..kl {
                        let w = prow[j];
                        for (o, x) in orow.iter_mut().zip(&vv.row(ks + j)[c0..c0 + dh]) {
                            *o += w * x;
                        }
                    }
                }
                probs.push(p);
            }
        }
        self.push(
            out,
            Op::Attention(Box::new(AttentionRecord {
                q,
                k,
                v,
                heads,
                q_blocks: q_blocks.to_vec(),
                k_blocks: k_blocks.to_vec(),
                probs,
            })),
        )
    }

    /// Softmax weights of an attention node, per (block, head).
    pub fn attention_weights(&self, v: Var) -> Option<&[Vec<Float>]> {
        match &self.nodes[v.0].op {
            Op::Attention(rec) => Some(&rec.probs),
            _ => None,
        }
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let av = self.value(a);
        let mut out = Tensor::zeros(idx.len(), av.cols());
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(av.row(i));
        }
        self.push(out, Op::GatherRows { a, idx: idx.to_vec() })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), cols, "concat_rows width mismatch");
            data.extend_from_slice(pv.data());
            rows += pv.rows();
        }
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    /// Mean of each row block.
    pub fn block_mean(&mut self, a: Var, blocks: &[Block]) -> Var {
        let av = self.value(a);
        let mut out = Tensor::zeros(blocks.len(), av.cols());
        for (b, &(s, l)) in blocks.iter().enumerate() {
            assert!(l > 0, "empty block in block_mean");
            let inv = 1.0 / l as Float;
            for r in s..s + l {
                for (o, x) in out.row_mut(b).iter_mut().zip(av.row(r)) {
                    *o += x * inv;
                }
            }
        }
        self.push(out, Op::BlockMean { a, blocks: blocks.to_vec() })
    }

    /// `mu + sigma * eps` with constant `eps`.
    pub fn noisy_weight(&mut self, mu: Var, sigma: Var, eps: &Tensor) -> Var {
        let mut out = self.value(mu).clone();
        assert_eq!(out.shape(), self.value(sigma).shape(), "noise scale shape mismatch");
        assert_eq!(out.shape(), eps.shape(), "noise sample shape mismatch");
        for ((o, s), e) in out.data_mut().iter_mut().zip(self.value(sigma).data()).zip(eps.data()) {
            *o += s * e;
        }
        self.push(
            out,
            Op::NoisyWeight {
                mu,
                sigma,
                eps: eps.clone(),
            },
        )
    }

    /// `q_i = v_b + a_i - mean_{j in b} a_j` for each row block `b` of the
    /// `N x 1` advantages; `value` is `B x 1`.
    pub fn dueling(&mut self, adv: Var, value: Var, blocks: &[Block]) -> Var {
        let (av, vv) = (self.value(adv), self.value(value));
        assert_eq!(av.cols(), 1, "advantages must be a column");
        assert_eq!(vv.shape(), [blocks.len(), 1], "one value per block");
        let mut out = Tensor::zeros(av.rows(), 1);
        for (b, &(s, l)) in blocks.iter().enumerate() {
            let mean = av.data()[s..s + l].iter().sum::<Float>() / l as Float;
            for i in s..s + l {
                out.data_mut()[i] = vv.data()[b] + av.data()[i] - mean;
            }
        }
        self.push(out, Op::Dueling { adv, value, blocks: blocks.to_vec() })
    }

    /// `(1/B) * sum_b w_b (q[picks_b] - y_b)^2` over an `N x 1` column.
    pub fn pick_mse(&mut self, q: Var, picks: &[usize], targets: &[Float], weights: &[Float]) -> Var {
        let qv = self.value(q);
        assert_eq!(qv.cols(), 1, "q must be a column");
        assert!(picks.len() == targets.len() && picks.len() == weights.len());
        let n = picks.len() as Float;
        let loss = picks
            .iter()
            .zip(targets)
            .zip(weights)
            .map(|((&p, y), w)| {
                let e = qv.data()[p] - y;
                w * e * e
            })
            .sum::<Float>()
            / n;
        self.push(
            Tensor::from_vec(1, 1, vec![loss]),
            Op::PickMse {
                q,
                picks: picks.to_vec(),
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
        )
    }

    /// Back-propagates from a `1 x 1` node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).shape(), [1, 1], "backward needs a scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(1, 1, 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.pull_back(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn pull_back(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        fn acc(grads: &mut [Option<Tensor>], v: Var, t: Tensor) {
            match &mut grads[v.0] {
                Some(x) => x.add_assign(&t),
                slot => *slot = Some(t),
            }
        }
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, n) = (g.rows(), g.cols());
                let k = av.cols();
                // dA = G * op(B)^T
                let mut da = Tensor::zeros(m, k);
                gemm(m, n, k, 1.0, g.data(), false, bv.data(), !trans_b, 0.0, da.data_mut());
                if *trans_b {
                    // B is n x k: dB = G^T * A
                    let mut db = Tensor::zeros(n, k);
                    gemm(n, m, k, 1.0, g.data(), true, av.data(), false, 0.0, db.data_mut());
                    acc(grads, *b, db);
                } else {
                    // B is k x n: dB = A^T * G
                    let mut db = Tensor::zeros(k, n);
                    gemm(k, m, n, 1.0, av.data(), true, g.data(), false, 0.0, db.data_mut());
                    acc(grads, *b, db);
                }
                acc(grads, *a, da);
            }
            Op::AddRow { a, bias } => {
                let mut db = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (o, x) in db.data_mut().iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
                acc(grads, *a, g.clone());
                acc(grads, *bias, db);
            }
            Op::Add { a, b } => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::Mul { a, b } => {
                let mut da = g.clone();
                for (o, x) in da.data_mut().iter_mut().zip(self.value(*b).data()) {
                    *o *= x;
                }
                let mut db = g.clone();
                for (o, x) in db.data_mut().iter_mut().zip(self.value(*a).data()) {
                    *o *= x;
                }
                acc(grads, *a, da);
                acc(grads, *b, db);
            }
            Op::Relu(a) => {
                let mut d = g.clone();
                for (o, y) in d.data_mut().iter_mut().zip(node.value.data()) {
                    if *y <= 0.0 {
                        *o = 0.0;
                    }
                }
                acc(grads, *a, d);
            }
            Op::Scale(a, s) => {
                let mut d = g.clone();
                for o in d.data_mut() {
                    *o *= s;
                }
                acc(grads, *a, d);
            }
            Op::Sum(a) => {
                let av = self.value(*a);
                acc(grads, *a, Tensor::full(av.rows(), av.cols(), g.data()[0]));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gamma);
                let (rows, n) = (xhat.rows(), xhat.cols());
                let mut dx = Tensor::zeros(rows, n);
                let mut dg = Tensor::zeros(1, n);
                let mut db = Tensor::zeros(1, n);
                let mut dxhat = vec![0.0; n];
                for r in 0..rows {
                    let (gr, xr) = (g.row(r), xhat.row(r));
                    for c in 0..n {
                        dxhat[c] = gr[c] * gv.data()[c];
                        dg.data_mut()[c] += gr[c] * xr[c];
                        db.data_mut()[c] += gr[c];
                    }
                    let s1: Float = dxhat.iter().sum();
                    let s2: Float = dxhat.iter().zip(xr).map(|(a, b)| a * b).sum();
                    let f = inv_std[r] / n as Float;
                    for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                        *o = f * (n as Float * dxhat[c] - s1 - xr[c] * s2);
                    }
                }
                acc(grads, *x, dx);
                acc(grads, *gamma, dg);
                acc(grads, *beta, db);
            }
            Op::Attention(rec) => {
                let (qv, kv, vv) = (self.value(rec.q), self.value(rec.k), self.value(rec.v));
                let d = qv.cols();
                let dh = d / rec.heads;
                let scale = 1.0 / (dh as Float).sqrt();
                let mut dq = Tensor::zeros(qv.rows(), d);
                let mut dk = Tensor::zeros(kv.rows(), d);
                let mut dv = Tensor::zeros(vv.rows(), d);
                let mut pi = 0;
                for (&(qs, ql), &(ks, kl)) in rec.q_blocks.iter().zip(&rec.k_blocks) {
                    for h in 0..rec.heads {
                        let c0 = h * dh;
                        let p = &rec.probs[pi];
                        pi += 1;
                        let mut ds = vec![0.0; kl];
                        for i in 0..ql {
                            let gi = &g.row(qs + i)[c0..c0 + dh];
                            let prow = &p[i * kl..(i + 1) * kl];
                            let mut dot = 0.0;
                            for j in 0..kl {
                                let vj = &vv.row(ks + j)[c0..c0 + dh];
                                let dp = gi.iter().zip(vj).map(|(a, b)| a * b).sum::<Float>();
                                ds[j] = dp;
                                dot += dp * prow[j];
                                for (o, x) in dv.row_mut(ks + j)[c0..c0 + dh].iter_mut().zip(gi) {
                                    *o += prow[j] * x;
                                }
                            }
                            for j in 0..kl {
                                let s = prow[j] * (ds[j] - dot) * scale;
                                if s == 0.0 {
                                    continue;
                                }
                                let kj = &kv.row(ks + j)[c0..c0 + dh];
                                for (o, x) in dq.row_mut(qs + i)[c0..c0 + dh].iter_mut().zip(kj) {
                                    *o += s * x;
                                }
                                let qi = &qv.row(qs + i)[c0..c0 + dh];
                                for (o, x) in dk.row_mut(ks + j)[c0..c0 + dh].iter_mut().zip(qi) {
                                    *o += s * x;
                                }
                            }
                        }
                    }
                }
                acc(grads, rec.q, dq);
                acc(grads, rec.k, dk);
                acc(grads, rec.v, dv);
            }
            Op::GatherRows { a, idx } => {
                let av = self.value(*a);
                let mut d = Tensor::zeros(av.rows(), av.cols());
                for (r, &i) in idx.iter().enumerate() {
                    for (o, x) in d.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
                acc(grads, *a, d);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let len = pv.len();
                    let d = Tensor::from_vec(pv.rows(), pv.cols(), g.data()[off..off + len].to_vec());
                    off += len;
                    acc(grads, p, d);
                }
            }
            Op::BlockMean { a, blocks } => {
                let av = self.value(*a);
                let mut d = Tensor::zeros(av.rows(), av.cols());
                for (b, &(s, l)) in blocks.iter().enumerate() {
                    let inv = 1.0 / l as Float;
                    for r in s..s + l {
                        for (o, x) in d.row_mut(r).iter_mut().zip(g.row(b)) {
                            *o += x * inv;
                        }
                    }
                }
                acc(grads, *a, d);
            }
            Op::NoisyWeight { mu, sigma, eps } => {
                let mut ds = g.clone();
                for (o, e) in ds.data_mut().iter_mut().zip(eps.data()) {
                    *o *= e;
                }
                acc(grads, *mu, g.clone());
                acc(grads, *sigma, ds);
            }
            Op::Dueling { adv, value, blocks } => {
                let mut da = Tensor::zeros(g.rows(), 1);
                let mut dv = Tensor::zeros(blocks.len(), 1);
                for (b, &(s, l)) in blocks.iter().enumerate() {
                    let gs = &g.data()[s..s + l];
                    let total: Float = gs.iter().sum();
                    dv.data_mut()[b] = total;
                    let mean = total / l as Float;
                    for (o, x) in da.data_mut()[s..s + l].iter_mut().zip(gs) {
                        *o = x - mean;
                    }
                }
                acc(grads, *adv, da);
                acc(grads, *value, dv);
            }
            Op::PickMse {
                q,
                picks,
                targets,
                weights,
            } => {
                let qv = self.value(*q);
                let n = picks.len() as Float;
                let mut d = Tensor::zeros(qv.rows(), 1);
                for ((&p, y), w) in picks.iter().zip(targets).zip(weights) {
                    d.data_mut()[p] += g.data()[0] * 2.0 * w * (qv.data()[p] - y) / n;
                }
                acc(grads, *q, d);
            }
        }
    }
}
