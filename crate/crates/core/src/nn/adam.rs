//! Adaptive-moment optimizer.

use serde::{Deserialize, Serialize};

use super::layers::ParamStore;
use super::tensor::{Float, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip, if any.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(10.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros = || params.values().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update; returns the pre-clip global gradient norm.
    pub fn update(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> f64 {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        let norm = grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
        let scale = match self.config.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let step_size = (c.lr / bc1) as Float;
        let (b1, b2) = (c.beta1 as Float, c.beta2 as Float);
        let eps = c.eps as Float;
        let sqrt_bc2 = bc2.sqrt() as Float;
        let scale = scale as Float;
        for (((p, g), m), v) in params
            .values_mut()
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            assert_eq!(p.shape(), g.shape(), "gradient shape mismatch");
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let gv = gv * scale;
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                *pv -= step_size * *mv / ((*vv).sqrt() / sqrt_bc2 + eps);
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let mut ps = ParamStore::new();
        ps.add("x", Tensor::from_f64(1, 3, &[1.0, -2.0, 3.0]));
        let before = ps.clone();
        let mut opt = Adam::new(AdamConfig { lr: 0.0, ..Default::default() }, &ps);
        opt.update(&mut ps, &[Tensor::from_f64(1, 3, &[0.5, 0.5, 0.5])]);
        assert_eq!(ps, before);
    }

    #[test]
    fn quadratic_bowl_converges_monotonically() {
        // minimize (x - 0)^2 from x = 5; |x| must shrink after warm-up
        let mut ps = ParamStore::new();
        ps.add("x", Tensor::from_f64(1, 1, &[5.0]));
        let mut opt = Adam::new(
            AdamConfig {
                lr: 0.05,
                clip_norm: None,
                ..Default::default()
            },
            &ps,
        );
        let mut prev = f64::INFINITY;
        for i in 0..200 {
            let x = f64::from(ps.values()[0].data()[0]);
            if i >= 10 {
                assert!(x.abs() <= prev + 1e-12, "step {i}: {x} vs {prev}");
            }
            prev = x.abs();
            opt.update(&mut ps, &[Tensor::from_f64(1, 1, &[2.0 * x])]);
        }
        assert!(prev < 5.0 - 0.05 * 150.0 || prev < 0.5);
    }
}
