//! Adam (and plain SGD) over flat tensor lists, plus global-norm clipping.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

/// Bias-corrected Adam with one moment buffer pair per tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            config,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    /// One update. Tensors whose `mask` entry is false are left alone.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], mask: &[bool]) {
        assert_eq!(params.len(), self.m.len(), "adam: tensor count changed");
        self.t += 1;
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for (k, (theta, g)) in params.iter_mut().zip(grads).enumerate() {
            if !mask[k] {
                continue;
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for j in 0..theta.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                let delta = learning_rate * m_hat / (v_hat.sqrt() + epsilon);
                // skipping exact zeros keeps -0.0 intact
                if delta != 0.0 {
                    theta[j] -= delta;
                }
            }
        }
    }
}

pub fn sgd_step(params: &mut [&mut [f64]], grads: &[&[f64]], mask: &[bool], learning_rate: f64) {
    for (k, (theta, g)) in params.iter_mut().zip(grads).enumerate() {
        if mask[k] {
            for (t, d) in theta.iter_mut().zip(g.iter()) {
                let delta = learning_rate * d;
                if delta != 0.0 {
                    *t -= delta;
                }
            }
        }
    }
}

/// L2 norm over every masked-in tensor.
pub fn global_norm(grads: &[&[f64]], mask: &[bool]) -> f64 {
    let mut sq = 0.0;
    for (g, &on) in grads.iter().zip(mask) {
        if on {
            for x in g.iter() {
                sq += x * x;
            }
        }
    }
    sq.sqrt()
}

/// Rescale so the global norm is at most `max_norm`. Returns the norm before
/// clipping.
pub fn clip_global_norm(grads: &mut [&mut [f64]], mask: &[bool], max_norm: f64) -> f64 {
    let norm = {
        let views: Vec<&[f64]> = grads.iter().map(|g| &**g).collect();
        global_norm(&views, mask)
    };
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for (g, &on) in grads.iter_mut().zip(mask) {
            if on {
                g.iter_mut().for_each(|x| *x *= scale);
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn default_adam(lr: f64) -> AdamConfig {
        AdamConfig { learning_rate: lr, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }

    #[test]
    fn adam_minimizes_scalar_quadratic() {
        let mut theta = vec![0.0];
        let mut adam = Adam::new(default_adam(0.01), &[1]);
        for _ in 0..2000 {
            let g = vec![2.0 * (theta[0] - 3.0)];
            adam.step(&mut [&mut theta], &[&g], &[true]);
        }
        assert!((theta[0] - 3.0).abs() < 1e-3, "theta = {}", theta[0]);
    }

    #[test]
    fn adam_first_step_matches_reference_recurrence() {
        // after one step m̂ = g and v̂ = g², so the move is lr · g / (|g| + ε)
        let mut theta = vec![1.0, -2.0];
        let g = vec![0.5, -4.0];
        let mut adam = Adam::new(default_adam(0.1), &[2]);
        adam.step(&mut [&mut theta], &[&g], &[true]);
        assert!((theta[0] - (1.0 - 0.1 * 0.5 / (0.5 + 1e-8))).abs() < 1e-15);
        assert!((theta[1] - (-2.0 + 0.1 * 4.0 / (4.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let original = vec![0.3, -0.0, 1e-300, 7.0];
        let mut theta = original.clone();
        let mut adam = Adam::new(default_adam(0.0), &[4]);
        for _ in 0..10 {
            adam.step(&mut [&mut theta], &[&[1.0, -1.0, 3.0, 0.0]], &[true]);
        }
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&theta), bits(&original));
    }

    #[test]
    fn masked_tensors_do_not_move() {
        let mut a = vec![1.0];
        let mut b = vec![1.0];
        let mut adam = Adam::new(default_adam(0.1), &[1, 1]);
        adam.step(&mut [&mut a, &mut b], &[&[1.0], &[1.0]], &[true, false]);
        assert!(a[0] < 1.0);
        assert_eq!(b[0], 1.0);
    }

    proptest! {
        #[test]
        fn clipping_bounds_norm_and_keeps_direction(
            a in proptest::collection::vec(-100.0..100.0f64, 1..10),
            b in proptest::collection::vec(-100.0..100.0f64, 1..10),
            max_norm in 0.01..50.0f64,
        ) {
            let (orig_a, orig_b) = (a.clone(), b.clone());
            let (mut a, mut b) = (a, b);
            let before = clip_global_norm(&mut [&mut a, &mut b], &[true, true], max_norm);
            let after = global_norm(&[&a, &b], &[true, true]);
            prop_assert!(after <= max_norm + 1e-9);
            if before > 0.0 {
                let scale = after / before;
                prop_assert!(scale > 0.0);
                for (x, y) in a.iter().chain(&b).zip(orig_a.iter().chain(&orig_b)) {
                    prop_assert!((x - scale * y).abs() <= 1e-9 * (1.0 + y.abs()));
                }
            }
        }
    }
}
