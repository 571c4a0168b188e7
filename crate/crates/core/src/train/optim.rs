use serde::{Deserialize, Serialize};

use crate::nn::{Mat, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
        }
    }
}

/// Adam with bias-corrected moments; the learning rate is supplied per step.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<Mat>,
    v: Vec<Mat>,
    t: i32,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        Self {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Mat], lr: f64) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for (id, g) in grads.iter().enumerate() {
            let p = params.get_mut(id);
            let (m, v) = (&mut self.m[id], &mut self.v[id]);
            for i in 0..g.data.len() {
                let gi = g.data[i];
                m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * gi;
                v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * gi * gi;
                let mh = m.data[i] / c1;
                let vh = v.data[i] / c2;
                p.data[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut [Mat], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Mat::sum_sq).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        grads.iter_mut().for_each(|g| g.scale_assign(k));
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut store = ParamStore::new();
        store.insert("w", Mat::from_vec(1, 2, vec![1.0, -1.0])).unwrap();
        let mut adam = Adam::new(AdamConfig::default(), &store);
        adam.step(&mut store, &[Mat::from_vec(1, 2, vec![0.5, -3.0])], 0.1);
        let w = store.by_name("w").unwrap();
        assert!((w.data[0] - 0.9).abs() < 1e-9);
        assert!((w.data[1] + 0.9).abs() < 1e-9);
    }

    #[test]
    fn clipping() {
        let mut g = vec![Mat::from_vec(1, 2, vec![3.0, 4.0])];
        assert_eq!(clip_global_norm(&mut g, 10.0), 5.0);
        assert_eq!(g[0].data, vec![3.0, 4.0]);
        clip_global_norm(&mut g, 1.0);
        assert!((g[0].sum_sq() - 1.0).abs() < 1e-12);
    }
}
