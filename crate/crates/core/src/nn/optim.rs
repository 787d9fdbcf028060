use std::collections::HashMap;

use ndarray::Array2;

use super::graph::Gradients;
use super::params::{Mat, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Mat,
    v: Mat,
    t: u64,
}

/// AdamW with decoupled weight decay. Only parameters present in the
/// gradient set are touched, and bias correction uses each parameter's own
/// update count.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    state: HashMap<ParamId, Moments>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> AdamW {
        AdamW {
            config,
            state: HashMap::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) {
        let c = self.config;
        for (&id, g) in &grads.grads {
            if !store.is_trainable(id) {
                continue;
            }
            let p = store.get_mut(id);
            let st = self.state.entry(id).or_insert_with(|| Moments {
                m: Array2::zeros(p.dim()),
                v: Array2::zeros(p.dim()),
                t: 0,
            });
            st.t += 1;
            let bc1 = 1.0 - c.beta1.powi(st.t as i32);
            let bc2 = 1.0 - c.beta2.powi(st.t as i32);
            st.m.zip_mut_with(g, |m, &g| *m = c.beta1 * *m + (1.0 - c.beta1) * g);
            st.v.zip_mut_with(g, |v, &g| *v = c.beta2 * *v + (1.0 - c.beta2) * g * g);
            ndarray::Zip::from(p).and(&st.m).and(&st.v).for_each(|p, &m, &v| {
                let mhat = m / bc1;
                let vhat = v / bc2;
                *p -= lr * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * *p);
            });
        }
    }

    pub fn steps_taken(&self, id: ParamId) -> u64 {
        self.state.get(&id).map_or(0, |s| s.t)
    }
}

/// Step decay: `base * factor^floor(step / every)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDecay {
    pub base: f64,
    pub factor: f64,
    pub every: usize,
}

impl Default for StepDecay {
    fn default() -> Self {
        StepDecay {
            base: 5e-4,
            factor: 0.2,
            every: 16_000,
        }
    }
}

impl StepDecay {
    pub fn lr(&self, step: usize) -> f64 {
        let k = if self.every == 0 { 0 } else { step / self.every };
        self.base * self.factor.powi(k as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::Graph;
    use ndarray::array;

    #[test]
    fn schedule_drops_by_five_every_16k() {
        let s = StepDecay::default();
        assert_eq!(s.lr(0), 5e-4);
        assert_eq!(s.lr(15_999), 5e-4);
        assert!((s.lr(16_000) - 1e-4).abs() < 1e-18);
        assert!((s.lr(32_000) - 2e-5).abs() < 1e-18);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        // with zero moments the bias-corrected step is lr * sign(g) (up to eps)
        let mut store = ParamStore::new();
        let w = store.add("w", array![[1.0, -2.0]]);
        let mut opt = AdamW::new(AdamWConfig::default());
        let grads = {
            let mut g = Graph::new(&store, true, 0);
            let wv = g.param(w);
            let c = g.constant(array![[3.0, -0.5]]);
            let p = g.mul(wv, c);
            let s = g.sum_all(p);
            g.backward(s)
        };
        opt.step(&mut store, &grads, 5e-4);
        let got = store.get(w);
        let e0 = 1.0 - 5e-4 * (3.0 / (3.0 + 1e-8) + 0.01 * 1.0);
        let e1 = -2.0 - 5e-4 * (-0.5 / (0.5 + 1e-8) + 0.01 * -2.0);
        assert!((got[[0, 0]] - e0).abs() < 1e-15);
        assert!((got[[0, 1]] - e1).abs() < 1e-15);
        assert_eq!(opt.steps_taken(w), 1);
    }

    #[test]
    fn params_without_gradients_are_untouched() {
        let mut store = ParamStore::new();
        let a = store.add("a", array![[1.0]]);
        let b = store.add("b", array![[2.0]]);
        let before = store.checksum("b");
        let grads = {
            let mut g = Graph::new(&store, true, 0);
            let av = g.param(a);
            g.sum_all(av);
            let s = g.sum_all(av);
            g.backward(s)
        };
        let mut opt = AdamW::new(AdamWConfig::default());
        opt.step(&mut store, &grads, 1e-3);
        assert_eq!(store.checksum("b"), before);
        assert_eq!(store.get(b)[[0, 0]], 2.0);
        assert_ne!(store.get(a)[[0, 0]], 1.0);
    }
}
