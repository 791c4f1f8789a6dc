use serde::{Deserialize, Serialize};

use super::param::ParamStore;
use crate::Scalar;

/// A first-order update rule applied to accumulated gradients.
pub trait Optimizer<F: Scalar> {
    /// Applies one update. When every accumulated gradient component is zero the
    /// call is a no-op (optimizer state included) and returns `false`.
    fn step<M: ParamStore<F> + ?Sized>(&mut self, model: &mut M) -> bool;
}

/// Plain stochastic gradient descent: `θ ← θ − lr · g`.
#[derive(Clone, Debug)]
pub struct Sgd<F> {
    pub lr: F,
}

impl<F: Scalar> Sgd<F> {
    pub fn new(lr: F) -> Self {
        Sgd { lr }
    }
}

impl<F: Scalar> Optimizer<F> for Sgd<F> {
    fn step<M: ParamStore<F> + ?Sized>(&mut self, model: &mut M) -> bool {
        if model.grad_is_zero() {
            return false;
        }
        for p in model.params_mut() {
            for (v, &g) in p.values.iter_mut().zip(&p.grad) {
                *v -= self.lr * g;
            }
        }
        true
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected first and second moment estimates.
#[derive(Clone, Debug)]
pub struct Adam<F> {
    cfg: AdamConfig,
    t: i32,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }
}

impl<F: Scalar> Optimizer<F> for Adam<F> {
    fn step<M: ParamStore<F> + ?Sized>(&mut self, model: &mut M) -> bool {
        if model.grad_is_zero() {
            return false;
        }
        let mut params = model.params_mut();
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![F::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), params.len(), "parameter list changed under Adam");
        self.t += 1;
        let (b1, b2) = (F::lit(self.cfg.beta1), F::lit(self.cfg.beta2));
        let lr = F::lit(self.cfg.lr);
        let eps = F::lit(self.cfg.eps);
        let c1 = F::one() - b1.powi(self.t);
        let c2 = F::one() - b2.powi(self.t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for k in 0..p.values.len() {
                let g = p.grad[k];
                m[k] = b1 * m[k] + (F::one() - b1) * g;
                v[k] = b2 * v[k] + (F::one() - b2) * g * g;
                let mhat = m[k] / c1;
                let vhat = v[k] / c2;
                p.values[k] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numgrad::Param;

    fn store() -> Vec<Param<f64>> {
        vec![Param::from_values("w", 1, 3, vec![1.0, -2.0, 0.5])]
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = store();
        let before = s.clone();
        assert!(!Sgd::new(0.1).step(&mut s));
        let mut adam = Adam::new(AdamConfig::default());
        assert!(!adam.step(&mut s));
        assert_eq!(adam.steps_taken(), 0);
        assert_eq!(s, before);
    }

    #[test]
    fn sgd_moves_against_gradient() {
        let mut s = store();
        s[0].grad = vec![1.0, 0.0, -2.0];
        assert!(Sgd::new(0.5).step(&mut s));
        assert_eq!(s[0].values, vec![0.5, -2.0, 1.5]);
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let mut s = store();
        s[0].grad = vec![3.0, 0.0, -1e-3];
        let mut adam = Adam::new(AdamConfig::default());
        assert!(adam.step(&mut s));
        assert!((s[0].values[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert_eq!(s[0].values[1], -2.0);
        assert!((s[0].values[2] - (0.5 + 1e-3)).abs() < 1e-7);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut s = vec![Param::from_values("x", 1, 1, vec![3.0f64])];
        let mut adam = Adam::new(AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        });
        for _ in 0..2000 {
            s[0].grad[0] = 2.0 * (s[0].values[0] - 1.0);
            adam.step(&mut s);
        }
        assert!((s[0].values[0] - 1.0).abs() < 1e-3);
    }
}
