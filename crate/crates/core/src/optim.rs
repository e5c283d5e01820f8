//! Adam and learning-rate decay.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::math::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Adam { beta1: 0.9, beta2: 0.99, eps: 1e-8, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update of `params` from `grads`.
    pub fn step<R: Real>(&mut self, params: &mut [R], grads: &[f64], lr: f64) {
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            let p = params[i].to_f64() - lr * m_hat / (v_hat.sqrt() + self.eps);
            params[i] = R::from_f64(p);
        }
    }
}

/// How the learning rate decays over a stage.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "lowercase"))]
pub enum LrDecay {
    /// `lr0 · 0.1^(i / total)` with `i` rounded down to a multiple of `step`.
    Exponential { step: u64 },
    /// `lr0 · factor^⌊i / step⌋`.
    Step { step: u64, factor: f64 },
}

impl Default for LrDecay {
    fn default() -> Self {
        LrDecay::Exponential { step: 20 }
    }
}

impl LrDecay {
    pub fn lr_at(&self, lr0: f64, iter: u64, total: u64) -> f64 {
        match *self {
            LrDecay::Exponential { step } => {
                let step = step.max(1);
                let i = iter / step * step;
                lr0 * 0.1f64.powf(i as f64 / total.max(1) as f64)
            }
            LrDecay::Step { step, factor } => lr0 * factor.powi((iter / step.max(1)) as i32),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = [1.0f64, -2.0, 0.5];
        let mut a = Adam::new(3);
        a.step(&mut p, &[0.3, -4.0, 0.0], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-7);
        assert!((p[1] + 1.9).abs() < 1e-7);
        assert_eq!(p[2], 0.5);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = [5.0f32];
        let mut a = Adam::new(1);
        for _ in 0..2000 {
            let g = 2.0 * (p[0] as f64 - 1.5);
            a.step(&mut p, &[g], 0.05);
        }
        assert!((p[0] - 1.5).abs() < 1e-2);
    }

    #[test]
    fn exponential_decay() {
        let d = LrDecay::default();
        assert_eq!(d.lr_at(0.1, 0, 8000), 0.1);
        assert_eq!(d.lr_at(0.1, 19, 8000), 0.1);
        assert!((d.lr_at(0.1, 20, 8000) - 0.1 * 0.1f64.powf(20.0 / 8000.0)).abs() < 1e-15);
        assert!((d.lr_at(0.1, 8000, 8000) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn step_decay() {
        let d = LrDecay::Step { step: 20, factor: 0.5 };
        assert_eq!(d.lr_at(1.0, 39, 100), 0.5);
        assert_eq!(d.lr_at(1.0, 40, 100), 0.25);
    }
}
