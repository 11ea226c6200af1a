use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numerics::{Matrix, ParamSet};

/// Adam moments for a single parameter matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Matrix,
    pub v: Matrix,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize, hp: AdamHyper) -> Self {
        Self {
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
            t: 0,
            beta1: hp.beta1,
            beta2: hp.beta2,
            eps: hp.eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_step(param: &mut Matrix, grad: &Matrix, state: &mut AdamState, lr: f64) -> Result<()> {
    param.ensure_same_shape(grad, "adam_step")?;
    param.ensure_same_shape(&state.m, "adam_step")?;
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let p = param.as_mut_slice();
    let m = state.m.as_mut_slice();
    let v = state.v.as_mut_slice();
    for (i, &g) in grad.as_slice().iter().enumerate() {
        m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
        v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

/// Adam over every trainable entry of one [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    states: Vec<Option<AdamState>>,
    steps: u64,
}

impl Adam {
    pub fn new(params: &ParamSet, hp: AdamHyper) -> Self {
        let states = params
            .iter()
            .map(|(_, p)| {
                p.trainable
                    .then(|| AdamState::new(p.value.rows(), p.value.cols(), hp))
            })
            .collect();
        Self { states, steps: 0 }
    }

    /// Number of completed [`Adam::step`] calls.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update from the accumulated gradients, then clears them.
    pub fn step(&mut self, params: &mut ParamSet, lr: f64) -> Result<()> {
        for ((_, p), state) in params.iter_mut().zip(self.states.iter_mut()) {
            if let Some(state) = state {
                adam_step(&mut p.value, &p.grad, state, lr)?;
            }
        }
        params.zero_grad();
        self.steps += 1;
        Ok(())
    }
}

/// Linear warmup followed by step decay at epoch boundaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub decay_rate: f64,
    pub decay_epochs: Vec<u64>,
    pub steps_per_epoch: u64,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        Self {
            base_lr: lr,
            warmup_steps: 0,
            decay_rate: 1.0,
            decay_epochs: Vec::new(),
            steps_per_epoch: 1,
        }
    }

    /// Learning rate for a zero-based global step. During warmup the rate is
    /// `base_lr * (step + 1) / warmup_steps`; afterwards it is `base_lr`
    /// multiplied by `decay_rate` once per decay epoch already reached.
    pub fn lr_at(&self, step: u64) -> f64 {
        let epoch = step / self.steps_per_epoch.max(1);
        let decays = self.decay_epochs.iter().filter(|&&e| epoch >= e).count();
        let decayed = self.base_lr * self.decay_rate.powi(decays as i32);
        if step < self.warmup_steps {
            decayed * (step + 1) as f64 / self.warmup_steps as f64
        } else {
            decayed
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_param() {
        let mut p = Matrix::from_rows(&[[1.5, -2.0]]);
        let mut s = AdamState::new(1, 2, AdamHyper::default());
        for _ in 0..5 {
            adam_step(&mut p, &Matrix::zeros(1, 2), &mut s, 0.1).unwrap();
        }
        assert_eq!(p, Matrix::from_rows(&[[1.5, -2.0]]));
        assert_eq!(s.t, 5);
    }

    #[test]
    fn first_step_closed_form() {
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
        let mut p = Matrix::from_rows(&[[1.0]]);
        let mut s = AdamState::new(1, 1, AdamHyper::default());
        adam_step(&mut p, &Matrix::from_rows(&[[1.0]]), &mut s, 0.1).unwrap();
        let expected = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p[(0, 0)] - expected).abs() < 1e-15);
        assert!((p[(0, 0)] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut p = Matrix::from_rows(&[[1.0]]);
        let mut s = AdamState::new(1, 1, AdamHyper::default());
        for _ in 0..100 {
            let g = p.scale(2.0);
            adam_step(&mut p, &g, &mut s, 0.1).unwrap();
        }
        assert!(p[(0, 0)].abs() < 0.1, "p = {}", p[(0, 0)]);
    }

    #[test]
    fn adam_skips_buffers_and_clears_grads() {
        let mut params = ParamSet::new();
        params.insert("w", Matrix::from_rows(&[[1.0]]));
        params.insert_buffer("stat", Matrix::from_rows(&[[4.0]]));
        let mut opt = Adam::new(&params, AdamHyper::default());
        params
            .accumulate("w", &Matrix::from_rows(&[[1.0]]))
            .unwrap();
        params
            .accumulate("stat", &Matrix::from_rows(&[[1.0]]))
            .unwrap();
        opt.step(&mut params, 0.1).unwrap();
        assert!(params.value("w")[(0, 0)] < 1.0);
        assert_eq!(params.value("stat")[(0, 0)], 4.0);
        assert_eq!(params.grad("w")[(0, 0)], 0.0);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn warmup_then_decay() {
        let s = LrSchedule {
            base_lr: 1e-4,
            warmup_steps: 10,
            decay_rate: 0.2,
            decay_epochs: vec![10, 15],
            steps_per_epoch: 100,
        };
        assert!((s.lr_at(0) - 1e-5).abs() < 1e-20);
        assert!((s.lr_at(9) - 1e-4).abs() < 1e-20);
        assert_eq!(s.lr_at(10), 1e-4);
        assert_eq!(s.lr_at(999), 1e-4);
        assert!((s.lr_at(1000) - 2e-5).abs() < 1e-18);
        assert!((s.lr_at(1499) - 2e-5).abs() < 1e-18);
        assert!((s.lr_at(1500) - 4e-6).abs() < 1e-18);
    }

    #[test]
    fn schedule_is_positive_and_monotone_per_piece() {
        let s = LrSchedule {
            base_lr: 3e-3,
            warmup_steps: 50,
            decay_rate: 0.2,
            decay_epochs: vec![3, 5],
            steps_per_epoch: 32,
        };
        let lrs: Vec<f64> = (0..400).map(|i| s.lr_at(i)).collect();
        assert!(lrs.iter().all(|&l| l > 0.0));
        assert!(lrs[..50].windows(2).all(|w| w[1] > w[0]));
        assert!(lrs[96..].windows(2).all(|w| w[1] <= w[0]));
    }
}
