use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Adam with bias correction; L2 regularisation is added to the gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64, l2_lambda: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Dimension("optimizer state does not match parameters".into()));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if p.shape() != g.shape() {
                return Err(Error::Dimension(format!(
                    "gradient shape {:?} for parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
            for k in 0..p.len() {
                let g = g.data()[k] + l2_lambda * p[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheduler {
    /// Halve the rate after 10 epochs without a 1e-6 validation improvement.
    PlateauReduce,
    /// Multiply the rate by 0.9 every 10 epochs.
    ExpDecay,
}

pub const PLATEAU_FACTOR: f64 = 0.5;
pub const PLATEAU_PATIENCE: u32 = 10;
pub const PLATEAU_THRESHOLD: f64 = 1e-6;
pub const DECAY_FACTOR: f64 = 0.9;
pub const DECAY_EVERY: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulerState {
    best: f64,
    bad_epochs: u32,
}

impl Default for SchedulerState {
    fn default() -> Self {
        SchedulerState {
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }
}

/// Learning rate to use after `epoch` (1-based) finished with `val_loss`.
pub fn lr_update(scheduler: Scheduler, state: &mut SchedulerState, epoch: usize, val_loss: f64, lr: f64) -> f64 {
    match scheduler {
        Scheduler::ExpDecay => {
            if epoch > 0 && epoch % DECAY_EVERY == 0 {
                lr * DECAY_FACTOR
            } else {
                lr
            }
        }
        Scheduler::PlateauReduce => {
            if val_loss < state.best - PLATEAU_THRESHOLD {
                state.best = val_loss;
                state.bad_epochs = 0;
                lr
            } else {
                state.bad_epochs += 1;
                if state.bad_epochs >= PLATEAU_PATIENCE {
                    state.bad_epochs = 0;
                    lr * PLATEAU_FACTOR
                } else {
                    lr
                }
            }
        }
    }
}
