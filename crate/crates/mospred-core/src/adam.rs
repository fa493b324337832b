//! Adaptive-moment optimizer and the warmup/linear-decay schedule.

use alloc::format;
use alloc::vec::Vec;

use crate::math;
use crate::tensor::Parameter;
use crate::{Error, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Adam with bias correction. Moment slots are allocated lazily on the
/// first step and are keyed by visit order, so the caller must offer the
/// parameters in the same order every step.
#[derive(Debug, Clone, Default)]
pub struct Adam {
    step: u64,
    slots: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new() -> Self {
        Adam::default()
    }

    /// Steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update at learning rate `lr` to every parameter the
    /// visitor offers. Gradients are consumed as-is and not cleared.
    pub fn step<'a, I>(&mut self, lr: f64, params: I) -> Result<()>
    where
        I: IntoIterator<Item = &'a mut Parameter>,
    {
        self.step += 1;
        let t = self.step;
        let bc1 = 1.0 - math::powi(BETA1, t);
        let bc2 = 1.0 - math::powi(BETA2, t);
        let mut idx = 0usize;
        for param in params {
            if !param.grad.all_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient for {} is not finite at optimizer step {t}",
                    param.name
                )));
            }
            if idx == self.slots.len() {
                let n = param.value.len();
                self.slots.push((alloc::vec![0.0; n], alloc::vec![0.0; n]));
            }
            let (m, v) = &mut self.slots[idx];
            if m.len() != param.value.len() {
                return Err(Error::shape(format!(
                    "optimizer slot {idx} holds {} values but {} has {}; parameters must be \
                     visited in a stable order",
                    m.len(),
                    param.name,
                    param.value.len()
                )));
            }
            let grads = param.grad.data();
            let vals = param.value.data_mut();
            for i in 0..vals.len() {
                let g = grads[i] as f64;
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                vals[i] = (vals[i] as f64 - lr * m_hat / (math::sqrt(v_hat) + EPS)) as f32;
            }
            idx += 1;
        }
        Ok(())
    }
}

/// Linear warmup to `peak_lr`, then linear decay to zero at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl LrSchedule {
    pub fn new(peak_lr: f64, warmup_steps: u64, total_steps: u64) -> Result<Self> {
        if !(peak_lr > 0.0) || !peak_lr.is_finite() {
            return Err(Error::invalid(format!("peak_lr must be positive, got {peak_lr}")));
        }
        if warmup_steps == 0 || warmup_steps >= total_steps {
            return Err(Error::invalid(format!(
                "warmup_steps must satisfy 0 < warmup ({warmup_steps}) < total ({total_steps})"
            )));
        }
        Ok(LrSchedule { peak_lr, warmup_steps, total_steps })
    }

    /// Learning rate at 1-based `step` in `[1, total_steps]`.
    pub fn lr_at(&self, step: u64) -> Result<f64> {
        if step == 0 || step > self.total_steps {
            return Err(Error::invalid(format!(
                "step {step} outside schedule range 1..={}",
                self.total_steps
            )));
        }
        if step <= self.warmup_steps {
            Ok(self.peak_lr * step as f64 / self.warmup_steps as f64)
        } else {
            let remain = (self.total_steps - step) as f64;
            let span = (self.total_steps - self.warmup_steps) as f64;
            Ok(self.peak_lr * remain / span)
        }
    }
}
