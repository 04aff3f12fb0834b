//! First-order optimizers with a constant learning rate.

use alloc::format;
use alloc::vec::Vec;

use crate::params::Parameterized;
use crate::{Error, Result};

pub const RMSPROP_DECAY: f64 = 0.99;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const OPTIM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    RmsProp,
    Adam,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::RmsProp => "rmsprop",
            OptimizerKind::Adam => "adam",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "sgd" => Some(OptimizerKind::Sgd),
            "rmsprop" => Some(OptimizerKind::RmsProp),
            "adam" => Some(OptimizerKind::Adam),
            _ => None,
        }
    }
}

/// Accumulators for one tensor. `first` is Adam's mean; `second` is the
/// squared-gradient average of RMSProp and Adam.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SlotState {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

/// Updates one tensor in place. `step` counts from 1 and drives Adam's bias
/// correction.
pub fn optimizer_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut SlotState,
    kind: OptimizerKind,
    lr: f64,
    step: u64,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} parameters, {} gradients",
            params.len(),
            grads.len()
        )));
    }
    let n = params.len();
    match kind {
        OptimizerKind::Sgd => {
            for (p, g) in params.iter_mut().zip(grads) {
                *p -= lr * g;
            }
        }
        OptimizerKind::RmsProp => {
            state.second.resize(n, 0.0);
            for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.second) {
                *v = RMSPROP_DECAY * *v + (1.0 - RMSPROP_DECAY) * g * g;
                *p -= lr * g / (libm::sqrt(*v) + OPTIM_EPS);
            }
        }
        OptimizerKind::Adam => {
            state.first.resize(n, 0.0);
            state.second.resize(n, 0.0);
            let c1 = 1.0 - libm::pow(ADAM_BETA1, step as f64);
            let c2 = 1.0 - libm::pow(ADAM_BETA2, step as f64);
            for (((p, g), m), v) in params
                .iter_mut()
                .zip(grads)
                .zip(&mut state.first)
                .zip(&mut state.second)
            {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                *p -= lr * (*m / c1) / (libm::sqrt(*v / c2) + OPTIM_EPS);
            }
        }
    }
    Ok(())
}

/// Optimizer over every trainable tensor of a model, visited in layout order.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    slots: Vec<SlotState>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be > 0, got {lr}"
            )));
        }
        Ok(Self {
            kind,
            lr,
            step: 0,
            slots: Vec::new(),
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies the accumulated gradients. Tensors without a gradient are
    /// treated as having a zero gradient.
    pub fn step<M: Parameterized + ?Sized>(&mut self, model: &mut M) -> Result<()> {
        self.step += 1;
        let (kind, lr, step) = (self.kind, self.lr, self.step);
        let slots = &mut self.slots;
        let mut index = 0;
        let mut result = Ok(());
        model.visit_mut("", &mut |_, p| {
            if !p.trainable || result.is_err() {
                return;
            }
            if slots.len() <= index {
                slots.push(SlotState::default());
            }
            if p.grad.is_empty() {
                p.grad_mut();
            }
            result = optimizer_step(&mut p.value, &p.grad, &mut slots[index], kind, lr, step);
            index += 1;
        });
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Param;
    use alloc::vec;

    #[test]
    fn sgd_rule() {
        let mut p = [1.0];
        optimizer_step(
            &mut p,
            &[0.5],
            &mut SlotState::default(),
            OptimizerKind::Sgd,
            0.1,
            1,
        )
        .unwrap();
        assert_eq!(p, [0.95]);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        for g in [1e-4, 0.3, 250.0] {
            let mut p = [2.0];
            optimizer_step(
                &mut p,
                &[g],
                &mut SlotState::default(),
                OptimizerKind::Adam,
                1e-3,
                1,
            )
            .unwrap();
            // m_hat = g, v_hat = g^2 -> step = lr * g / (|g| + eps)
            let expected = 1e-3 * g / (g + OPTIM_EPS);
            assert!(((2.0 - p[0]) - expected).abs() < 1e-15);
            assert!(((2.0 - p[0]) - 1e-3).abs() < 1e-6);
        }
    }

    #[test]
    fn rmsprop_first_step() {
        let mut p = [0.0];
        optimizer_step(
            &mut p,
            &[2.0],
            &mut SlotState::default(),
            OptimizerKind::RmsProp,
            0.01,
            1,
        )
        .unwrap();
        let v: f64 = 0.01 * 4.0;
        assert!((p[0] + 0.01 * 2.0 / (v.sqrt() + OPTIM_EPS)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        for kind in [
            OptimizerKind::Sgd,
            OptimizerKind::RmsProp,
            OptimizerKind::Adam,
        ] {
            let mut p = [0.3, -1.2];
            let mut s = SlotState::default();
            for t in 1..4 {
                optimizer_step(&mut p, &[0.0, 0.0], &mut s, kind, 0.1, t).unwrap();
            }
            assert_eq!(p, [0.3, -1.2]);
        }
    }

    #[test]
    fn shape_mismatch() {
        assert!(optimizer_step(
            &mut [1.0],
            &[1.0, 2.0],
            &mut SlotState::default(),
            OptimizerKind::Sgd,
            0.1,
            1
        )
        .is_err());
        assert!(Optimizer::new(OptimizerKind::Adam, 0.0).is_err());
    }

    #[test]
    fn model_step_skips_buffers() {
        let mut params = vec![Param::new(&[2], vec![1.0, 1.0]), Param::buffer(&[1], 5.0)];
        params[0].grad_mut().copy_from_slice(&[1.0, -1.0]);
        params[1].grad_mut()[0] = 1.0;
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.5).unwrap();
        opt.step(&mut params).unwrap();
        assert_eq!(params[0].value, [0.5, 1.5]);
        assert_eq!(params[1].value, [5.0]);
        assert_eq!(OptimizerKind::from_name("adam"), Some(OptimizerKind::Adam));
        assert_eq!(OptimizerKind::from_name("bogus"), None);
    }
}
