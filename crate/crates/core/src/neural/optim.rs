use serde::{Deserialize, Serialize};

use super::param::check_layout;
use super::{Gradients, ParamBlock};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates for every parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &[&ParamBlock<T>], config: AdamConfig) -> Self {
        let zeros: Vec<Vec<T>> = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        OptimizerState {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected adaptive-moment step.
pub fn adam_update<T: Scalar>(
    params: &mut [&mut ParamBlock<T>],
    grads: &Gradients<T>,
    state: &mut OptimizerState<T>,
) -> Result<()> {
    let shapes: Vec<Vec<()>> = params.iter().map(|p| vec![(); p.len()]).collect();
    let moment_shapes: Vec<Vec<()>> = state.first.iter().map(|m| vec![(); m.len()]).collect();
    let grad_shapes: Vec<Vec<()>> = grads.blocks.iter().map(|g| vec![(); g.len()]).collect();
    check_layout(&shapes, &grad_shapes)?;
    check_layout(&shapes, &moment_shapes).map_err(|e| match e {
        Error::ShapeMismatch { expected, found } => Error::ShapeMismatch {
            expected: format!("optimizer moments {found}"),
            found: format!("parameters {expected}"),
        },
        other => other,
    })?;

    state.step += 1;
    let cfg = state.config;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let lr = T::of(cfg.learning_rate);
    let eps = T::of(cfg.epsilon);
    let t = state.step as i32;
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);
    let one = T::one();

    for (i, p) in params.iter_mut().enumerate() {
        let g = &grads.blocks[i];
        let m = &mut state.first[i];
        let v = &mut state.second[i];
        for j in 0..p.values.len() {
            m[j] = b1 * m[j] + (one - b1) * g[j];
            v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p.values[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
