use serde::Serialize;

use super::{Gradients, ParamBlock, Tensor2D};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Anything with parameters and a scalar loss that can report its gradient.
pub trait Objective<T: Scalar> {
    fn params(&self) -> Vec<&ParamBlock<T>>;
    fn params_mut(&mut self) -> Vec<&mut ParamBlock<T>>;
    fn loss(&self, input: &Tensor2D<T>, target: usize) -> Result<T>;
    fn loss_and_grad(&self, input: &Tensor2D<T>, target: usize) -> Result<(T, Gradients<T>)>;
}

pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Gradient magnitudes below this are compared absolutely rather than
/// relatively. A loss near 1 carries about 2e-16 of round-off, so central
/// differences at the default epsilon are only good to about 1e-11; with this
/// floor, a relative tolerance of 1e-4 still demands agreement to 1e-10.
pub const ABSOLUTE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(block, index)` of the worst parameter.
    pub worst: Option<(usize, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub parameters_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    let scale = analytic.abs().max(numeric.abs()).max(ABSOLUTE_FLOOR);
    diff / scale
}

/// Compare the analytic gradient with central differences on every parameter.
pub fn finite_difference_check<T: Scalar, M: Objective<T>>(
    model: &mut M,
    input: &Tensor2D<T>,
    target: usize,
    epsilon: f64,
) -> Result<GradCheckReport> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let (_, analytic) = model.loss_and_grad(input, target)?;
    let eps = T::of(epsilon);
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        parameters_checked: 0,
    };
    let n_blocks = model.params().len();
    for b in 0..n_blocks {
        let len = model.params()[b].len();
        for i in 0..len {
            let orig = model.params()[b].values[i];
            model.params_mut()[b].values[i] = orig + eps;
            let up = model.loss(input, target)?;
            model.params_mut()[b].values[i] = orig - eps;
            let down = model.loss(input, target)?;
            model.params_mut()[b].values[i] = orig;

            let numeric = ((up - down) / (eps + eps)).as_f64();
            let a = analytic.blocks[b][i].as_f64();
            let err = relative_error(a, numeric);
            report.parameters_checked += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = err;
                report.worst = Some((b, i));
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
        }
    }
    Ok(report)
}

/// Central-difference gradient of `loss(input)` with respect to the input.
pub fn numeric_input_gradient<T: Scalar>(
    input: &Tensor2D<T>,
    epsilon: f64,
    mut loss: impl FnMut(&Tensor2D<T>) -> Result<T>,
) -> Result<Tensor2D<T>> {
    let eps = T::of(epsilon);
    let mut x = input.clone();
    let mut out = Tensor2D::zeros(input.rows(), input.cols());
    for i in 0..x.as_slice().len() {
        let orig = x.as_slice()[i];
        x.as_mut_slice()[i] = orig + eps;
        let up = loss(&x)?;
        x.as_mut_slice()[i] = orig - eps;
        let down = loss(&x)?;
        x.as_mut_slice()[i] = orig;
        out.as_mut_slice()[i] = (up - down) / (eps + eps);
    }
    Ok(out)
}
