use rand::Rng;

use super::{Activation, Layer, ParamBlock, Tensor2D};
use crate::error::{Error, Result};
use crate::scalar::{axpy, dot, Scalar};

/// Fully connected layer over a `1 x n` row vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub units: usize,
    pub activation: Activation,
    /// `units x inputs`
    pub weight: ParamBlock<T>,
    pub bias: ParamBlock<T>,
}

pub struct DenseCache<T> {
    input: Vec<T>,
    output: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(inputs: usize, units: usize, activation: Activation) -> Self {
        Dense {
            inputs,
            units,
            activation,
            weight: ParamBlock::zeros(units, inputs),
            bias: ParamBlock::zeros(1, units),
        }
    }

    pub fn new<R: Rng>(inputs: usize, units: usize, activation: Activation, rng: &mut R) -> Self {
        Dense {
            weight: ParamBlock::glorot(units, inputs, inputs, units, rng),
            ..Self::zeros(inputs, units, activation)
        }
    }
}

impl<T: Scalar> Layer<T> for Dense<T> {
    type Cache = DenseCache<T>;

    fn forward(&self, input: &Tensor2D<T>) -> Result<(Tensor2D<T>, DenseCache<T>)> {
        if input.rows() != 1 || input.cols() != self.inputs {
            return Err(Error::ShapeMismatch {
                expected: format!("1x{}", self.inputs),
                found: format!("{}x{}", input.rows(), input.cols()),
            });
        }
        let x = input.row(0);
        let output: Vec<T> = (0..self.units)
            .map(|r| self.activation.apply(self.bias.values[r] + dot(self.weight.row(r), x)))
            .collect();
        Ok((
            Tensor2D::from_vec(1, self.units, output.clone())?,
            DenseCache {
                input: x.to_vec(),
                output,
            },
        ))
    }

    fn backward(&self, cache: &DenseCache<T>, grad_out: &Tensor2D<T>, grads: &mut [Vec<T>]) -> Tensor2D<T> {
        let (gw, gb) = grads.split_at_mut(1);
        let (gw, gb) = (&mut gw[0], &mut gb[0]);
        let n = self.inputs;
        let mut dx = vec![T::zero(); n];
        for r in 0..self.units {
            let d = grad_out.get(0, r) * self.activation.derivative_from_output(cache.output[r]);
            if d == T::zero() {
                continue;
            }
            gb[r] += d;
            axpy(&mut gw[r * n..(r + 1) * n], d, &cache.input);
            axpy(&mut dx, d, self.weight.row(r));
        }
        Tensor2D::from_vec(1, n, dx).expect("shape matches")
    }

    fn params(&self) -> Vec<&ParamBlock<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut ParamBlock<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}
