use rand::Rng;

use super::{Activation, Layer, ParamBlock, Tensor2D};
use crate::error::{Error, Result};
use crate::scalar::{axpy, dot, Scalar};

/// Same-padded 1-D convolution over time.
///
/// Weight row `f` holds the `kernel_size x in_channels` window flattened
/// row-major, so it lines up with a contiguous slice of the padded input.
/// For even kernels the extra zero row goes at the end of the sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d<T> {
    pub kernel_size: usize,
    pub in_channels: usize,
    pub filters: usize,
    pub activation: Activation,
    pub weight: ParamBlock<T>,
    pub bias: ParamBlock<T>,
}

pub struct ConvCache<T> {
    padded: Tensor2D<T>,
    output: Tensor2D<T>,
}

impl<T: Scalar> Conv1d<T> {
    pub fn zeros(kernel_size: usize, in_channels: usize, filters: usize, activation: Activation) -> Self {
        Conv1d {
            kernel_size,
            in_channels,
            filters,
            activation,
            weight: ParamBlock::zeros(filters, kernel_size * in_channels),
            bias: ParamBlock::zeros(1, filters),
        }
    }

    pub fn new<R: Rng>(
        kernel_size: usize,
        in_channels: usize,
        filters: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        Conv1d {
            weight: ParamBlock::glorot(
                filters,
                kernel_size * in_channels,
                kernel_size * in_channels,
                kernel_size * filters,
                rng,
            ),
            ..Self::zeros(kernel_size, in_channels, filters, activation)
        }
    }

    fn left_pad(&self) -> usize {
        (self.kernel_size - 1) / 2
    }

    fn pad(&self, input: &Tensor2D<T>) -> Tensor2D<T> {
        let len = input.rows();
        let left = self.left_pad();
        let mut padded = Tensor2D::zeros(len + self.kernel_size - 1, self.in_channels);
        for t in 0..len {
            padded.row_mut(t + left).copy_from_slice(input.row(t));
        }
        padded
    }

    fn window<'a>(&self, padded: &'a Tensor2D<T>, t: usize) -> &'a [T] {
        let c = self.in_channels;
        &padded.as_slice()[t * c..(t + self.kernel_size) * c]
    }
}

impl<T: Scalar> Layer<T> for Conv1d<T> {
    type Cache = ConvCache<T>;

    fn forward(&self, input: &Tensor2D<T>) -> Result<(Tensor2D<T>, ConvCache<T>)> {
        if input.cols() != self.in_channels {
            return Err(Error::ShapeMismatch {
                expected: format!("{} input channels", self.in_channels),
                found: format!("{}", input.cols()),
            });
        }
        if self.kernel_size == 0 || input.rows() == 0 {
            return Err(Error::InvalidArgument(format!(
                "kernel size {} does not fit a sequence of length {}",
                self.kernel_size,
                input.rows()
            )));
        }
        let padded = self.pad(input);
        let mut output = Tensor2D::zeros(input.rows(), self.filters);
        for t in 0..input.rows() {
            let win = self.window(&padded, t);
            let out = output.row_mut(t);
            for (f, o) in out.iter_mut().enumerate() {
                *o = self
                    .activation
                    .apply(self.bias.values[f] + dot(self.weight.row(f), win));
            }
        }
        Ok((output.clone(), ConvCache { padded, output }))
    }

    fn backward(&self, cache: &ConvCache<T>, grad_out: &Tensor2D<T>, grads: &mut [Vec<T>]) -> Tensor2D<T> {
        let (gw, gb) = grads.split_at_mut(1);
        let (gw, gb) = (&mut gw[0], &mut gb[0]);
        let width = self.kernel_size * self.in_channels;
        let c = self.in_channels;
        let mut dpadded = Tensor2D::zeros(cache.padded.rows(), c);
        for t in 0..grad_out.rows() {
            let win = self.window(&cache.padded, t);
            for f in 0..self.filters {
                let d = grad_out.get(t, f) * self.activation.derivative_from_output(cache.output.get(t, f));
                if d == T::zero() {
                    continue;
                }
                gb[f] += d;
                axpy(&mut gw[f * width..(f + 1) * width], d, win);
                axpy(
                    &mut dpadded.as_mut_slice()[t * c..(t + self.kernel_size) * c],
                    d,
                    self.weight.row(f),
                );
            }
        }
        let left = self.left_pad();
        let mut dx = Tensor2D::zeros(grad_out.rows(), c);
        for t in 0..grad_out.rows() {
            dx.row_mut(t).copy_from_slice(dpadded.row(t + left));
        }
        dx
    }

    fn params(&self) -> Vec<&ParamBlock<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut ParamBlock<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Parallel convolution branches (one per kernel size) concatenated
/// channel-wise at every time step.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock<T> {
    pub branches: Vec<Conv1d<T>>,
}

pub struct ConvBlockCache<T> {
    branches: Vec<ConvCache<T>>,
}

impl<T: Scalar> ConvBlock<T> {
    pub fn new<R: Rng>(kernel_sizes: &[usize], in_channels: usize, filters: usize, rng: &mut R) -> Self {
        ConvBlock {
            branches: kernel_sizes
                .iter()
                .map(|&k| Conv1d::new(k, in_channels, filters, Activation::Relu, rng))
                .collect(),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.branches.iter().map(|b| b.filters).sum()
    }
}

impl<T: Scalar> Layer<T> for ConvBlock<T> {
    type Cache = ConvBlockCache<T>;

    fn forward(&self, input: &Tensor2D<T>) -> Result<(Tensor2D<T>, ConvBlockCache<T>)> {
        let mut outs = Vec::with_capacity(self.branches.len());
        let mut caches = Vec::with_capacity(self.branches.len());
        for b in &self.branches {
            let (o, c) = b.forward(input)?;
            outs.push(o);
            caches.push(c);
        }
        Ok((Tensor2D::concat_cols(&outs)?, ConvBlockCache { branches: caches }))
    }

    fn backward(&self, cache: &ConvBlockCache<T>, grad_out: &Tensor2D<T>, grads: &mut [Vec<T>]) -> Tensor2D<T> {
        let widths: Vec<usize> = self.branches.iter().map(|b| b.filters).collect();
        let parts = grad_out.split_cols(&widths);
        let mut dx: Option<Tensor2D<T>> = None;
        for (i, ((b, c), g)) in self.branches.iter().zip(&cache.branches).zip(&parts).enumerate() {
            let d = b.backward(c, g, &mut grads[2 * i..2 * i + 2]);
            match dx.as_mut() {
                Some(acc) => acc.add_assign(&d),
                None => dx = Some(d),
            }
        }
        dx.expect("conv block has at least one branch")
    }

    fn params(&self) -> Vec<&ParamBlock<T>> {
        self.branches.iter().flat_map(|b| b.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut ParamBlock<T>> {
        self.branches.iter_mut().flat_map(|b| b.params_mut()).collect()
    }
}
