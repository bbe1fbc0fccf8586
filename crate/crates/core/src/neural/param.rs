use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One trainable tensor (weight matrix or bias row).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock<T> {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<T>,
}

impl<T: Scalar> ParamBlock<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        ParamBlock {
            rows,
            cols,
            values: vec![T::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, v: T) -> Self {
        ParamBlock {
            rows,
            cols,
            values: vec![v; rows * cols],
        }
    }

    /// Uniform in `[-limit, limit]` with the Glorot limit `sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot<R: Rng>(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let values = (0..rows * cols).map(|_| T::of(rng.gen_range(-limit..=limit))).collect();
        ParamBlock { rows, cols, values }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Gradient accumulators aligned one-to-one with a model's parameter blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub blocks: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(params: &[&ParamBlock<T>]) -> Self {
        Gradients {
            blocks: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
        }
    }

    /// Elementwise sum; `other` must have the same layout.
    pub fn accumulate(&mut self, other: &Gradients<T>) -> Result<()> {
        check_layout(&self.blocks, &other.blocks)?;
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for b in &mut self.blocks {
            for x in b.iter_mut() {
                *x *= s;
            }
        }
    }

    pub fn max_abs(&self) -> T {
        self.blocks.iter().flatten().fold(T::zero(), |m, &v| m.max(v.abs()))
    }
}

pub(crate) fn check_layout<T>(a: &[Vec<T>], b: &[Vec<T>]) -> Result<()> {
    let sa: Vec<usize> = a.iter().map(Vec::len).collect();
    let sb: Vec<usize> = b.iter().map(Vec::len).collect();
    if sa != sb {
        return Err(Error::ShapeMismatch {
            expected: format!("{sa:?}"),
            found: format!("{sb:?}"),
        });
    }
    Ok(())
}
