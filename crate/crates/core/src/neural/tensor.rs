use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major matrix; rows are time steps, columns are channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2D<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Tensor2D<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2D {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{rows}x{cols} = {} values", rows * cols),
                found: format!("{} values", data.len()),
            });
        }
        Ok(Tensor2D { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Tensor2D { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    /// Concatenate along the channel axis. All parts must share a row count.
    pub fn concat_cols(parts: &[Tensor2D<T>]) -> Result<Self> {
        let rows = parts.first().map_or(0, |p| p.rows);
        if let Some(bad) = parts.iter().find(|p| p.rows != rows) {
            return Err(Error::ShapeMismatch {
                expected: format!("{rows} rows"),
                found: format!("{} rows", bad.rows),
            });
        }
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut out = Self::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            let dst = out.row_mut(r);
            for p in parts {
                dst[off..off + p.cols].copy_from_slice(p.row(r));
                off += p.cols;
            }
        }
        Ok(out)
    }

    /// Inverse of [`concat_cols`](Self::concat_cols) for the given widths.
    pub fn split_cols(&self, widths: &[usize]) -> Vec<Tensor2D<T>> {
        debug_assert_eq!(widths.iter().sum::<usize>(), self.cols);
        let mut out: Vec<_> = widths.iter().map(|&w| Self::zeros(self.rows, w)).collect();
        for r in 0..self.rows {
            let src = self.row(r);
            let mut off = 0;
            for (part, &w) in out.iter_mut().zip(widths) {
                part.row_mut(r).copy_from_slice(&src[off..off + w]);
                off += w;
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Tensor2D<T>) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor2D {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}
