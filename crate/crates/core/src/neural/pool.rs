use super::Tensor2D;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Global max over time. Returns the `1 x C` pooled row and, per channel,
/// the first time step holding the maximum.
pub fn maxpool_time<T: Scalar>(input: &Tensor2D<T>) -> Result<(Tensor2D<T>, Vec<usize>)> {
    if input.rows() == 0 {
        return Err(Error::InvalidArgument(
            "max pooling needs at least one time step".into(),
        ));
    }
    let cols = input.cols();
    let mut best = input.row(0).to_vec();
    let mut argmax = vec![0usize; cols];
    for t in 1..input.rows() {
        for (c, &v) in input.row(t).iter().enumerate() {
            if v > best[c] {
                best[c] = v;
                argmax[c] = t;
            }
        }
    }
    Ok((Tensor2D::from_vec(1, cols, best)?, argmax))
}

/// Routes each channel's gradient to its argmax step.
pub fn maxpool_time_backward<T: Scalar>(rows: usize, argmax: &[usize], grad_out: &Tensor2D<T>) -> Tensor2D<T> {
    let mut dx = Tensor2D::zeros(rows, argmax.len());
    for (c, &t) in argmax.iter().enumerate() {
        dx.set(t, c, grad_out.get(0, c));
    }
    dx
}
