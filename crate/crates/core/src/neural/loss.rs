use crate::scalar::Scalar;

/// Output of [`softmax_cross_entropy`].
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxLoss<T> {
    pub probabilities: Vec<T>,
    pub loss: T,
    /// `p - onehot(target)`
    pub logit_grad: Vec<T>,
}

pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Softmax followed by categorical cross-entropy against class `target`.
///
/// The loss is computed as `logsumexp(z) - z_target` so it stays finite even
/// when the target probability underflows.
pub fn softmax_cross_entropy<T: Scalar>(logits: &[T], target: usize) -> SoftmaxLoss<T> {
    assert!(target < logits.len(), "target class {target} out of range");
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = logits.iter().map(|&z| (z - max).exp()).sum();
    let log_norm = max + sum.ln();
    let probabilities: Vec<T> = logits.iter().map(|&z| (z - max).exp() / sum).collect();
    let mut logit_grad = probabilities.clone();
    logit_grad[target] -= T::one();
    SoftmaxLoss {
        loss: log_norm - logits[target],
        probabilities,
        logit_grad,
    }
}
