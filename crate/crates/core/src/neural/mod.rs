//! Small tensor and layer kernel with exact backpropagation.
//!
//! Every layer implements [`Layer`]: `forward` returns the output together
//! with whatever the backward pass needs, and `backward` maps an upstream
//! gradient to the input gradient while adding parameter gradients into the
//! caller's buffers. Gradient buffers are laid out in `params()` order.

mod conv;
mod dense;
mod gradcheck;
mod loss;
mod lstm;
mod network;
mod optim;
mod param;
mod pool;
mod tensor;

use serde::{Deserialize, Serialize};

pub use conv::{Conv1d, ConvBlock};
pub use dense::Dense;
pub use gradcheck::{
    finite_difference_check, numeric_input_gradient, relative_error, GradCheckReport, Objective, ABSOLUTE_FLOOR,
    DEFAULT_EPSILON,
};
pub use loss::{softmax, softmax_cross_entropy, SoftmaxLoss};
pub use lstm::Lstm;
pub use network::{Network, SequenceStage};
pub use optim::{adam_update, AdamConfig, OptimizerState};
pub use param::{Gradients, ParamBlock};
pub use pool::{maxpool_time, maxpool_time_backward};
pub use tensor::Tensor2D;

use crate::error::Result;
use crate::scalar::Scalar;

pub trait Layer<T: Scalar> {
    type Cache;

    fn forward(&self, input: &Tensor2D<T>) -> Result<(Tensor2D<T>, Self::Cache)>;

    /// `grads` holds exactly one buffer per entry of [`params`](Layer::params).
    fn backward(&self, cache: &Self::Cache, grad_out: &Tensor2D<T>, grads: &mut [Vec<T>]) -> Tensor2D<T>;

    fn params(&self) -> Vec<&ParamBlock<T>>;

    fn params_mut(&mut self) -> Vec<&mut ParamBlock<T>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    pub fn derivative_from_output<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Identity => T::one(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor2D<f64> {
        Tensor2D::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    /// Loss `sum(layer(x))`, i.e. an upstream gradient of ones.
    struct SumOf<'a, L> {
        layer: L,
        input: &'a Tensor2D<f64>,
    }

    impl<L: Layer<f64>> Objective<f64> for SumOf<'_, L> {
        fn params(&self) -> Vec<&ParamBlock<f64>> {
            self.layer.params()
        }
        fn params_mut(&mut self) -> Vec<&mut ParamBlock<f64>> {
            self.layer.params_mut()
        }
        fn loss(&self, _: &Tensor2D<f64>, _: usize) -> Result<f64> {
            Ok(self.layer.forward(self.input)?.0.as_slice().iter().sum())
        }
        fn loss_and_grad(&self, _: &Tensor2D<f64>, _: usize) -> Result<(f64, Gradients<f64>)> {
            let (y, cache) = self.layer.forward(self.input)?;
            let ones = Tensor2D::from_fn(y.rows(), y.cols(), |_, _| 1.0);
            let mut g = Gradients::zeros_like(&self.layer.params());
            self.layer.backward(&cache, &ones, &mut g.blocks);
            Ok((y.as_slice().iter().sum(), g))
        }
    }

    fn input_grad_error<L: Layer<f64>>(layer: &L, x: &Tensor2D<f64>) -> f64 {
        let (y, cache) = layer.forward(x).unwrap();
        let ones = Tensor2D::from_fn(y.rows(), y.cols(), |_, _| 1.0);
        let mut g = Gradients::zeros_like(&layer.params());
        let analytic = layer.backward(&cache, &ones, &mut g.blocks);
        let numeric = numeric_input_gradient(x, DEFAULT_EPSILON, |xi| {
            Ok(layer.forward(xi)?.0.as_slice().iter().sum())
        })
        .unwrap();
        analytic
            .as_slice()
            .iter()
            .zip(numeric.as_slice())
            .map(|(&a, &n)| relative_error(a, n))
            .fold(0.0, f64::max)
    }

    #[test]
    fn conv_identity_kernel() {
        let mut conv = Conv1d::<f64>::zeros(1, 3, 3, Activation::Relu);
        for f in 0..3 {
            conv.weight.values[f * 3 + f] = 1.0;
        }
        let x = Tensor2D::from_fn(4, 3, |r, c| (r + c) as f64 * 0.5);
        let (y, _) = conv.forward(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_same_padding_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let block = ConvBlock::<f64>::new(&[1, 2], 20, 7, &mut rng);
        let x = random_tensor(15, 20, &mut rng);
        let (y, _) = block.forward(&x).unwrap();
        assert_eq!(y.shape(), (15, 14));
        let empty = Tensor2D::<f64>::zeros(0, 20);
        assert!(block.forward(&empty).is_err());
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_tensor(5, 3, &mut rng);
        let conv = Conv1d::new(2, 3, 4, Activation::Relu, &mut rng);
        assert!(input_grad_error(&conv, &x) < 1e-6);
        let mut obj = SumOf { layer: conv, input: &x };
        let r = finite_difference_check(&mut obj, &x, 0, DEFAULT_EPSILON).unwrap();
        assert!(r.max_relative_error < 1e-6, "{r:?}");
    }

    #[test]
    fn lstm_zero_fixed_point() {
        let lstm = Lstm::<f64>::zeros(3, 4);
        let (y, _) = lstm.forward(&Tensor2D::zeros(5, 3)).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_single_step_matches_cell_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lstm = Lstm::<f64>::new(2, 1, &mut rng);
        let x = [0.3, -0.7];
        let (y, _) = lstm.forward(&Tensor2D::from_vec(1, 2, x.to_vec()).unwrap()).unwrap();
        let z =
            |r: usize| lstm.bias.values[r] + lstm.w_input.values[2 * r] * x[0] + lstm.w_input.values[2 * r + 1] * x[1];
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let c = sig(z(0)) * z(2).tanh();
        let h = sig(z(3)) * c.tanh();
        assert!((y.get(0, 0) - h).abs() < 1e-15);
    }

    #[test]
    fn lstm_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_tensor(4, 3, &mut rng);
        let lstm = Lstm::new(3, 5, &mut rng);
        assert!(input_grad_error(&lstm, &x) < 1e-6);
        let mut obj = SumOf { layer: lstm, input: &x };
        let r = finite_difference_check(&mut obj, &x, 0, DEFAULT_EPSILON).unwrap();
        assert!(r.max_relative_error < 1e-6, "{r:?}");
    }

    #[test]
    fn dense_identity_and_relu() {
        let mut d = Dense::<f64>::zeros(3, 3, Activation::Identity);
        for i in 0..3 {
            d.weight.values[i * 3 + i] = 1.0;
        }
        let x = Tensor2D::from_vec(1, 3, vec![-1.0, 2.0, 0.5]).unwrap();
        assert_eq!(d.forward(&x).unwrap().0, x);
        d.activation = Activation::Relu;
        let neg = Tensor2D::from_vec(1, 3, vec![-1.0, -2.0, -0.5]).unwrap();
        assert!(d.forward(&neg).unwrap().0.as_slice().iter().all(|&v| v == 0.0));
        assert!(d.forward(&Tensor2D::zeros(1, 4)).is_err());
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_tensor(1, 4, &mut rng);
        for act in [Activation::Identity, Activation::Relu] {
            let d = Dense::new(4, 3, act, &mut rng);
            assert!(input_grad_error(&d, &x) < 1e-6);
            let mut obj = SumOf { layer: d, input: &x };
            let r = finite_difference_check(&mut obj, &x, 0, DEFAULT_EPSILON).unwrap();
            assert!(r.max_relative_error < 1e-6, "{act:?} {r:?}");
        }
    }

    #[test]
    fn maxpool_basics() {
        let x = Tensor2D::from_vec(1, 2, vec![4.0, -1.0]).unwrap();
        assert_eq!(maxpool_time(&x).unwrap().0, x);
        let col = Tensor2D::from_vec(3, 1, vec![1.0, 3.0, 2.0]).unwrap();
        assert_eq!(maxpool_time(&col).unwrap().0.get(0, 0), 3.0);
        let tie = Tensor2D::from_vec(2, 1, vec![2.0, 2.0]).unwrap();
        let (_, idx) = maxpool_time(&tie).unwrap();
        let g = maxpool_time_backward(2, &idx, &Tensor2D::from_vec(1, 1, vec![1.0]).unwrap());
        assert_eq!(g.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn softmax_cases() {
        let out = softmax_cross_entropy(&[0.0f64, 0.0, 0.0], 1);
        for p in &out.probabilities {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((out.loss - 3f64.ln()).abs() < 1e-15);
        let big = softmax_cross_entropy(&[1000.0f64, 0.0, 0.0], 0);
        assert!((big.probabilities[0] - 1.0).abs() < 1e-15);
        assert!(big.loss.is_finite() && big.loss >= 0.0);
        let far = softmax_cross_entropy(&[1000.0f64, 0.0, 0.0], 2);
        assert!((far.loss - 1000.0).abs() < 1e-9);
        assert_eq!(far.logit_grad[2], -1.0);
    }

    #[test]
    fn adam_zero_grad_and_step_counter() {
        let mut p = ParamBlock::<f64>::filled(2, 2, 0.5);
        let before = p.clone();
        let grads = Gradients {
            blocks: vec![vec![0.0; 4]],
        };
        let mut st = OptimizerState::new(&[&p], AdamConfig::default());
        adam_update(&mut [&mut p], &grads, &mut st).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step(), 1);
        adam_update(&mut [&mut p], &grads, &mut st).unwrap();
        assert_eq!(st.step(), 2);
        let bad = Gradients {
            blocks: vec![vec![0.0; 3]],
        };
        assert!(adam_update(&mut [&mut p], &bad, &mut st).is_err());
    }

    #[test]
    fn adam_converges_on_quadratic() {
        // f(w) = (w - 3)^2
        let mut p = ParamBlock::<f64>::zeros(1, 1);
        let cfg = AdamConfig {
            learning_rate: 0.05,
            ..AdamConfig::default()
        };
        let mut st = OptimizerState::new(&[&p], cfg);
        for _ in 0..500 {
            let g = Gradients {
                blocks: vec![vec![2.0 * (p.values[0] - 3.0)]],
            };
            adam_update(&mut [&mut p], &g, &mut st).unwrap();
        }
        assert!((p.values[0] - 3.0).abs() < 1e-3, "{}", p.values[0]);
    }

    /// `loss = w . x + b` is linear in the parameters.
    struct Linear {
        w: ParamBlock<f64>,
        b: ParamBlock<f64>,
    }

    impl Objective<f64> for Linear {
        fn params(&self) -> Vec<&ParamBlock<f64>> {
            vec![&self.w, &self.b]
        }
        fn params_mut(&mut self) -> Vec<&mut ParamBlock<f64>> {
            vec![&mut self.w, &mut self.b]
        }
        fn loss(&self, x: &Tensor2D<f64>, _: usize) -> Result<f64> {
            Ok(crate::scalar::dot(&self.w.values, x.as_slice()) + self.b.values[0])
        }
        fn loss_and_grad(&self, x: &Tensor2D<f64>, t: usize) -> Result<(f64, Gradients<f64>)> {
            Ok((
                self.loss(x, t)?,
                Gradients {
                    blocks: vec![x.as_slice().to_vec(), vec![1.0]],
                },
            ))
        }
    }

    #[test]
    fn gradcheck_linear_model_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_tensor(1, 6, &mut rng);
        let mut m = Linear {
            w: ParamBlock::glorot(1, 6, 6, 1, &mut rng),
            b: ParamBlock::zeros(1, 1),
        };
        let r = finite_difference_check(&mut m, &x, 0, DEFAULT_EPSILON).unwrap();
        assert!(r.max_relative_error < 1e-9, "{r:?}");
        assert_eq!(r.parameters_checked, 7);
        assert!(finite_difference_check(&mut m, &x, 0, 0.0).is_err());
    }

    #[test]
    fn generic_over_f32() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lstm = Lstm::<f32>::new(3, 2, &mut rng);
        let x = Tensor2D::<f32>::from_fn(4, 3, |r, c| (r as f32 - c as f32) * 0.1);
        let (y, _) = lstm.forward(&x).unwrap();
        assert_eq!(y.shape(), (4, 2));
        assert!(y.as_slice().iter().all(|v| v.abs() < 1.0));
    }
}
