use super::{
    maxpool_time, maxpool_time_backward, softmax, softmax_cross_entropy, ConvBlock, Dense, Gradients, Layer, Lstm,
    Objective, ParamBlock, Tensor2D,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A sequence-to-sequence stage of the stack.
#[derive(Debug, Clone, PartialEq)]
pub enum SequenceStage<T> {
    Conv(ConvBlock<T>),
    Lstm(Lstm<T>),
}

enum StageCache<T: Scalar> {
    Conv(<ConvBlock<T> as Layer<T>>::Cache),
    Lstm(<Lstm<T> as Layer<T>>::Cache),
}

impl<T: Scalar> SequenceStage<T> {
    fn params(&self) -> Vec<&ParamBlock<T>> {
        match self {
            SequenceStage::Conv(c) => c.params(),
            SequenceStage::Lstm(l) => l.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut ParamBlock<T>> {
        match self {
            SequenceStage::Conv(c) => c.params_mut(),
            SequenceStage::Lstm(l) => l.params_mut(),
        }
    }

    pub fn out_channels(&self) -> usize {
        match self {
            SequenceStage::Conv(c) => c.out_channels(),
            SequenceStage::Lstm(l) => l.hidden_size,
        }
    }
}

/// Sequence stages, then global max pooling over time, then a dense head
/// whose last layer produces logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub input_dim: usize,
    pub stages: Vec<SequenceStage<T>>,
    pub head: Vec<Dense<T>>,
}

struct ForwardCache<T: Scalar> {
    stages: Vec<StageCache<T>>,
    pooled_rows: usize,
    argmax: Vec<usize>,
    head: Vec<<Dense<T> as Layer<T>>::Cache>,
}

impl<T: Scalar> Network<T> {
    pub fn num_classes(&self) -> usize {
        self.head.last().map_or(0, |d| d.units)
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn run(&self, input: &Tensor2D<T>, trace: Option<&mut Vec<(usize, usize)>>) -> Result<(Vec<T>, ForwardCache<T>)> {
        if input.cols() != self.input_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("{} input columns", self.input_dim),
                found: format!("{}", input.cols()),
            });
        }
        let mut shapes = Vec::new();
        shapes.push(input.shape());
        let mut x = input.clone();
        let mut stage_caches = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let (y, c) = match stage {
                SequenceStage::Conv(b) => {
                    let (y, c) = b.forward(&x)?;
                    (y, StageCache::Conv(c))
                }
                SequenceStage::Lstm(l) => {
                    let (y, c) = l.forward(&x)?;
                    (y, StageCache::Lstm(c))
                }
            };
            shapes.push(y.shape());
            stage_caches.push(c);
            x = y;
        }
        let pooled_rows = x.rows();
        let (mut v, argmax) = maxpool_time(&x)?;
        shapes.push(v.shape());
        let mut head_caches = Vec::with_capacity(self.head.len());
        for d in &self.head {
            let (y, c) = d.forward(&v)?;
            shapes.push(y.shape());
            head_caches.push(c);
            v = y;
        }
        if let Some(t) = trace {
            *t = shapes;
        }
        Ok((
            v.into_vec(),
            ForwardCache {
                stages: stage_caches,
                pooled_rows,
                argmax,
                head: head_caches,
            },
        ))
    }

    pub fn logits(&self, input: &Tensor2D<T>) -> Result<Vec<T>> {
        self.run(input, None).map(|(z, _)| z)
    }

    pub fn probabilities(&self, input: &Tensor2D<T>) -> Result<Vec<T>> {
        self.logits(input).map(|z| softmax(&z))
    }

    /// Shapes after the input, each stage, pooling and each dense layer.
    pub fn shape_trace(&self, input: &Tensor2D<T>) -> Result<Vec<(usize, usize)>> {
        let mut trace = Vec::new();
        self.run(input, Some(&mut trace))?;
        Ok(trace)
    }

    /// Loss, class probabilities and the full parameter gradient for one example.
    pub fn backprop(&self, input: &Tensor2D<T>, target: usize) -> Result<(T, Vec<T>, Gradients<T>)> {
        let (logits, cache) = self.run(input, None)?;
        if target >= logits.len() {
            return Err(Error::InvalidArgument(format!("target class {target} out of range")));
        }
        let out = softmax_cross_entropy(&logits, target);
        let params = self.params();
        let mut grads = Gradients::zeros_like(&params);

        let mut offsets = Vec::new();
        let mut off = 0;
        for s in &self.stages {
            offsets.push(off);
            off += s.params().len();
        }
        let head_offset = off;

        let mut g = Tensor2D::from_vec(1, out.logit_grad.len(), out.logit_grad.clone())?;
        for (i, d) in self.head.iter().enumerate().rev() {
            let start = head_offset + 2 * i;
            g = d.backward(&cache.head[i], &g, &mut grads.blocks[start..start + 2]);
        }
        let mut g = maxpool_time_backward(cache.pooled_rows, &cache.argmax, &g);
        for (i, stage) in self.stages.iter().enumerate().rev() {
            let n = stage.params().len();
            let slot = &mut grads.blocks[offsets[i]..offsets[i] + n];
            g = match (stage, &cache.stages[i]) {
                (SequenceStage::Conv(b), StageCache::Conv(c)) => b.backward(c, &g, slot),
                (SequenceStage::Lstm(l), StageCache::Lstm(c)) => l.backward(c, &g, slot),
                _ => unreachable!("cache kinds follow stage kinds"),
            };
        }
        Ok((out.loss, out.probabilities, grads))
    }

    pub fn params(&self) -> Vec<&ParamBlock<T>> {
        self.stages
            .iter()
            .flat_map(|s| s.params())
            .chain(self.head.iter().flat_map(|d| d.params()))
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamBlock<T>> {
        let mut out: Vec<&mut ParamBlock<T>> = Vec::new();
        for s in &mut self.stages {
            out.extend(s.params_mut());
        }
        for d in &mut self.head {
            out.extend(d.params_mut());
        }
        out
    }
}

impl<T: Scalar> Objective<T> for Network<T> {
    fn params(&self) -> Vec<&ParamBlock<T>> {
        Network::params(self)
    }

    fn params_mut(&mut self) -> Vec<&mut ParamBlock<T>> {
        Network::params_mut(self)
    }

    fn loss(&self, input: &Tensor2D<T>, target: usize) -> Result<T> {
        let z = self.logits(input)?;
        Ok(softmax_cross_entropy(&z, target).loss)
    }

    fn loss_and_grad(&self, input: &Tensor2D<T>, target: usize) -> Result<(T, Gradients<T>)> {
        self.backprop(input, target).map(|(l, _, g)| (l, g))
    }
}
