use rand::Rng;

use super::{Layer, ParamBlock, Tensor2D};
use crate::error::{Error, Result};
use crate::scalar::{axpy, dot, sigmoid, Scalar};

/// Single-layer LSTM returning the full hidden sequence.
///
/// Gate rows are stacked in the order input, forget, cell candidate, output:
/// row `g * hidden + j` of each weight block belongs to gate `g`, unit `j`.
/// Initial hidden and cell states are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm<T> {
    pub input_size: usize,
    pub hidden_size: usize,
    /// `4H x C`
    pub w_input: ParamBlock<T>,
    /// `4H x H`
    pub w_hidden: ParamBlock<T>,
    /// `1 x 4H`
    pub bias: ParamBlock<T>,
}

pub struct LstmCache<T> {
    input: Tensor2D<T>,
    /// Activated gates per step, `L x 4H`.
    gates: Tensor2D<T>,
    cells: Tensor2D<T>,
    cell_tanh: Tensor2D<T>,
    hidden: Tensor2D<T>,
}

const INPUT: usize = 0;
const FORGET: usize = 1;
const CANDIDATE: usize = 2;
const OUTPUT: usize = 3;

impl<T: Scalar> Lstm<T> {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        Lstm {
            input_size,
            hidden_size,
            w_input: ParamBlock::zeros(4 * hidden_size, input_size),
            w_hidden: ParamBlock::zeros(4 * hidden_size, hidden_size),
            bias: ParamBlock::zeros(1, 4 * hidden_size),
        }
    }

    /// Glorot-initialised weights, forget-gate bias set to one.
    pub fn new<R: Rng>(input_size: usize, hidden_size: usize, rng: &mut R) -> Self {
        let h = hidden_size;
        let mut bias = ParamBlock::zeros(1, 4 * h);
        for v in &mut bias.values[FORGET * h..(FORGET + 1) * h] {
            *v = T::one();
        }
        Lstm {
            input_size,
            hidden_size,
            w_input: ParamBlock::glorot(4 * h, input_size, input_size, 4 * h, rng),
            w_hidden: ParamBlock::glorot(4 * h, h, h, 4 * h, rng),
            bias,
        }
    }

    /// One recurrence step; returns `(gates, c, tanh(c), h)`.
    fn step(&self, x: &[T], h_prev: &[T], c_prev: &[T]) -> (Vec<T>, Vec<T>, Vec<T>, Vec<T>) {
        let h = self.hidden_size;
        let mut gates = vec![T::zero(); 4 * h];
        for (r, g) in gates.iter_mut().enumerate() {
            let z = self.bias.values[r] + dot(self.w_input.row(r), x) + dot(self.w_hidden.row(r), h_prev);
            *g = if r / h == CANDIDATE { z.tanh() } else { sigmoid(z) };
        }
        let mut c = vec![T::zero(); h];
        let mut ct = vec![T::zero(); h];
        let mut hn = vec![T::zero(); h];
        for j in 0..h {
            c[j] = gates[FORGET * h + j] * c_prev[j] + gates[INPUT * h + j] * gates[CANDIDATE * h + j];
            ct[j] = c[j].tanh();
            hn[j] = gates[OUTPUT * h + j] * ct[j];
        }
        (gates, c, ct, hn)
    }
}

impl<T: Scalar> Layer<T> for Lstm<T> {
    type Cache = LstmCache<T>;

    fn forward(&self, input: &Tensor2D<T>) -> Result<(Tensor2D<T>, LstmCache<T>)> {
        if input.cols() != self.input_size {
            return Err(Error::ShapeMismatch {
                expected: format!("{} input features", self.input_size),
                found: format!("{}", input.cols()),
            });
        }
        if input.rows() == 0 {
            return Err(Error::InvalidArgument(
                "LSTM input must have at least one time step".into(),
            ));
        }
        let (len, h) = (input.rows(), self.hidden_size);
        let mut gates = Tensor2D::zeros(len, 4 * h);
        let mut cells = Tensor2D::zeros(len, h);
        let mut cell_tanh = Tensor2D::zeros(len, h);
        let mut hidden = Tensor2D::zeros(len, h);
        let zeros = vec![T::zero(); h];
        for t in 0..len {
            let (h_prev, c_prev) = if t == 0 {
                (zeros.as_slice(), zeros.as_slice())
            } else {
                (hidden.row(t - 1), cells.row(t - 1))
            };
            let (g, c, ct, hn) = self.step(input.row(t), h_prev, c_prev);
            gates.row_mut(t).copy_from_slice(&g);
            cells.row_mut(t).copy_from_slice(&c);
            cell_tanh.row_mut(t).copy_from_slice(&ct);
            hidden.row_mut(t).copy_from_slice(&hn);
        }
        Ok((
            hidden.clone(),
            LstmCache {
                input: input.clone(),
                gates,
                cells,
                cell_tanh,
                hidden,
            },
        ))
    }

    fn backward(&self, cache: &LstmCache<T>, grad_out: &Tensor2D<T>, grads: &mut [Vec<T>]) -> Tensor2D<T> {
        let (len, h) = (grad_out.rows(), self.hidden_size);
        let c_in = self.input_size;
        let [gwx, gwh, gb] = grads else {
            panic!("LSTM expects three gradient blocks");
        };
        let mut dx = Tensor2D::zeros(len, c_in);
        let mut dh_next = vec![T::zero(); h];
        let mut dc_next = vec![T::zero(); h];
        let mut dz = vec![T::zero(); 4 * h];
        let zeros = vec![T::zero(); h];
        let one = T::one();

        for t in (0..len).rev() {
            let g = cache.gates.row(t);
            let ct = cache.cell_tanh.row(t);
            let c_prev = if t == 0 {
                zeros.as_slice()
            } else {
                cache.cells.row(t - 1)
            };
            let h_prev = if t == 0 {
                zeros.as_slice()
            } else {
                cache.hidden.row(t - 1)
            };
            for j in 0..h {
                let (i, f, cand, o) = (
                    g[INPUT * h + j],
                    g[FORGET * h + j],
                    g[CANDIDATE * h + j],
                    g[OUTPUT * h + j],
                );
                let dh = grad_out.get(t, j) + dh_next[j];
                let d_o = dh * ct[j];
                let dc = dh * o * (one - ct[j] * ct[j]) + dc_next[j];
                let di = dc * cand;
                let dcand = dc * i;
                let df = dc * c_prev[j];
                dc_next[j] = dc * f;
                dz[INPUT * h + j] = di * i * (one - i);
                dz[FORGET * h + j] = df * f * (one - f);
                dz[CANDIDATE * h + j] = dcand * (one - cand * cand);
                dz[OUTPUT * h + j] = d_o * o * (one - o);
            }
            dh_next.iter_mut().for_each(|v| *v = T::zero());
            let x = cache.input.row(t);
            let dx_row = dx.row_mut(t);
            for (r, &d) in dz.iter().enumerate() {
                if d == T::zero() {
                    continue;
                }
                gb[r] += d;
                axpy(&mut gwx[r * c_in..(r + 1) * c_in], d, x);
                axpy(&mut gwh[r * h..(r + 1) * h], d, h_prev);
                axpy(dx_row, d, self.w_input.row(r));
                axpy(&mut dh_next, d, self.w_hidden.row(r));
            }
        }
        dx
    }

    fn params(&self) -> Vec<&ParamBlock<T>> {
        vec![&self.w_input, &self.w_hidden, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut ParamBlock<T>> {
        vec![&mut self.w_input, &mut self.w_hidden, &mut self.bias]
    }
}
