use rand::Rng;

use super::dense::{axpy, dot};
use super::params::{join, Parameters};
use crate::error::{Error, Result};

/// LSTM cell with the four gates stacked in one matrix.
///
/// Rows `[0, H)` hold the input gate, `[H, 2H)` the forget gate, `[2H, 3H)`
/// the cell candidate and `[3H, 4H)` the output gate. Each row acts on the
/// concatenation `[x; h]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub input_size: usize,
    pub hidden_size: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden_size: usize) -> Self {
        LstmState {
            hidden: vec![0.0; hidden_size],
            cell: vec![0.0; hidden_size],
        }
    }
}

#[derive(Debug, Clone)]
pub struct LstmStepCache {
    /// `[x; h_prev]`
    joint: Vec<f64>,
    cell_prev: Vec<f64>,
    input_gate: Vec<f64>,
    forget_gate: Vec<f64>,
    candidate: Vec<f64>,
    output_gate: Vec<f64>,
    cell_tanh: Vec<f64>,
}

/// Gradients flowing out of one backward step.
#[derive(Debug, Clone)]
pub struct LstmStepGrad {
    pub input: Vec<f64>,
    pub hidden_prev: Vec<f64>,
    pub cell_prev: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl LstmCell {
    pub fn new<R: Rng + ?Sized>(input_size: usize, hidden_size: usize, rng: &mut R) -> Self {
        let cols = input_size + hidden_size;
        let limit = (6.0 / (cols + hidden_size) as f64).sqrt();
        LstmCell {
            input_size,
            hidden_size,
            weights: (0..4 * hidden_size * cols)
                .map(|_| rng.random_range(-limit..limit))
                .collect(),
            bias: vec![0.0; 4 * hidden_size],
        }
    }

    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        LstmCell {
            input_size,
            hidden_size,
            weights: vec![0.0; 4 * hidden_size * (input_size + hidden_size)],
            bias: vec![0.0; 4 * hidden_size],
        }
    }

    fn cols(&self) -> usize {
        self.input_size + self.hidden_size
    }

    pub fn step(&self, input: &[f64], state: &LstmState) -> Result<(LstmState, LstmStepCache)> {
        let h = self.hidden_size;
        if input.len() != self.input_size || state.hidden.len() != h || state.cell.len() != h {
            return Err(Error::shape(format!(
                "LSTM expects input {} / hidden {}, got input {} / hidden {} / cell {}",
                self.input_size,
                h,
                input.len(),
                state.hidden.len(),
                state.cell.len()
            )));
        }
        let cols = self.cols();
        let mut joint = Vec::with_capacity(cols);
        joint.extend_from_slice(input);
        joint.extend_from_slice(&state.hidden);

        let pre = |row: usize| dot(&self.weights[row * cols..(row + 1) * cols], &joint) + self.bias[row];
        let input_gate: Vec<f64> = (0..h).map(|j| sigmoid(pre(j))).collect();
        let forget_gate: Vec<f64> = (0..h).map(|j| sigmoid(pre(h + j))).collect();
        let candidate: Vec<f64> = (0..h).map(|j| pre(2 * h + j).tanh()).collect();
        let output_gate: Vec<f64> = (0..h).map(|j| sigmoid(pre(3 * h + j))).collect();

        let cell: Vec<f64> = (0..h)
            .map(|j| forget_gate[j] * state.cell[j] + input_gate[j] * candidate[j])
            .collect();
        let cell_tanh: Vec<f64> = cell.iter().map(|c| c.tanh()).collect();
        let hidden: Vec<f64> = (0..h).map(|j| output_gate[j] * cell_tanh[j]).collect();

        Ok((
            LstmState { hidden, cell },
            LstmStepCache {
                joint,
                cell_prev: state.cell.clone(),
                input_gate,
                forget_gate,
                candidate,
                output_gate,
                cell_tanh,
            },
        ))
    }

    /// One step of backpropagation through time. `grad_hidden` and
    /// `grad_cell` are the total gradients w.r.t. this step's outputs.
    pub fn backward_step(
        &self,
        cache: &LstmStepCache,
        grad_hidden: &[f64],
        grad_cell: &[f64],
        grads: Option<&mut LstmCell>,
    ) -> Result<LstmStepGrad> {
        let h = self.hidden_size;
        let cols = self.cols();
        if cache.joint.len() != cols || grad_hidden.len() != h || grad_cell.len() != h {
            return Err(Error::Usage("LSTM cache or gradient does not match this cell".into()));
        }
        let mut dz = vec![0.0; 4 * h];
        let mut cell_prev = vec![0.0; h];
        for j in 0..h {
            let (i, f, g, o, tc) = (
                cache.input_gate[j],
                cache.forget_gate[j],
                cache.candidate[j],
                cache.output_gate[j],
                cache.cell_tanh[j],
            );
            let d_o = grad_hidden[j] * tc;
            let dc = grad_cell[j] + grad_hidden[j] * o * (1.0 - tc * tc);
            dz[j] = dc * g * i * (1.0 - i);
            dz[h + j] = dc * cache.cell_prev[j] * f * (1.0 - f);
            dz[2 * h + j] = dc * i * (1.0 - g * g);
            dz[3 * h + j] = d_o * o * (1.0 - o);
            cell_prev[j] = dc * f;
        }
        let mut d_joint = vec![0.0; cols];
        for (row, d) in dz.iter().enumerate() {
            if *d != 0.0 {
                axpy(*d, &self.weights[row * cols..(row + 1) * cols], &mut d_joint);
            }
        }
        if let Some(g) = grads {
            for (row, d) in dz.iter().enumerate() {
                if *d != 0.0 {
                    axpy(*d, &cache.joint, &mut g.weights[row * cols..(row + 1) * cols]);
                    g.bias[row] += d;
                }
            }
        }
        let hidden_prev = d_joint.split_off(self.input_size);
        Ok(LstmStepGrad {
            input: d_joint,
            hidden_prev,
            cell_prev,
        })
    }

    /// Unrolls the cell over `inputs` from `initial`, returning every
    /// hidden state and the per-step caches.
    pub fn forward_sequence(
        &self,
        inputs: &[Vec<f64>],
        initial: &LstmState,
    ) -> Result<(Vec<LstmState>, Vec<LstmStepCache>)> {
        let mut states = Vec::with_capacity(inputs.len());
        let mut caches = Vec::with_capacity(inputs.len());
        let mut s = initial.clone();
        for x in inputs {
            let (next, cache) = self.step(x, &s)?;
            states.push(next.clone());
            caches.push(cache);
            s = next;
        }
        Ok((states, caches))
    }

    /// Backpropagation through time over a sequence. `grad_hidden[t]` is
    /// the loss gradient injected directly at step `t`'s hidden output.
    /// Returns the per-step input gradients and the gradient w.r.t. the
    /// initial state.
    pub fn backward_sequence(
        &self,
        caches: &[LstmStepCache],
        grad_hidden: &[Vec<f64>],
        mut grads: Option<&mut LstmCell>,
    ) -> Result<(Vec<Vec<f64>>, LstmState)> {
        if caches.len() != grad_hidden.len() {
            return Err(Error::shape("one hidden gradient per cached step is required"));
        }
        let h = self.hidden_size;
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut input_grads = vec![Vec::new(); caches.len()];
        for t in (0..caches.len()).rev() {
            let dh: Vec<f64> = grad_hidden[t].iter().zip(&dh_next).map(|(a, b)| a + b).collect();
            let step = self.backward_step(&caches[t], &dh, &dc_next, grads.as_deref_mut())?;
            input_grads[t] = step.input;
            dh_next = step.hidden_prev;
            dc_next = step.cell_prev;
        }
        Ok((
            input_grads,
            LstmState {
                hidden: dh_next,
                cell: dc_next,
            },
        ))
    }
}

impl Parameters for LstmCell {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [f64])) {
        f(join(prefix, "w"), &self.weights);
        f(join(prefix, "b"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [f64])) {
        f(join(prefix, "w"), &mut self.weights);
        f(join(prefix, "b"), &mut self.bias);
    }
}
