//! LSTM cell with exact backpropagation through time.
//!
//! All four gates share one packed weight matrix of shape `4H x (H + D)`
//! acting on the concatenation `[h; x]`. Row blocks are ordered input,
//! forget, output, candidate.

use rand::Rng;

use super::dense::sigmoid;
use super::params::{ParamView, ParamViewMut, Parameters};
use super::tensor::{gemm, Tensor2};
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Output = 2,
    Candidate = 3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    hidden: usize,
    input: usize,
    pub weight: Tensor2,
    pub bias: Vec<f64>,
}

/// Per-step values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LstmStepCache {
    concat: Tensor2,
    /// Gate activations `[i | f | o | g]`, each `batch x H`.
    gates: Tensor2,
    c_prev: Tensor2,
    tanh_c: Tensor2,
}

#[derive(Debug, Clone, Default)]
pub struct LstmSequenceCache {
    steps: Vec<LstmStepCache>,
}

impl LstmSequenceCache {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            hidden,
            input,
            weight: Tensor2::zeros(4 * hidden, hidden + input),
            bias: vec![0.0; 4 * hidden],
        }
    }

    /// Weights uniform in `±1/sqrt(H)`, zero biases except the forget gate at
    /// `forget_bias`.
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, forget_bias: f64, rng: &mut R) -> Self {
        let limit = 1.0 / (hidden as f64).sqrt();
        let mut p = Self {
            hidden,
            input,
            weight: Tensor2::uniform(4 * hidden, hidden + input, limit, rng),
            bias: vec![0.0; 4 * hidden],
        };
        p.gate_bias_mut(Gate::Forget).fill(forget_bias);
        p
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input(&self) -> usize {
        self.input
    }

    pub fn gate_bias_mut(&mut self, gate: Gate) -> &mut [f64] {
        let h = self.hidden;
        &mut self.bias[gate as usize * h..(gate as usize + 1) * h]
    }

    /// Entry of `W_gate` at `(row, col)` where columns index `[h; x]`.
    pub fn set_gate_weight(&mut self, gate: Gate, row: usize, col: usize, v: f64) {
        self.weight.set(gate as usize * self.hidden + row, col, v);
    }

    /// One cell update for a `batch x D` input.
    pub fn step(
        &self,
        x: &Tensor2,
        h: &Tensor2,
        c: &Tensor2,
    ) -> Result<(Tensor2, Tensor2, LstmStepCache), NnError> {
        let hd = self.hidden;
        if x.cols() != self.input || h.cols() != hd || c.cols() != hd {
            return Err(NnError::Shape(format!(
                "lstm step with x {:?}, h {:?}, c {:?} for D={}, H={hd}",
                x.shape(),
                h.shape(),
                c.shape(),
                self.input
            )));
        }
        if x.rows() != h.rows() || h.rows() != c.rows() {
            return Err(NnError::Shape("lstm batch sizes differ".into()));
        }
        let batch = x.rows();
        let concat = h.hcat(x)?;
        let mut gates = Tensor2::zeros(batch, 4 * hd);
        gemm(1.0, &concat, false, &self.weight, true, 0.0, &mut gates);
        gates.add_row_vector(&self.bias);
        let mut c_next = Tensor2::zeros(batch, hd);
        let mut h_next = Tensor2::zeros(batch, hd);
        let mut tanh_c = Tensor2::zeros(batch, hd);
        for b in 0..batch {
            let g = gates.row_mut(b);
            for v in &mut g[..3 * hd] {
                *v = sigmoid(*v);
            }
            for v in &mut g[3 * hd..] {
                *v = v.tanh();
            }
            let g = gates.row(b);
            let cp = c.row(b);
            let (cn, hn, tc) = (c_next.row_mut(b), h_next.row_mut(b), tanh_c.row_mut(b));
            for j in 0..hd {
                let (i, f, o, gg) = (g[j], g[hd + j], g[2 * hd + j], g[3 * hd + j]);
                cn[j] = f * cp[j] + i * gg;
                tc[j] = cn[j].tanh();
                hn[j] = o * tc[j];
            }
        }
        Ok((
            h_next,
            c_next,
            LstmStepCache {
                concat,
                gates,
                c_prev: c.clone(),
                tanh_c,
            },
        ))
    }

    /// Runs the cell from a zero state over `inputs` (one `batch x D` tensor
    /// per timestep) and returns the final hidden state.
    pub fn forward_sequence(&self, inputs: &[Tensor2]) -> Result<(Tensor2, LstmSequenceCache), NnError> {
        let first = inputs
            .first()
            .ok_or_else(|| NnError::Shape("empty input sequence".into()))?;
        let batch = first.rows();
        let mut h = Tensor2::zeros(batch, self.hidden);
        let mut c = Tensor2::zeros(batch, self.hidden);
        let mut steps = Vec::with_capacity(inputs.len());
        for x in inputs {
            let (hn, cn, cache) = self.step(x, &h, &c)?;
            h = hn;
            c = cn;
            steps.push(cache);
        }
        Ok((h, LstmSequenceCache { steps }))
    }

    /// Backpropagation through time from a gradient on the final hidden
    /// state. Parameter gradients accumulate into `grads`; the returned
    /// vector holds the gradient for each input timestep.
    pub fn bptt_backward(
        &self,
        cache: &LstmSequenceCache,
        grad_h_final: &Tensor2,
        grads: &mut LstmParams,
    ) -> Result<Vec<Tensor2>, NnError> {
        if cache.steps.is_empty() {
            return Err(NnError::MissingCache);
        }
        let hd = self.hidden;
        let batch = grad_h_final.rows();
        if grad_h_final.cols() != hd || cache.steps[0].concat.rows() != batch {
            return Err(NnError::Shape("upstream gradient does not match cache".into()));
        }
        let mut dh = grad_h_final.clone();
        let mut dc = Tensor2::zeros(batch, hd);
        let mut input_grads = vec![Tensor2::zeros(0, 0); cache.steps.len()];
        let mut dpre = Tensor2::zeros(batch, 4 * hd);
        let mut dconcat = Tensor2::zeros(batch, hd + self.input);
        for (t, step) in cache.steps.iter().enumerate().rev() {
            for b in 0..batch {
                let g = step.gates.row(b);
                let tc = step.tanh_c.row(b);
                let cp = step.c_prev.row(b);
                let dhb = dh.row(b);
                let dcb = dc.row_mut(b);
                let dp = dpre.row_mut(b);
                for j in 0..hd {
                    let (i, f, o, gg) = (g[j], g[hd + j], g[2 * hd + j], g[3 * hd + j]);
                    let d_o = dhb[j] * tc[j];
                    let dct = dcb[j] + dhb[j] * o * (1.0 - tc[j] * tc[j]);
                    dp[j] = dct * gg * i * (1.0 - i);
                    dp[hd + j] = dct * cp[j] * f * (1.0 - f);
                    dp[2 * hd + j] = d_o * o * (1.0 - o);
                    dp[3 * hd + j] = dct * i * (1.0 - gg * gg);
                    dcb[j] = dct * f;
                }
            }
            gemm(1.0, &dpre, true, &step.concat, false, 1.0, &mut grads.weight);
            dpre.accumulate_column_sums(&mut grads.bias);
            gemm(1.0, &dpre, false, &self.weight, false, 0.0, &mut dconcat);
            dh = dconcat.columns(0, hd);
            input_grads[t] = dconcat.columns(hd, self.input);
        }
        Ok(input_grads)
    }
}

impl Parameters for LstmParams {
    fn params(&self) -> Vec<ParamView<'_>> {
        vec![
            ParamView {
                name: "weight".into(),
                shape: self.weight.shape(),
                data: self.weight.data(),
            },
            ParamView {
                name: "bias".into(),
                shape: (1, self.bias.len()),
                data: &self.bias,
            },
        ]
    }

    fn params_mut(&mut self) -> Vec<ParamViewMut<'_>> {
        let shape = self.weight.shape();
        let blen = self.bias.len();
        vec![
            ParamViewMut {
                name: "weight".into(),
                shape,
                data: self.weight.data_mut(),
            },
            ParamViewMut {
                name: "bias".into(),
                shape: (1, blen),
                data: &mut self.bias,
            },
        ]
    }
}
