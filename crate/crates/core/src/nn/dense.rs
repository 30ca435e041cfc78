use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamView, ParamViewMut, Parameters};
use super::tensor::{gemm, Tensor2};
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Relu,
    Identity,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected layer `y = act(W x + b)` with `W` of shape `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Tensor2,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// Batch inputs, pre-activations and outputs from a forward pass.
#[derive(Debug, Clone)]
pub struct DenseCache {
    pub input: Tensor2,
    pub pre: Tensor2,
    pub output: Tensor2,
}

impl DenseLayer {
    pub fn new(weight: Tensor2, bias: Vec<f64>, activation: Activation) -> Result<Self, NnError> {
        if bias.len() != weight.rows() {
            return Err(NnError::Shape(format!(
                "bias of length {} for {} outputs",
                bias.len(),
                weight.rows()
            )));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            weight: Tensor2::zeros(output, input),
            bias: vec![0.0; output],
            activation,
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init<R: Rng + ?Sized>(
        input: usize,
        output: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        Self {
            weight: Tensor2::uniform(output, input, limit, rng),
            bias: vec![0.0; output],
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    /// Single-vector forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, DenseCache), NnError> {
        let batch = Tensor2::from_vec(1, x.len(), x.to_vec())?;
        let cache = self.forward_batch(&batch)?;
        Ok((cache.output.row(0).to_vec(), cache))
    }

    /// Forward pass over a `batch x in` matrix.
    pub fn forward_batch(&self, x: &Tensor2) -> Result<DenseCache, NnError> {
        if x.cols() != self.input_dim() {
            return Err(NnError::Shape(format!(
                "dense layer expects {} inputs, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        let mut pre = Tensor2::zeros(x.rows(), self.output_dim());
        gemm(1.0, x, false, &self.weight, true, 0.0, &mut pre);
        pre.add_row_vector(&self.bias);
        let output = pre.map(|z| self.activation.apply(z));
        Ok(DenseCache {
            input: x.clone(),
            pre,
            output,
        })
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the layer input.
    pub fn backward(&self, cache: &DenseCache, grad_out: &Tensor2, grads: &mut DenseLayer) -> Tensor2 {
        let mut delta = grad_out.clone();
        for ((d, &z), &y) in delta
            .data_mut()
            .iter_mut()
            .zip(cache.pre.data())
            .zip(cache.output.data())
        {
            *d *= self.activation.derivative(z, y);
        }
        gemm(1.0, &delta, true, &cache.input, false, 1.0, &mut grads.weight);
        delta.accumulate_column_sums(&mut grads.bias);
        let mut grad_in = Tensor2::zeros(delta.rows(), self.input_dim());
        gemm(1.0, &delta, false, &self.weight, false, 0.0, &mut grad_in);
        grad_in
    }

    /// Bit pattern of which relu units are active, folded into `hash`.
    pub fn fold_relu_pattern(&self, cache: &DenseCache, hash: &mut u64) {
        if self.activation != Activation::Relu {
            return;
        }
        for &z in cache.pre.data() {
            *hash ^= u64::from(z > 0.0);
            *hash = hash.wrapping_mul(0x0100_0000_01b3);
        }
    }
}

impl Parameters for DenseLayer {
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_layer_passes_through() {
        let l = DenseLayer::new(Tensor2::identity(3), vec![0.0; 3], Activation::Identity).unwrap();
        let (y, _) = l.forward(&[1.0, -2.0, 3.5]).unwrap();
        assert_eq!(y, vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn relu_clips_negative() {
        let l = DenseLayer::new(Tensor2::identity(2), vec![0.0; 2], Activation::Relu).unwrap();
        assert_eq!(l.forward(&[-1.0, 2.0]).unwrap().0, vec![0.0, 2.0]);
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let l = DenseLayer::zeros(4, 3, Activation::Sigmoid);
        assert_eq!(l.forward(&[0.0; 4]).unwrap().0, vec![0.5; 3]);
    }

    #[test]
    fn shape_mismatch() {
        let l = DenseLayer::zeros(4, 3, Activation::Sigmoid);
        assert!(matches!(l.forward(&[0.0; 3]), Err(NnError::Shape(_))));
        assert!(DenseLayer::new(Tensor2::zeros(2, 2), vec![0.0; 3], Activation::Relu).is_err());
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!(sigmoid(-30.0) > 0.0 && sigmoid(30.0) < 1.0);
    }
}
