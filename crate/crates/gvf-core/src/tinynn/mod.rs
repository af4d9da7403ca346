//! Minimal dense neural network engine: affine layers with ReLU or identity
//! activations, reverse-mode gradients, Adam and RMSProp, and a finite
//! difference gradient checker.
//!
//! Everything is batched: inputs and outputs are matrices whose columns are
//! samples. Double precision throughout so oracle comparisons hold at tight
//! tolerances.

mod gradcheck;
mod optim;

pub use gradcheck::{grad_check_flat, grad_check_net, GradCheckReport, KINK_THRESHOLD};
pub use optim::{Optimizer, OptimizerKind};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::chacha;
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: &mut DMatrix<f64>) {
        if self == Activation::Relu {
            z.apply(|v| *v = v.max(0.0));
        }
    }

    /// Derivative as a function of the pre-activation. The ReLU subgradient
    /// at exactly 0 is 0.
    fn derivative(self, z: f64) -> f64 {
        match self {
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

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// (out_dim x in_dim).
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet {
    pub layers: Vec<Layer>,
}

/// Per-layer parameter gradients, shaped like the layer.
#[derive(Clone, Debug)]
pub struct LayerGrads {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// Activations recorded by a forward pass, sufficient for backward.
pub struct Tape {
    /// Input to each layer (the first entry is the network input).
    inputs: Vec<DMatrix<f64>>,
    /// Pre-activation of each layer.
    pre_activations: Vec<DMatrix<f64>>,
}

impl Tape {
    /// Smallest pre-activation magnitude on the tape. Near-zero values mark
    /// ReLU kinks where finite differences disagree with the subgradient.
    pub fn min_abs_preactivation(&self) -> f64 {
        self.pre_activations
            .iter()
            .flat_map(|z| z.iter())
            .fold(f64::INFINITY, |m, &v| m.min(v.abs()))
    }
}

#[derive(Debug, Error)]
pub enum NetError {
    #[error("input dimension {got} does not match layer input {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("checkpoint layer {layer} has inconsistent shapes")]
    BadShape { layer: usize },
    #[error("invalid checkpoint: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("non-finite parameter in checkpoint layer {layer}")]
    NonFinite { layer: usize },
}

impl DenseNet {
    /// Seeded initialization. `dims` lists the layer widths from input to
    /// output, `activations` one entry per layer. Weights are uniform with
    /// the fan-in bound sqrt(6 / fan_in); biases start at zero.
    pub fn init(dims: &[usize], activations: &[Activation], seed: u64) -> Self {
        assert!(dims.len() >= 2, "need at least one layer");
        assert_eq!(dims.len() - 1, activations.len());
        let mut rng = chacha(seed);
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                let mut weights = DMatrix::zeros(fan_out, fan_in);
                for r in 0..fan_out {
                    for c in 0..fan_in {
                        weights[(r, c)] = rng.random_range(-bound..bound);
                    }
                }
                Layer {
                    weights,
                    bias: DVector::zeros(fan_out),
                    activation,
                }
            })
            .collect();
        DenseNet { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().weights.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Forward pass over a batch (columns are samples), recording the tape.
    pub fn forward(&self, input: &DMatrix<f64>) -> Result<(DMatrix<f64>, Tape), NetError> {
        if input.nrows() != self.in_dim() {
            return Err(NetError::InputDim {
                expected: self.in_dim(),
                got: input.nrows(),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &self.layers {
            let mut z = &layer.weights * &x;
            for mut col in z.column_iter_mut() {
                col += &layer.bias;
            }
            inputs.push(x);
            pre_activations.push(z.clone());
            layer.activation.apply(&mut z);
            x = z;
        }
        Ok((
            x,
            Tape {
                inputs,
                pre_activations,
            },
        ))
    }

    /// Forward pass without a tape.
    pub fn output(&self, input: &DMatrix<f64>) -> Result<DMatrix<f64>, NetError> {
        Ok(self.forward(input)?.0)
    }

    /// Reverse-mode gradients. `output_grad` is the loss gradient with
    /// respect to the network output (same shape); returns parameter
    /// gradients summed over the batch and the gradient with respect to the
    /// network input (for cross-module backpropagation).
    pub fn backward(&self, tape: &Tape, output_grad: &DMatrix<f64>) -> (Vec<LayerGrads>, DMatrix<f64>) {
        assert_eq!(tape.inputs.len(), self.layers.len(), "tape mismatch");
        let mut grads: Vec<LayerGrads> = Vec::with_capacity(self.layers.len());
        let mut delta = output_grad.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let z = &tape.pre_activations[l];
            assert_eq!(delta.shape(), z.shape(), "tape mismatch");
            delta.zip_apply(z, |d, zv| *d *= layer.activation.derivative(zv));
            let weights = &delta * tape.inputs[l].transpose();
            let bias = DVector::from_fn(delta.nrows(), |r, _| delta.row(r).sum());
            grads.push(LayerGrads { weights, bias });
            delta = layer.weights.transpose() * &delta;
        }
        grads.reverse();
        (grads, delta)
    }

    /// Parameters flattened layer by layer (column-major within each block).
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(l.bias.as_slice());
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.param_count());
        let mut offset = 0;
        for l in &mut self.layers {
            let n = l.weights.len();
            l.weights.as_mut_slice().copy_from_slice(&params[offset..offset + n]);
            offset += n;
            let n = l.bias.len();
            l.bias.as_mut_slice().copy_from_slice(&params[offset..offset + n]);
            offset += n;
        }
    }

    /// Gradients flattened in the same order as [`flat_params`].
    pub fn flat_grads(grads: &[LayerGrads]) -> Vec<f64> {
        let mut out = Vec::new();
        for g in grads {
            out.extend_from_slice(g.weights.as_slice());
            out.extend_from_slice(g.bias.as_slice());
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct FileLayer {
    activation: Activation,
    /// Row-major weight rows (out_dim rows of in_dim entries).
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct FileNet {
    version: u32,
    layers: Vec<FileLayer>,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl DenseNet {
    pub fn to_json_value(&self) -> serde_json::Value {
        let file = FileNet {
            version: CHECKPOINT_VERSION,
            layers: self
                .layers
                .iter()
                .map(|l| FileLayer {
                    activation: l.activation,
                    weights: l
                        .weights
                        .row_iter()
                        .map(|r| r.iter().copied().collect())
                        .collect(),
                    bias: l.bias.iter().copied().collect(),
                })
                .collect(),
        };
        serde_json::to_value(file).expect("net serializes")
    }

    pub fn from_json_value(value: serde_json::Value) -> Result<Self, NetError> {
        let file: FileNet = serde_json::from_value(value)?;
        if file.version != CHECKPOINT_VERSION {
            return Err(NetError::Version(file.version));
        }
        let mut layers = Vec::with_capacity(file.layers.len());
        for (i, l) in file.layers.into_iter().enumerate() {
            let rows = l.weights.len();
            if rows == 0 || l.bias.len() != rows {
                return Err(NetError::BadShape { layer: i });
            }
            let cols = l.weights[0].len();
            if cols == 0 || l.weights.iter().any(|r| r.len() != cols) {
                return Err(NetError::BadShape { layer: i });
            }
            if l.weights.iter().flatten().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(NetError::NonFinite { layer: i });
            }
            let weights = DMatrix::from_fn(rows, cols, |r, c| l.weights[r][c]);
            layers.push(Layer {
                weights,
                bias: DVector::from_vec(l.bias),
                activation: l.activation,
            });
        }
        if layers.is_empty() {
            return Err(NetError::BadShape { layer: 0 });
        }
        for w in layers.windows(2) {
            if w[1].weights.ncols() != w[0].weights.nrows() {
                return Err(NetError::BadShape { layer: 1 });
            }
        }
        Ok(DenseNet { layers })
    }
}

/// Column vector view of a slice, for single-sample calls.
pub fn column(values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(values.len(), 1, values)
}
