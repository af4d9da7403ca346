//! Adam and RMSProp over a dense network's parameters.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{DenseNet, LayerGrads};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerKind {
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
    },
    RmsProp {
        lr: f64,
        #[serde(default = "default_decay")]
        decay: f64,
        #[serde(default = "default_rms_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}
fn default_decay() -> f64 {
    0.99
}
fn default_rms_eps() -> f64 {
    1e-5
}

impl OptimizerKind {
    pub fn adam(lr: f64) -> Self {
        OptimizerKind::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
        }
    }

    pub fn rmsprop(lr: f64) -> Self {
        OptimizerKind::RmsProp {
            lr,
            decay: default_decay(),
            eps: default_rms_eps(),
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerKind::Adam { lr, .. } => lr,
            OptimizerKind::RmsProp { lr, .. } => lr,
        }
    }

    /// Same optimizer with the learning rate scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut kind = *self;
        match &mut kind {
            OptimizerKind::Adam { lr, .. } => *lr *= factor,
            OptimizerKind::RmsProp { lr, .. } => *lr *= factor,
        }
        kind
    }
}

struct Moments {
    weights: DMatrix<f64>,
    bias: DVector<f64>,
}

/// Optimizer state for one network. Accumulator shapes mirror the layers.
pub struct Optimizer {
    kind: OptimizerKind,
    first: Vec<Moments>,
    second: Vec<Moments>,
    step: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, net: &DenseNet) -> Self {
        let zeros = || {
            net.layers
                .iter()
                .map(|l| Moments {
                    weights: DMatrix::zeros(l.weights.nrows(), l.weights.ncols()),
                    bias: DVector::zeros(l.bias.len()),
                })
                .collect::<Vec<_>>()
        };
        let first = zeros();
        let second = match kind {
            OptimizerKind::Adam { .. } => zeros(),
            // RMSProp keeps a single squared-gradient accumulator; reuse
            // `first` as that accumulator and leave this empty.
            OptimizerKind::RmsProp { .. } => Vec::new(),
        };
        Optimizer {
            kind,
            first,
            second,
            step: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn step(&mut self, net: &mut DenseNet, grads: &[LayerGrads]) {
        assert_eq!(grads.len(), net.layers.len());
        self.step += 1;
        match self.kind {
            OptimizerKind::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                let bc1 = 1.0 - beta1.powi(self.step as i32);
                let bc2 = 1.0 - beta2.powi(self.step as i32);
                for (l, layer) in net.layers.iter_mut().enumerate() {
                    adam_update(
                        layer.weights.as_mut_slice(),
                        grads[l].weights.as_slice(),
                        self.first[l].weights.as_mut_slice(),
                        self.second[l].weights.as_mut_slice(),
                        lr,
                        beta1,
                        beta2,
                        eps,
                        bc1,
                        bc2,
                    );
                    adam_update(
                        layer.bias.as_mut_slice(),
                        grads[l].bias.as_slice(),
                        self.first[l].bias.as_mut_slice(),
                        self.second[l].bias.as_mut_slice(),
                        lr,
                        beta1,
                        beta2,
                        eps,
                        bc1,
                        bc2,
                    );
                }
            }
            OptimizerKind::RmsProp { lr, decay, eps } => {
                for (l, layer) in net.layers.iter_mut().enumerate() {
                    rmsprop_update(
                        layer.weights.as_mut_slice(),
                        grads[l].weights.as_slice(),
                        self.first[l].weights.as_mut_slice(),
                        lr,
                        decay,
                        eps,
                    );
                    rmsprop_update(
                        layer.bias.as_mut_slice(),
                        grads[l].bias.as_slice(),
                        self.first[l].bias.as_mut_slice(),
                        lr,
                        decay,
                        eps,
                    );
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

fn rmsprop_update(params: &mut [f64], grads: &[f64], v: &mut [f64], lr: f64, decay: f64, eps: f64) {
    for i in 0..params.len() {
        let g = grads[i];
        v[i] = decay * v[i] + (1.0 - decay) * g * g;
        params[i] -= lr * g / (v[i].sqrt() + eps);
    }
}
