//! The three-module agent: a shared state representation, an RL head
//! producing the value estimate (and policy logits in control mode), and an
//! answer head producing one output per question-network prediction node.
//!
//! With `stop_gradient` set, gradients from the RL loss never reach the
//! representation; only the answer loss shapes it.

mod train;

pub use train::{
    actor_critic_train, evaluate_policy_train, MetricsRow, TrainConfig, TrainError,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::envs::EmptyRoomConfig;
use crate::rng::{derive_seed, stream};
use crate::tinynn::{Activation, DenseNet, NetError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    /// Hidden widths of the representation MLP.
    #[serde(default = "default_repr_dims")]
    pub repr_dims: Vec<usize>,
    /// Hidden width of each head.
    #[serde(default = "default_head_hidden")]
    pub head_hidden: usize,
    /// Sever the RL-loss gradient path into the representation.
    #[serde(default = "default_true")]
    pub stop_gradient: bool,
    /// Make the RL head a bare linear readout of the representation. Used
    /// by the frozen-random-representation baseline, where only the value
    /// function weights are learned and a hidden layer would smuggle
    /// representation learning back in.
    #[serde(default)]
    pub linear_value_head: bool,
}

fn default_repr_dims() -> Vec<usize> {
    vec![64, 64, 32]
}

fn default_head_hidden() -> usize {
    32
}

fn default_true() -> bool {
    true
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            repr_dims: default_repr_dims(),
            head_hidden: default_head_hidden(),
            stop_gradient: true,
            linear_value_head: false,
        }
    }
}

/// Output arrangement of the RL head: row 0 is always the value estimate,
/// control agents add one logit row per action.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadLayout {
    ValueOnly,
    ValueAndPolicy { n_actions: usize },
}

impl HeadLayout {
    pub fn out_dim(self) -> usize {
        match self {
            HeadLayout::ValueOnly => 1,
            HeadLayout::ValueAndPolicy { n_actions } => 1 + n_actions,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentNet {
    pub repr: DenseNet,
    pub rl_head: DenseNet,
    pub answer_head: Option<DenseNet>,
    pub stop_gradient: bool,
    pub head_layout: HeadLayout,
}

/// Forward-pass outputs for one observation.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub state: DVector<f64>,
    pub value: f64,
    pub answers: Option<DVector<f64>>,
    pub policy: Option<Vec<f64>>,
}

impl AgentNet {
    /// Seeded construction. The three modules draw from independent streams
    /// of `seed`, so a frozen random representation is reproducible.
    pub fn init(
        cfg: &AgentConfig,
        obs_len: usize,
        head_layout: HeadLayout,
        n_predictions: Option<usize>,
        seed: u64,
    ) -> Self {
        assert!(!cfg.repr_dims.is_empty(), "representation needs layers");
        let mut repr_dims = vec![obs_len];
        repr_dims.extend_from_slice(&cfg.repr_dims);
        let repr_acts = vec![Activation::Relu; cfg.repr_dims.len()];
        let repr = DenseNet::init(&repr_dims, &repr_acts, derive_seed(seed, stream::INIT_REPR));

        let state_dim = *cfg.repr_dims.last().unwrap();
        let head_acts = [Activation::Relu, Activation::Identity];
        let rl_head = if cfg.linear_value_head {
            DenseNet::init(
                &[state_dim, head_layout.out_dim()],
                &[Activation::Identity],
                derive_seed(seed, stream::INIT_RL_HEAD),
            )
        } else {
            DenseNet::init(
                &[state_dim, cfg.head_hidden, head_layout.out_dim()],
                &head_acts,
                derive_seed(seed, stream::INIT_RL_HEAD),
            )
        };
        let answer_head = n_predictions.map(|n| {
            DenseNet::init(
                &[state_dim, cfg.head_hidden, n],
                &head_acts,
                derive_seed(seed, stream::INIT_ANSWER_HEAD),
            )
        });
        AgentNet {
            repr,
            rl_head,
            answer_head,
            stop_gradient: cfg.stop_gradient,
            head_layout,
        }
    }

    pub fn obs_len(&self) -> usize {
        self.repr.in_dim()
    }

    pub fn n_predictions(&self) -> Option<usize> {
        self.answer_head.as_ref().map(|h| h.out_dim())
    }

    /// Pure forward pass for one observation; stop-gradient plays no role
    /// here (it only affects training).
    pub fn predict(&self, obs: &[f64]) -> Result<Prediction, NetError> {
        let input = DMatrix::from_column_slice(obs.len(), 1, obs);
        let state = self.repr.output(&input)?;
        let rl = self.rl_head.output(&state)?;
        let value = rl[(0, 0)];
        let policy = match self.head_layout {
            HeadLayout::ValueOnly => None,
            HeadLayout::ValueAndPolicy { n_actions } => {
                let logits: Vec<f64> = (0..n_actions).map(|a| rl[(1 + a, 0)]).collect();
                Some(softmax(&logits))
            }
        };
        let answers = match &self.answer_head {
            Some(head) => Some(DVector::from_column_slice(
                head.output(&state)?.column(0).as_slice(),
            )),
            None => None,
        };
        Ok(Prediction {
            state: DVector::from_column_slice(state.column(0).as_slice()),
            value,
            answers,
            policy,
        })
    }

    /// Value estimates for a batch of observations (columns).
    pub fn values(&self, obs: &DMatrix<f64>) -> Result<Vec<f64>, NetError> {
        let state = self.repr.output(obs)?;
        let rl = self.rl_head.output(&state)?;
        Ok(rl.row(0).iter().copied().collect())
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub const AGENT_CHECKPOINT_VERSION: u32 = 1;

/// On-disk agent snapshot. Carries the environment settings and discount it
/// was trained with so downstream commands can rebuild the oracle.
#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub stop_gradient: bool,
    pub head_layout: HeadLayout,
    pub env: EmptyRoomConfig,
    pub gamma_env: f64,
    pub repr: serde_json::Value,
    pub rl_head: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_head: Option<serde_json::Value>,
}

impl Checkpoint {
    pub fn from_agent(agent: &AgentNet, env: &EmptyRoomConfig, gamma_env: f64) -> Self {
        Checkpoint {
            version: AGENT_CHECKPOINT_VERSION,
            stop_gradient: agent.stop_gradient,
            head_layout: agent.head_layout,
            env: env.clone(),
            gamma_env,
            repr: agent.repr.to_json_value(),
            rl_head: agent.rl_head.to_json_value(),
            answer_head: agent.answer_head.as_ref().map(|h| h.to_json_value()),
        }
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self, NetError> {
        let cp: Checkpoint = serde_json::from_str(text)?;
        if cp.version != AGENT_CHECKPOINT_VERSION {
            return Err(NetError::Version(cp.version));
        }
        Ok(cp)
    }

    pub fn into_agent(self) -> Result<AgentNet, NetError> {
        let repr = DenseNet::from_json_value(self.repr)?;
        let rl_head = DenseNet::from_json_value(self.rl_head)?;
        if rl_head.out_dim() != self.head_layout.out_dim() || rl_head.in_dim() != repr.out_dim() {
            return Err(NetError::BadShape { layer: 0 });
        }
        let answer_head = match self.answer_head {
            Some(v) => {
                let h = DenseNet::from_json_value(v)?;
                if h.in_dim() != repr.out_dim() {
                    return Err(NetError::BadShape { layer: 0 });
                }
                Some(h)
            }
            None => None,
        };
        Ok(AgentNet {
            repr,
            rl_head,
            answer_head,
            stop_gradient: self.stop_gradient,
            head_layout: self.head_layout,
        })
    }
}

#[cfg(test)]
mod tests;
