//! Rollout estimator of question-network values, independent of the linear
//! solves: it unrolls each node's semantics directly over sampled
//! trajectories.
//!
//! The grid world is deterministic, so transitions and per-(state, action)
//! features are tabulated once (by simulating each pair, exactly like the
//! exact model) and the sampler works on indices. Only the action draws
//! are random.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{model_features, ModelFeatureOracle, OracleError};
use crate::envs::{Action, EmptyRoomConfig, ExactModel, N_STATES};
use crate::features::FeatureExtractor;
use crate::qnet::{NodeRef, QuestionNetwork};
use crate::rng::chacha;

/// Self-loop chains are truncated once the accumulated discount coefficient
/// drops below this; the truncation bias is far below the statistical noise.
const COEFF_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct McEstimate {
    /// (n_states x n_nodes) sample means.
    pub mean: DMatrix<f64>,
    /// Standard error of each mean.
    pub std_err: DMatrix<f64>,
    pub rollouts: usize,
}

/// A question network prepared for rollout sampling on the empty room.
pub struct McSampler<'a> {
    net: &'a QuestionNetwork,
    next_state: Vec<[usize; 4]>,
    /// Per action: (n_states x n_features) feature values.
    features: Vec<DMatrix<f64>>,
    /// Forced environment action per node, for conditioned nodes.
    forced: Vec<Option<usize>>,
    self_loop: Vec<f64>,
}

impl<'a> McSampler<'a> {
    pub fn new(
        net: &'a QuestionNetwork,
        env_cfg: &EmptyRoomConfig,
        extractor: &FeatureExtractor,
    ) -> Result<Self, OracleError> {
        let model = ExactModel::build(env_cfg);
        let features = model_features(&model, extractor)?;
        Self::from_model(net, &model, &features)
    }

    pub fn from_model(
        net: &'a QuestionNetwork,
        model: &ExactModel,
        features: &ModelFeatureOracle,
    ) -> Result<Self, OracleError> {
        if features.n_features != net.n_features {
            return Err(OracleError::FeatureCount {
                expected: net.n_features,
                got: features.n_features,
            });
        }
        let mut forced = Vec::with_capacity(net.prediction_count());
        for node in &net.predictions {
            forced.push(match node.condition {
                None => None,
                Some(a) => match Action::from_name(&net.actions[a]) {
                    Some(action) => Some(action.index()),
                    None => {
                        return Err(OracleError::InvalidNetwork(format!(
                            "action \"{}\" is not a grid action",
                            net.actions[a]
                        )))
                    }
                },
            });
        }
        let self_loop = net
            .predictions
            .iter()
            .enumerate()
            .map(|(i, node)| {
                node.edges
                    .iter()
                    .filter(|e| e.target == NodeRef::Prediction(i))
                    .map(|e| e.weight)
                    .sum()
            })
            .collect();
        Ok(McSampler {
            net,
            next_state: model.next_state.clone(),
            features: features.by_action.clone(),
            forced,
            self_loop,
        })
    }

    /// One sampled return of `node` from `state`. The node's condition
    /// forces the action (on every unroll step of its own self-loop chain);
    /// otherwise actions follow the uniform random policy. Prediction
    /// children are sampled recursively from the successor state.
    fn sample(&self, state: usize, node_idx: usize, rng: &mut ChaCha8Rng) -> f64 {
        let node = &self.net.predictions[node_idx];
        let self_loop = self.self_loop[node_idx];
        let mut total = 0.0;
        let mut coeff = 1.0;
        let mut current = state;
        loop {
            let action = self.forced[node_idx].unwrap_or_else(|| rng.random_range(0..4));
            let next = self.next_state[current][action];
            let f = &self.features[action];

            let mut step_value = 0.0;
            for edge in &node.edges {
                match edge.target {
                    NodeRef::Feature(k) => step_value += edge.weight * f[(current, k)],
                    NodeRef::Prediction(j) if j != node_idx => {
                        step_value += edge.weight * self.sample(next, j, rng);
                    }
                    NodeRef::Prediction(_) => {}
                }
            }
            total += coeff * step_value;

            if self_loop == 0.0 {
                return total;
            }
            coeff *= self_loop;
            if coeff < COEFF_FLOOR {
                return total;
            }
            current = next;
        }
    }

    /// Mean and standard error of `rollouts` samples for one (state, node).
    pub fn entry(
        &self,
        state: usize,
        node: usize,
        rollouts: usize,
        rng: &mut ChaCha8Rng,
    ) -> (f64, f64) {
        assert!(rollouts > 0);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..rollouts {
            let x = self.sample(state, node, rng);
            sum += x;
            sum_sq += x * x;
        }
        let n = rollouts as f64;
        let mean = sum / n;
        let variance = ((sum_sq - sum * sum / n) / (n - 1.0).max(1.0)).max(0.0);
        (mean, (variance / n).sqrt())
    }
}

/// Estimates every (state, node) value with `rollouts` samples each under
/// the uniform random policy.
pub fn monte_carlo_gvf(
    net: &QuestionNetwork,
    env_cfg: &EmptyRoomConfig,
    extractor: &FeatureExtractor,
    rollouts: usize,
    seed: u64,
) -> Result<McEstimate, OracleError> {
    assert!(rollouts > 0, "need at least one rollout per entry");
    let sampler = McSampler::new(net, env_cfg, extractor)?;
    let mut rng = chacha(seed);
    let n_p = net.prediction_count();
    let mut mean = DMatrix::zeros(N_STATES, n_p);
    let mut std_err = DMatrix::zeros(N_STATES, n_p);
    for s in 0..N_STATES {
        for i in 0..n_p {
            let (m, se) = sampler.entry(s, i, rollouts, &mut rng);
            mean[(s, i)] = m;
            std_err[(s, i)] = se;
        }
    }
    Ok(McEstimate {
        mean,
        std_err,
        rollouts,
    })
}
