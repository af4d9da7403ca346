//! Tabular answer learner: one entry per (state, prediction node), driven by
//! the same target computation as the neural agent. Used to check that the
//! TD target semantics have the oracle's values as their fixed point,
//! independent of any function approximation.

use nalgebra::DMatrix;

use crate::envs::{Action, ExactModel, N_STATES};
use crate::oracle::ModelFeatureOracle;
use crate::qnet::QuestionNetwork;
use crate::targets::compute_targets;

pub struct TabularTd<'a> {
    net: &'a QuestionNetwork,
    /// Environment action index -> network action index.
    env_to_net: Vec<Option<usize>>,
    pub table: DMatrix<f64>,
}

impl<'a> TabularTd<'a> {
    pub fn new(net: &'a QuestionNetwork) -> Self {
        let env_to_net = Action::ALL
            .iter()
            .map(|a| net.action_index(a.name()))
            .collect();
        TabularTd {
            net,
            env_to_net,
            table: DMatrix::zeros(N_STATES, net.prediction_count()),
        }
    }

    fn features_row(features: &ModelFeatureOracle, state: usize, action: usize) -> Vec<f64> {
        features.by_action[action].row(state).iter().copied().collect()
    }

    /// One sampled TD update for the executed action.
    pub fn sampled_update(
        &mut self,
        model: &ExactModel,
        features: &ModelFeatureOracle,
        state: usize,
        env_action: usize,
        alpha: f64,
    ) {
        let next = model.next_state[state][env_action];
        let f = Self::features_row(features, state, env_action);
        let next_answers: Vec<f64> = self.table.row(next).iter().copied().collect();
        let batch = compute_targets(
            self.net,
            &f,
            &next_answers,
            self.env_to_net[env_action],
            false,
        )
        .expect("dimensions fixed at construction");
        for i in 0..self.net.prediction_count() {
            if batch.mask[i] {
                self.table[(state, i)] += alpha * (batch.targets[i] - self.table[(state, i)]);
            }
        }
    }

    /// Expected TD update at one state: the per-action targets from
    /// `compute_targets`, weighted by the uniform policy probabilities, so
    /// the update direction has no action-sampling noise.
    pub fn expected_update(
        &mut self,
        model: &ExactModel,
        features: &ModelFeatureOracle,
        state: usize,
        alpha: f64,
    ) {
        let n_p = self.net.prediction_count();
        let n_actions = Action::ALL.len();
        let pi = 1.0 / n_actions as f64;
        let mut delta = vec![0.0; n_p];
        for env_action in 0..n_actions {
            let next = model.next_state[state][env_action];
            let f = Self::features_row(features, state, env_action);
            let next_answers: Vec<f64> = self.table.row(next).iter().copied().collect();
            let batch = compute_targets(
                self.net,
                &f,
                &next_answers,
                self.env_to_net[env_action],
                false,
            )
            .expect("dimensions fixed at construction");
            for i in 0..n_p {
                if batch.mask[i] {
                    // Unconditioned nodes average their targets over the
                    // policy; a conditioned node's fixed point is its own
                    // action's target, so it takes the full conditional TD
                    // error rather than the policy-probability-scaled one.
                    // Both choices share the fixed point.
                    let weight = match self.net.predictions[i].condition {
                        Some(_) => 1.0,
                        None => pi,
                    };
                    delta[i] += weight * (batch.targets[i] - self.table[(state, i)]);
                }
            }
        }
        for i in 0..n_p {
            self.table[(state, i)] += alpha * delta[i];
        }
    }

    pub fn max_abs_error(&self, exact: &DMatrix<f64>) -> f64 {
        (&self.table - exact).abs().max()
    }
}
