//! Analytic ground truth on the empty room: the true state-value function
//! of the uniform random policy and the exact value of every question
//! network prediction, both obtained from dense linear solves against the
//! tabular model. A Monte-Carlo estimator provides an independent route for
//! cross-checking.

mod monte_carlo;

pub use monte_carlo::{monte_carlo_gvf, McEstimate, McSampler};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::envs::{observation_for, ExactModel, Transition, N_STATES};
use crate::features::{FeatureError, FeatureExtractor};
use crate::qnet::{NodeRef, QuestionNetwork};

/// Residual bound for every fixed-point equation solved here.
pub const FIXED_POINT_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("discount must be in [0, 1), got {0}")]
    Gamma(f64),
    #[error("linear solve failed (singular system)")]
    Singular,
    #[error("fixed point residual {0:e} exceeds {FIXED_POINT_TOL:e}")]
    Residual(f64),
    #[error("network unsupported by the oracle: {0}")]
    InvalidNetwork(String),
    #[error("feature count {got} does not match network n_features {expected}")]
    FeatureCount { expected: usize, got: usize },
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// Solves (I - gamma P_pi) v = r directly.
pub fn true_values(model: &ExactModel, gamma: f64) -> Result<DVector<f64>, OracleError> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(OracleError::Gamma(gamma));
    }
    let n = model.n_states();
    let system = DMatrix::identity(n, n) - &model.p_policy * gamma;
    let v = system
        .clone()
        .lu()
        .solve(&model.reward_policy)
        .ok_or(OracleError::Singular)?;
    let residual = (&system * &v - &model.reward_policy).abs().max();
    if residual > FIXED_POINT_TOL {
        return Err(OracleError::Residual(residual));
    }
    Ok(v)
}

/// Iterative policy evaluation, kept as an independent cross-check of the
/// direct solve. Iterates v <- r + gamma P v until the sup-norm change
/// drops below `tol`.
pub fn value_iteration(model: &ExactModel, gamma: f64, tol: f64) -> DVector<f64> {
    let mut v = DVector::zeros(model.n_states());
    loop {
        let next = &model.reward_policy + (&model.p_policy * &v) * gamma;
        let delta = (&next - &v).abs().max();
        v = next;
        if delta < tol {
            return v;
        }
    }
}

/// Stationary distribution of the random-policy chain, by power iteration.
pub fn stationary_distribution(model: &ExactModel) -> DVector<f64> {
    let n = model.n_states();
    let p_t = model.p_policy.transpose();
    let mut d = DVector::from_element(n, 1.0 / n as f64);
    loop {
        let mut next = &p_t * &d;
        next /= next.sum();
        let delta = (&next - &d).abs().max();
        d = next;
        if delta < 1e-15 {
            return d;
        }
    }
}

/// Average reward per step of the uniform random policy.
pub fn random_policy_average_reward(model: &ExactModel) -> f64 {
    stationary_distribution(model).dot(&model.reward_policy)
}

/// Expected next-step features per (state, action), evaluated from
/// reconstructed observations on the model's deterministic transitions.
#[derive(Clone, Debug)]
pub struct ModelFeatureOracle {
    /// One (n_states x n_features) matrix per action.
    pub by_action: Vec<DMatrix<f64>>,
    /// Uniform-policy average of the per-action matrices.
    pub by_policy: DMatrix<f64>,
    pub n_features: usize,
}

pub fn model_features(
    model: &ExactModel,
    extractor: &FeatureExtractor,
) -> Result<ModelFeatureOracle, OracleError> {
    let n_f = extractor.count();
    let n_actions = model.p_action.len();
    let mut by_action = vec![DMatrix::zeros(N_STATES, n_f); n_actions];
    for (s, &cell) in model.states.iter().enumerate() {
        let obs = observation_for(cell);
        for a in 0..n_actions {
            let next_cell = model.states[model.next_state[s][a]];
            let t = Transition {
                obs: obs.clone(),
                action: a,
                next_obs: observation_for(next_cell),
                reward: model.reward_sa[s][a],
                terminal: false,
                blocked: model.blocked[s][a],
            };
            let f = extractor.eval(&t)?;
            for (k, &value) in f.iter().enumerate() {
                by_action[a][(s, k)] = value;
            }
        }
    }
    let mut by_policy = DMatrix::zeros(N_STATES, n_f);
    for m in &by_action {
        by_policy += m;
    }
    by_policy /= n_actions as f64;
    Ok(ModelFeatureOracle {
        by_action,
        by_policy,
        n_features: n_f,
    })
}

/// Exact GVF values of every prediction node in every state.
///
/// Nodes are processed in dependency order; a node without a self-loop is a
/// one-step expectation over its already-solved children, a self-loop node
/// solves its own (I - g P) system. The stacked fixed-point residual is
/// verified before returning.
pub fn exact_gvf_values(
    net: &QuestionNetwork,
    model: &ExactModel,
    features: &ModelFeatureOracle,
) -> Result<DMatrix<f64>, OracleError> {
    if features.n_features != net.n_features {
        return Err(OracleError::FeatureCount {
            expected: net.n_features,
            got: features.n_features,
        });
    }
    if net.actions.len() > model.p_action.len() {
        return Err(OracleError::InvalidNetwork(format!(
            "network has {} actions but the model only {}",
            net.actions.len(),
            model.p_action.len()
        )));
    }
    let n_p = net.prediction_count();
    let n = model.n_states();
    let order = topo_order(net)?;
    let mut values = DMatrix::zeros(n, n_p);

    for i in order {
        let node = &net.predictions[i];
        let mut self_loop = 0.0;
        let mut dependent = DVector::<f64>::zeros(n);
        let mut feature_term = DVector::<f64>::zeros(n);
        let (p, f) = match node.condition {
            Some(a) => (&model.p_action[a], &features.by_action[a]),
            None => (&model.p_policy, &features.by_policy),
        };
        for edge in &node.edges {
            match edge.target {
                NodeRef::Prediction(j) if j == i => self_loop += edge.weight,
                NodeRef::Prediction(j) => {
                    dependent += values.column(j) * edge.weight;
                }
                NodeRef::Feature(k) => {
                    feature_term += f.column(k) * edge.weight;
                }
            }
        }
        let b = p * dependent + feature_term;
        let y = if self_loop == 0.0 {
            b
        } else {
            let system = DMatrix::identity(n, n) - p * self_loop;
            system.lu().solve(&b).ok_or(OracleError::Singular)?
        };
        values.set_column(i, &y);
    }

    let residual = fixed_point_residual(net, model, features, &values);
    if residual > FIXED_POINT_TOL {
        return Err(OracleError::Residual(residual));
    }
    Ok(values)
}

/// Max-abs residual of the full stacked affine system, recomputed from
/// scratch; the layer-wise solve must satisfy it everywhere.
pub fn fixed_point_residual(
    net: &QuestionNetwork,
    model: &ExactModel,
    features: &ModelFeatureOracle,
    values: &DMatrix<f64>,
) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, node) in net.predictions.iter().enumerate() {
        let (p, f) = match node.condition {
            Some(a) => (&model.p_action[a], &features.by_action[a]),
            None => (&model.p_policy, &features.by_policy),
        };
        let mut bootstrap = DVector::<f64>::zeros(model.n_states());
        let mut feature_term = DVector::<f64>::zeros(model.n_states());
        for edge in &node.edges {
            match edge.target {
                NodeRef::Prediction(j) => bootstrap += values.column(j) * edge.weight,
                NodeRef::Feature(k) => feature_term += f.column(k) * edge.weight,
            }
        }
        let rhs = p * bootstrap + feature_term;
        worst = worst.max((values.column(i) - rhs).abs().max());
    }
    worst
}

/// Prediction nodes ordered so that every non-self-loop prediction edge
/// points to an earlier entry.
fn topo_order(net: &QuestionNetwork) -> Result<Vec<usize>, OracleError> {
    let n_p = net.prediction_count();
    let mut indegree = vec![0usize; n_p];
    let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); n_p];
    for (i, node) in net.predictions.iter().enumerate() {
        for edge in &node.edges {
            if let NodeRef::Prediction(j) = edge.target {
                if j >= n_p {
                    return Err(OracleError::InvalidNetwork(format!(
                        "prediction {i} references missing node {j}"
                    )));
                }
                if j != i {
                    indegree[i] += 1;
                    dependents[j].push(i);
                }
            }
        }
    }
    let mut ready: Vec<usize> = (0..n_p).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n_p);
    while let Some(i) = ready.pop() {
        order.push(i);
        for &d in &dependents[i] {
            indegree[d] -= 1;
            if indegree[d] == 0 {
                ready.push(d);
            }
        }
    }
    if order.len() != n_p {
        return Err(OracleError::InvalidNetwork(
            "cycle through prediction edges".to_string(),
        ));
    }
    Ok(order)
}

/// Long-form CSV of per-(state, node) values. Rows use interior coordinates
/// (0..6); the header is `state_row,state_col,node_id,value`.
pub fn solution_csv(model: &ExactModel, values: &DMatrix<f64>) -> String {
    let mut out = String::from("state_row,state_col,node_id,value\n");
    for (s, &(r, c)) in model.states.iter().enumerate() {
        for node in 0..values.ncols() {
            out.push_str(&format!("{},{},{},{}\n", r - 1, c - 1, node, values[(s, node)]));
        }
    }
    out
}

/// Long-form CSV of per-state values, header `state_row,state_col,value`.
pub fn values_csv(model: &ExactModel, values: &DVector<f64>) -> String {
    let mut out = String::from("state_row,state_col,value\n");
    for (s, &(r, c)) in model.states.iter().enumerate() {
        out.push_str(&format!("{},{},{}\n", r - 1, c - 1, values[s]));
    }
    out
}
