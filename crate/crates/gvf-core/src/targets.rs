//! TD bootstrap targets and update masks for every prediction node.
//!
//! For node i the target is `sum_j W_ij y_j(t+1) + sum_k W_ik f_k(t+1)`,
//! with the bootstrap answers treated as constants (semi-gradient TD).
//! Action-conditioned nodes are masked out on steps where their action was
//! not executed. On terminal steps every target is zero by convention.

use thiserror::Error;

use crate::qnet::{NodeRef, QuestionNetwork};

#[derive(Debug, Error)]
pub enum TargetError {
    #[error("feature vector length {got} does not match n_features {expected}")]
    FeatureLength { expected: usize, got: usize },
    #[error("answer vector length {got} does not match prediction count {expected}")]
    AnswerLength { expected: usize, got: usize },
}

/// Per-node targets with the action-conditioning mask.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetBatch {
    pub targets: Vec<f64>,
    pub mask: Vec<bool>,
}

impl TargetBatch {
    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Computes the target batch for one transition.
///
/// `executed` is the index of the executed action in the network's own
/// action list, or `None` when the executed action is not in that list (in
/// which case no conditioned node updates).
pub fn compute_targets(
    net: &QuestionNetwork,
    features_next: &[f64],
    next_answers: &[f64],
    executed: Option<usize>,
    terminal: bool,
) -> Result<TargetBatch, TargetError> {
    let n_p = net.prediction_count();
    if features_next.len() != net.n_features {
        return Err(TargetError::FeatureLength {
            expected: net.n_features,
            got: features_next.len(),
        });
    }
    if next_answers.len() != n_p {
        return Err(TargetError::AnswerLength {
            expected: n_p,
            got: next_answers.len(),
        });
    }

    if terminal {
        // y_T is 0 for every node; everything updates toward it.
        return Ok(TargetBatch {
            targets: vec![0.0; n_p],
            mask: vec![true; n_p],
        });
    }

    let mut targets = Vec::with_capacity(n_p);
    let mut mask = Vec::with_capacity(n_p);
    for node in &net.predictions {
        let mut acc = 0.0;
        for edge in &node.edges {
            acc += edge.weight
                * match edge.target {
                    NodeRef::Feature(k) => features_next[k],
                    NodeRef::Prediction(j) => next_answers[j],
                };
        }
        targets.push(acc);
        mask.push(match node.condition {
            None => true,
            Some(a) => executed == Some(a),
        });
    }
    Ok(TargetBatch { targets, mask })
}

/// Mean squared error over masked nodes and its gradient with respect to
/// the predictions. Unmasked nodes contribute neither loss nor gradient.
pub fn answer_loss(predictions: &[f64], batch: &TargetBatch) -> (f64, Vec<f64>) {
    assert_eq!(predictions.len(), batch.targets.len());
    let m = batch.masked_count();
    let mut grad = vec![0.0; predictions.len()];
    if m == 0 {
        return (0.0, grad);
    }
    let scale = 1.0 / m as f64;
    let mut loss = 0.0;
    for i in 0..predictions.len() {
        if batch.mask[i] {
            let err = predictions[i] - batch.targets[i];
            loss += err * err * scale;
            grad[i] = 2.0 * err * scale;
        }
    }
    (loss, grad)
}
