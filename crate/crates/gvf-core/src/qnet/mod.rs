//! Question networks: layered graphs whose prediction nodes define general
//! value functions over transition features.
//!
//! A network has `n_features` feature nodes and a list of prediction nodes.
//! An edge from prediction node `i` to node `j` with weight `w` contributes
//! `w * y_j(t+1)` to the TD target of `i` (or `w * f_k(t+1)` when the target
//! is feature node `k`). A prediction node may be conditioned on an action,
//! in which case it only receives updates on steps where that action was
//! executed.
//!
//! Three constructors cover the networks used in the experiments:
//! discounted sums ([`QuestionNetwork::discounted_sum`]), full
//! action-conditional trees ([`QuestionNetwork::full_tree`]) and the seeded
//! random generator ([`QuestionNetwork::generate`]).

mod io;
mod validate;

pub use io::QnetParseError;
pub use validate::{ValidationReport, Violation};

use rand::Rng;
use thiserror::Error;

use crate::rng::chacha;

/// Reference to a node in the graph. Indices are dense within each kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeRef {
    Feature(usize),
    Prediction(usize),
}

/// A weighted edge from a prediction node to `target`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub target: NodeRef,
    pub weight: f64,
}

impl Edge {
    pub fn new(target: NodeRef, weight: f64) -> Self {
        Edge { target, weight }
    }
}

/// One prediction node: its layer, optional action condition (an index into
/// the network's action list) and outgoing edges.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionNode {
    pub layer: usize,
    pub condition: Option<usize>,
    pub edges: Vec<Edge>,
}

/// A question network. Immutable after construction; cheap to clone.
#[derive(Clone, Debug, PartialEq)]
pub struct QuestionNetwork {
    pub n_features: usize,
    pub actions: Vec<String>,
    pub predictions: Vec<PredictionNode>,
}

/// Arguments of the random network generator.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GeneratorConfig {
    pub n_features: usize,
    pub gamma: f64,
    pub actions: Vec<String>,
    pub depth: usize,
    pub repeat: usize,
    pub seed: u64,
}

#[derive(Debug, Error)]
pub enum QnetError {
    #[error("n_features must be at least 1")]
    NoFeatures,
    #[error("gamma must be in (0, 1], got {0}")]
    InvalidGamma(f64),
    #[error("action set must not be empty")]
    NoActions,
    #[error("tree depth must be at least 1")]
    ZeroDepth,
    #[error("repeat must be at least 1")]
    ZeroRepeat,
    #[error("repeat {repeat} exceeds the 2 * n_features = {candidates} layer-1 candidates")]
    RepeatTooLarge { repeat: usize, candidates: usize },
    #[error("cannot sample {requested} distinct parents from {available} candidates at layer {layer}")]
    InfeasibleSampling {
        layer: usize,
        requested: usize,
        available: usize,
    },
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), QnetError> {
        if self.n_features == 0 {
            return Err(QnetError::NoFeatures);
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(QnetError::InvalidGamma(self.gamma));
        }
        if self.actions.is_empty() {
            return Err(QnetError::NoActions);
        }
        if self.repeat == 0 {
            return Err(QnetError::ZeroRepeat);
        }
        // Layer 1 samples parents without replacement from the feature nodes
        // plus the layer-0 prediction nodes.
        if self.repeat > 2 * self.n_features {
            return Err(QnetError::RepeatTooLarge {
                repeat: self.repeat,
                candidates: 2 * self.n_features,
            });
        }
        Ok(())
    }
}

impl QuestionNetwork {
    /// One discounted-sum prediction node per feature: a weight-1 edge to its
    /// own feature and a self-loop with weight `gamma`.
    pub fn discounted_sum(n_features: usize, gamma: f64) -> Result<Self, QnetError> {
        if n_features == 0 {
            return Err(QnetError::NoFeatures);
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(QnetError::InvalidGamma(gamma));
        }
        let predictions = (0..n_features)
            .map(|k| PredictionNode {
                layer: 0,
                condition: None,
                edges: vec![
                    Edge::new(NodeRef::Feature(k), 1.0),
                    Edge::new(NodeRef::Prediction(k), gamma),
                ],
            })
            .collect();
        Ok(QuestionNetwork {
            n_features,
            actions: Vec::new(),
            predictions,
        })
    }

    /// Full action-conditional tree of the given depth over a single feature.
    ///
    /// Every node at tree depth `d >= 2` has a weight-1 edge to its parent
    /// prediction node and a weight-1 skip edge to the feature node; depth-1
    /// nodes carry only the feature edge.
    pub fn full_tree(actions: &[String], depth: usize) -> Result<Self, QnetError> {
        if actions.is_empty() {
            return Err(QnetError::NoActions);
        }
        if depth == 0 {
            return Err(QnetError::ZeroDepth);
        }
        let mut predictions: Vec<PredictionNode> = Vec::new();
        // Parents of the current layer; the feature node acts as the root.
        let mut previous: Vec<Option<usize>> = vec![None];
        for layer in 1..=depth {
            let mut created = Vec::new();
            for a_idx in 0..actions.len() {
                for &parent in &previous {
                    let edges = match parent {
                        None => vec![Edge::new(NodeRef::Feature(0), 1.0)],
                        Some(p) => vec![
                            Edge::new(NodeRef::Prediction(p), 1.0),
                            Edge::new(NodeRef::Feature(0), 1.0),
                        ],
                    };
                    created.push(predictions.len());
                    predictions.push(PredictionNode {
                        layer,
                        condition: Some(a_idx),
                        edges,
                    });
                }
            }
            previous = created.into_iter().map(Some).collect();
        }
        Ok(QuestionNetwork {
            n_features: 1,
            actions: actions.to_vec(),
            predictions,
        })
    }

    /// The random question network generator.
    ///
    /// Layer 0 holds one discounted-sum prediction node per feature. Each
    /// deeper layer adds `repeat` nodes per action, every node with a
    /// weight-1 edge to a parent sampled without replacement from the
    /// previous layer's leaves and a weight-1 edge to a uniformly random
    /// feature node. For layer 1 the leaves are the feature nodes together
    /// with the layer-0 prediction nodes, so a layer-1 node may connect to a
    /// feature node only.
    ///
    /// Sampling order is pinned for reproducibility: actions in list order,
    /// parents by a Fisher-Yates prefix shuffle of the leaf list, then one
    /// root draw per created node.
    pub fn generate(config: &GeneratorConfig) -> Result<Self, QnetError> {
        config.validate()?;
        let mut rng = chacha(config.seed);
        let mut predictions: Vec<PredictionNode> = Vec::new();

        // Leaf list in creation order: f0, p0, f1, p1, ...
        let mut leaves: Vec<NodeRef> = Vec::with_capacity(2 * config.n_features);
        for k in 0..config.n_features {
            leaves.push(NodeRef::Feature(k));
            leaves.push(NodeRef::Prediction(predictions.len()));
            predictions.push(PredictionNode {
                layer: 0,
                condition: None,
                edges: vec![
                    Edge::new(NodeRef::Feature(k), 1.0),
                    Edge::new(NodeRef::Prediction(k), config.gamma),
                ],
            });
        }

        for layer in 1..=config.depth {
            if config.repeat > leaves.len() {
                return Err(QnetError::InfeasibleSampling {
                    layer,
                    requested: config.repeat,
                    available: leaves.len(),
                });
            }
            let mut expanded = Vec::with_capacity(config.repeat * config.actions.len());
            for a_idx in 0..config.actions.len() {
                let parents = sample_without_replacement(&mut rng, &leaves, config.repeat);
                for parent in parents {
                    let root = rng.random_range(0..config.n_features);
                    expanded.push(NodeRef::Prediction(predictions.len()));
                    predictions.push(PredictionNode {
                        layer,
                        condition: Some(a_idx),
                        edges: vec![
                            Edge::new(parent, 1.0),
                            Edge::new(NodeRef::Feature(root), 1.0),
                        ],
                    });
                }
            }
            leaves = expanded;
        }

        Ok(QuestionNetwork {
            n_features: config.n_features,
            actions: config.actions.clone(),
            predictions,
        })
    }

    pub fn prediction_count(&self) -> usize {
        self.predictions.len()
    }

    /// Highest layer index present (0 for a bare discounted-sum network).
    pub fn max_layer(&self) -> usize {
        self.predictions.iter().map(|p| p.layer).max().unwrap_or(0)
    }

    /// Number of prediction nodes per layer, indexed by layer.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.max_layer() + 1];
        for p in &self.predictions {
            sizes[p.layer] += 1;
        }
        sizes
    }

    pub fn action_index(&self, name: &str) -> Option<usize> {
        self.actions.iter().position(|a| a == name)
    }
}

/// First `k` entries of a Fisher-Yates shuffle of `pool`.
fn sample_without_replacement<T: Copy>(
    rng: &mut impl Rng,
    pool: &[T],
    k: usize,
) -> Vec<T> {
    debug_assert!(k <= pool.len());
    let mut items = pool.to_vec();
    for i in 0..k {
        let j = rng.random_range(i..items.len());
        items.swap(i, j);
    }
    items.truncate(k);
    items
}

/// Action names "0", "1", ... for anonymous action sets.
pub fn numbered_actions(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}
