//! Canonical text form of a question network plus DOT export.
//!
//! The file format is versioned JSON with a fixed key order, so serializing
//! the same network always produces the same bytes. Conditions are stored as
//! action names and resolved against the action list on load.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Edge, NodeRef, PredictionNode, QuestionNetwork};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum QnetParseError {
    #[error("invalid network file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported network format version {0} (expected {FORMAT_VERSION})")]
    Version(u32),
    #[error("prediction {node}: unknown action id \"{action}\"")]
    UnknownAction { node: usize, action: String },
    #[error("prediction {node}, edge {edge}: unknown target kind \"{kind}\"")]
    UnknownTargetKind {
        node: usize,
        edge: usize,
        kind: String,
    },
    #[error("prediction {node}, edge {edge}: {kind} index {index} out of range")]
    TargetOutOfRange {
        node: usize,
        edge: usize,
        kind: &'static str,
        index: usize,
    },
    #[error("duplicate action id \"{0}\" in action list")]
    DuplicateAction(String),
    #[error("weight is not finite at prediction {node}, edge {edge}")]
    NonFiniteWeight { node: usize, edge: usize },
}

#[derive(Serialize, Deserialize)]
struct FileEdge {
    target_kind: String,
    target_index: usize,
    weight: f64,
}

#[derive(Serialize, Deserialize)]
struct FilePrediction {
    layer: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    condition: Option<String>,
    edges: Vec<FileEdge>,
}

#[derive(Serialize, Deserialize)]
struct FileNetwork {
    version: u32,
    n_features: usize,
    actions: Vec<String>,
    predictions: Vec<FilePrediction>,
}

impl QuestionNetwork {
    /// Canonical JSON form; byte-stable for a fixed network.
    pub fn to_json(&self) -> String {
        let file = FileNetwork {
            version: FORMAT_VERSION,
            n_features: self.n_features,
            actions: self.actions.clone(),
            predictions: self
                .predictions
                .iter()
                .map(|p| FilePrediction {
                    layer: p.layer,
                    condition: p.condition.map(|a| self.actions[a].clone()),
                    edges: p
                        .edges
                        .iter()
                        .map(|e| {
                            let (kind, index) = match e.target {
                                NodeRef::Feature(k) => ("feature", k),
                                NodeRef::Prediction(j) => ("prediction", j),
                            };
                            FileEdge {
                                target_kind: kind.to_string(),
                                target_index: index,
                                weight: e.weight,
                            }
                        })
                        .collect(),
                })
                .collect(),
        };
        let mut out = serde_json::to_string_pretty(&file).expect("network serializes");
        out.push('\n');
        out
    }

    pub fn from_json(text: &str) -> Result<Self, QnetParseError> {
        let file: FileNetwork = serde_json::from_str(text)?;
        if file.version != FORMAT_VERSION {
            return Err(QnetParseError::Version(file.version));
        }
        for (i, a) in file.actions.iter().enumerate() {
            if file.actions[..i].contains(a) {
                return Err(QnetParseError::DuplicateAction(a.clone()));
            }
        }
        let n_predictions = file.predictions.len();
        let mut predictions = Vec::with_capacity(n_predictions);
        for (node, p) in file.predictions.into_iter().enumerate() {
            let condition = match p.condition {
                None => None,
                Some(name) => match file.actions.iter().position(|a| *a == name) {
                    Some(idx) => Some(idx),
                    None => return Err(QnetParseError::UnknownAction { node, action: name }),
                },
            };
            let mut edges = Vec::with_capacity(p.edges.len());
            for (edge, e) in p.edges.into_iter().enumerate() {
                if !e.weight.is_finite() {
                    return Err(QnetParseError::NonFiniteWeight { node, edge });
                }
                let target = match e.target_kind.as_str() {
                    "feature" => {
                        if e.target_index >= file.n_features {
                            return Err(QnetParseError::TargetOutOfRange {
                                node,
                                edge,
                                kind: "feature",
                                index: e.target_index,
                            });
                        }
                        NodeRef::Feature(e.target_index)
                    }
                    "prediction" => {
                        if e.target_index >= n_predictions {
                            return Err(QnetParseError::TargetOutOfRange {
                                node,
                                edge,
                                kind: "prediction",
                                index: e.target_index,
                            });
                        }
                        NodeRef::Prediction(e.target_index)
                    }
                    other => {
                        return Err(QnetParseError::UnknownTargetKind {
                            node,
                            edge,
                            kind: other.to_string(),
                        })
                    }
                };
                edges.push(Edge::new(target, e.weight));
            }
            predictions.push(PredictionNode {
                layer: p.layer,
                condition,
                edges,
            });
        }
        Ok(QuestionNetwork {
            n_features: file.n_features,
            actions: file.actions,
            predictions,
        })
    }

    /// Graphviz export. Feature nodes are boxes, prediction nodes circles;
    /// self-loop discounts and action conditions are labeled.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph question_network {\n  rankdir=BT;\n");
        for k in 0..self.n_features {
            out.push_str(&format!("  f{k} [shape=box, label=\"f{k}\"];\n"));
        }
        for (i, p) in self.predictions.iter().enumerate() {
            let label = match p.condition {
                Some(a) => format!("p{i} [{}]", self.actions[a]),
                None => format!("p{i}"),
            };
            out.push_str(&format!("  p{i} [shape=circle, label=\"{label}\"];\n"));
        }
        for (i, p) in self.predictions.iter().enumerate() {
            for e in &p.edges {
                let target = match e.target {
                    NodeRef::Feature(k) => format!("f{k}"),
                    NodeRef::Prediction(j) => format!("p{j}"),
                };
                if e.weight == 1.0 {
                    out.push_str(&format!("  p{i} -> {target};\n"));
                } else {
                    out.push_str(&format!("  p{i} -> {target} [label=\"{}\"];\n", e.weight));
                }
            }
        }
        out.push_str("}\n");
        out
    }
}
