//! Structural validation. Reports violations instead of panicking so that
//! hand-built and deserialized networks can be checked before use.

use std::collections::HashMap;
use std::fmt;

use super::{NodeRef, QuestionNetwork};

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    /// Prediction node with no outgoing edges.
    EmptyEdges { node: usize },
    /// Edge target index out of range.
    DanglingTarget { node: usize, target: NodeRef },
    /// Condition references an action outside the action list.
    UnknownAction { node: usize, action: usize },
    /// Self-loop on a node outside layer 0.
    SelfLoopOutsideLayerZero { node: usize, layer: usize },
    /// Edge weight is neither 1 nor a self-loop discount in (0, 1].
    BadWeight { node: usize, weight: f64 },
    /// Two same-layer nodes with the same condition share a parent
    /// prediction node.
    DuplicateParent {
        layer: usize,
        action: usize,
        parent: usize,
        first: usize,
        second: usize,
    },
    /// Cycle through prediction edges other than self-loops.
    Cycle { node: usize },
    /// Prediction node that cannot reach any feature node.
    NotGrounded { node: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyEdges { node } => write!(f, "prediction {node} has no edges"),
            Violation::DanglingTarget { node, target } => {
                write!(f, "prediction {node} references missing node {target:?}")
            }
            Violation::UnknownAction { node, action } => {
                write!(f, "prediction {node} conditioned on unknown action index {action}")
            }
            Violation::SelfLoopOutsideLayerZero { node, layer } => {
                write!(f, "self-loop on prediction {node} in layer {layer} (only layer 0 allowed)")
            }
            Violation::BadWeight { node, weight } => {
                write!(f, "prediction {node} has edge weight {weight} outside {{1, gamma}}")
            }
            Violation::DuplicateParent {
                layer,
                action,
                parent,
                first,
                second,
            } => write!(
                f,
                "duplicate prediction: nodes {first} and {second} in layer {layer} share parent {parent} under action {action}"
            ),
            Violation::Cycle { node } => {
                write!(f, "cycle through prediction {node} (ignoring self-loops)")
            }
            Violation::NotGrounded { node } => {
                write!(f, "prediction {node} does not reach any feature node")
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            write!(f, "ok")
        } else {
            for v in &self.violations {
                writeln!(f, "{v}")?;
            }
            Ok(())
        }
    }
}

impl QuestionNetwork {
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let n_p = self.predictions.len();

        for (i, node) in self.predictions.iter().enumerate() {
            if node.edges.is_empty() {
                violations.push(Violation::EmptyEdges { node: i });
            }
            if let Some(a) = node.condition {
                if a >= self.actions.len() {
                    violations.push(Violation::UnknownAction { node: i, action: a });
                }
            }
            for edge in &node.edges {
                let dangling = match edge.target {
                    NodeRef::Feature(k) => k >= self.n_features,
                    NodeRef::Prediction(j) => j >= n_p,
                };
                if dangling {
                    violations.push(Violation::DanglingTarget {
                        node: i,
                        target: edge.target,
                    });
                    continue;
                }
                let is_self_loop = edge.target == NodeRef::Prediction(i);
                if is_self_loop {
                    if node.layer != 0 {
                        violations.push(Violation::SelfLoopOutsideLayerZero {
                            node: i,
                            layer: node.layer,
                        });
                    }
                    if !(edge.weight > 0.0 && edge.weight <= 1.0) {
                        violations.push(Violation::BadWeight {
                            node: i,
                            weight: edge.weight,
                        });
                    }
                } else if edge.weight != 1.0 {
                    violations.push(Violation::BadWeight {
                        node: i,
                        weight: edge.weight,
                    });
                }
            }
        }

        // Duplicate constraint: within a (layer, action) group no two nodes
        // may share a parent prediction node. Self-loops are not parents.
        let mut seen: HashMap<(usize, usize, usize), usize> = HashMap::new();
        for (i, node) in self.predictions.iter().enumerate() {
            let Some(action) = node.condition else {
                continue;
            };
            for edge in &node.edges {
                if let NodeRef::Prediction(parent) = edge.target {
                    if parent == i || parent >= n_p {
                        continue;
                    }
                    match seen.entry((node.layer, action, parent)) {
                        std::collections::hash_map::Entry::Occupied(e) => {
                            violations.push(Violation::DuplicateParent {
                                layer: node.layer,
                                action,
                                parent,
                                first: *e.get(),
                                second: i,
                            });
                        }
                        std::collections::hash_map::Entry::Vacant(e) => {
                            e.insert(i);
                        }
                    }
                }
            }
        }

        // Cycle detection and feature reachability over prediction edges,
        // ignoring self-loops. Iterative DFS; fuzzed inputs can contain
        // arbitrarily long chains.
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Unvisited,
            InProgress,
            Done,
        }
        let mut marks = vec![Mark::Unvisited; n_p];
        let mut grounded = vec![false; n_p];
        let mut cyclic = vec![false; n_p];

        for root in 0..n_p {
            if marks[root] != Mark::Unvisited {
                continue;
            }
            // Stack of (node, next edge offset).
            let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
            marks[root] = Mark::InProgress;
            while let Some(&(i, start)) = stack.last() {
                let mut offset = start;
                let mut descend = None;
                while offset < self.predictions[i].edges.len() {
                    let edge = self.predictions[i].edges[offset];
                    offset += 1;
                    match edge.target {
                        NodeRef::Feature(k) if k < self.n_features => grounded[i] = true,
                        NodeRef::Prediction(j) if j < n_p && j != i => match marks[j] {
                            Mark::Unvisited => {
                                descend = Some(j);
                                break;
                            }
                            Mark::InProgress => cyclic[i] = true,
                            Mark::Done => {
                                if grounded[j] {
                                    grounded[i] = true;
                                }
                            }
                        },
                        _ => {}
                    }
                }
                stack.last_mut().expect("frame present").1 = offset;
                match descend {
                    Some(j) => {
                        marks[j] = Mark::InProgress;
                        stack.push((j, 0));
                    }
                    None => {
                        marks[i] = Mark::Done;
                        stack.pop();
                        if let Some(&(parent, _)) = stack.last() {
                            if grounded[i] {
                                grounded[parent] = true;
                            }
                        }
                    }
                }
            }
        }
        for i in 0..n_p {
            if cyclic[i] {
                violations.push(Violation::Cycle { node: i });
            }
        }
        for i in 0..n_p {
            if !grounded[i] && !self.predictions[i].edges.is_empty() {
                violations.push(Violation::NotGrounded { node: i });
            }
        }

        ValidationReport { violations }
    }
}
