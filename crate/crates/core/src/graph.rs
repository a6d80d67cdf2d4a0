//! Star-graph topology: N arms of lengths `L_j` meeting at one vertex.
//!
//! Every arm carries its own coordinate `x ∈ [0, L_j]` with `x = 0` at the
//! shared vertex. Outer ends are Dirichlet; the vertex imposes continuity
//! and a vanishing sum of outgoing derivatives.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("a star graph needs at least one arm")]
    NoArms,
    #[error("arm {arm} has non-positive or non-finite length {length}")]
    BadLength { arm: usize, length: f64 },
}

/// A metric star graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphRepr", into = "GraphRepr")]
pub struct StarGraph {
    arm_lengths: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphRepr {
    arm_lengths: Vec<f64>,
}

impl TryFrom<GraphRepr> for StarGraph {
    type Error = GraphError;

    fn try_from(r: GraphRepr) -> Result<Self, Self::Error> {
        StarGraph::new(r.arm_lengths)
    }
}

impl From<StarGraph> for GraphRepr {
    fn from(g: StarGraph) -> Self {
        GraphRepr {
            arm_lengths: g.arm_lengths,
        }
    }
}

impl StarGraph {
    pub fn new(arm_lengths: Vec<f64>) -> Result<Self, GraphError> {
        if arm_lengths.is_empty() {
            return Err(GraphError::NoArms);
        }
        for (arm, &length) in arm_lengths.iter().enumerate() {
            if !(length.is_finite() && length > 0.0) {
                return Err(GraphError::BadLength { arm, length });
            }
        }
        Ok(Self { arm_lengths })
    }

    /// Three arms of lengths `(40, 40+√2, 40+√3)`.
    pub fn default_three_arm() -> Self {
        Self::new(vec![40.0, 40.0 + 2f64.sqrt(), 40.0 + 3f64.sqrt()]).expect("valid lengths")
    }

    pub fn arm_count(&self) -> usize {
        self.arm_lengths.len()
    }

    pub fn arm_length(&self, arm: usize) -> f64 {
        self.arm_lengths[arm]
    }

    pub fn arm_lengths(&self) -> &[f64] {
        &self.arm_lengths
    }

    pub fn total_length(&self) -> f64 {
        self.arm_lengths.iter().sum()
    }

    pub fn longest_arm(&self) -> f64 {
        self.arm_lengths.iter().copied().fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_and_bad_lengths() {
        assert_eq!(StarGraph::new(vec![]), Err(GraphError::NoArms));
        assert!(matches!(
            StarGraph::new(vec![1.0, 0.0]),
            Err(GraphError::BadLength { arm: 1, .. })
        ));
        assert!(StarGraph::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn serde_validates() {
        let g: Result<StarGraph, _> = serde_json::from_str(r#"{"arm_lengths":[1.0,-2.0]}"#);
        assert!(g.is_err());
        let g: StarGraph = serde_json::from_str(r#"{"arm_lengths":[1.0,2.0]}"#).unwrap();
        assert_eq!(g.arm_count(), 2);
        assert_eq!(g.total_length(), 3.0);
    }
}
