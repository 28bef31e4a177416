//! The detection model: hierarchical-attention content encoder,
//! graph-attention propagation encoder, Gaussian latent fusion with
//! reconstruction and symmetric-KL regularizers, a gated classifier,
//! confidence routing, and the theory harness that exercises the
//! regularizers' claimed properties.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::tensor::{ParamSet, Tensor, TensorError};

pub mod content;
pub mod fusion;
pub mod graph;
pub mod model;
pub mod router;
pub mod theory;

pub use fusion::SklBreakdown;
pub use model::{
    build_example, DetectorConfig, DetectorExample, DetectorModel, EvalMetrics, TrainOutcome,
};
pub use router::{BaseClassifier, Route, RouterConfig};
pub use theory::{run_theory_harness, TheoryReport};

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("empty document: the content encoder needs at least one nonempty sentence")]
    EmptyDocument,
    #[error("empty cascade: the graph encoder needs at least one node")]
    EmptyGraph,
    #[error("non-positive variance in a Gaussian posterior")]
    NonPositiveVariance,
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("embedding failure: {0}")]
    Embed(#[from] crate::embed::EmbedError),
}

/// Per-pass leaf registry: parameters re-enter the tape as fresh leaf
/// tensors each forward pass, and their gradients are collected by name
/// after backward.
pub struct ParamTape {
    leaves: BTreeMap<String, Tensor>,
}

impl ParamTape {
    pub fn new(params: &ParamSet) -> ParamTape {
        ParamTape {
            leaves: params.iter().map(|(name, p)| (name.clone(), p.leaf())).collect(),
        }
    }

    /// Panics on an unknown name: parameter wiring is a programming error,
    /// not an input error.
    pub fn get(&self, name: &str) -> &Tensor {
        self.leaves
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn grads(&self) -> BTreeMap<String, Vec<f64>> {
        self.leaves.iter().map(|(n, t)| (n.clone(), t.grad())).collect()
    }
}
