//! Hierarchical explainable metric learning.
//!
//! Inputs are split into semantic segments. A small embedding model is
//! trained per leaf segment, then per combination of segments up a binary
//! schedule, each combined model starting from the average of its children's
//! weights. A pair of inputs is explained by a metric tree carrying the SNR
//! distance between their embeddings at every node.

pub mod data;
pub mod error;
pub mod eval;
pub mod hierarchy;
pub mod metric;
pub mod numerics;
pub mod rng;
pub mod tree;

pub use error::{HemlError, Result};
