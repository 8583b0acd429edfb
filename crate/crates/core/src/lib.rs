//! Differentiable search over layer-wise connections and fusion functions
//! in graph neural networks, with the reverse-mode autodiff engine, graph
//! data handling, search loop and diagnostics it needs.

pub mod autodiff;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod graph;
pub mod layers;
pub mod parallel;
pub mod rng;
pub mod search;
pub mod supernet;

pub use error::{LlcError, Result};
