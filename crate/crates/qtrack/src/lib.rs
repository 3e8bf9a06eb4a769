//! Hybrid quantum-classical graph neural network for charged-particle
//! track segment classification.
//!
//! The pipeline ingests (or synthesizes) collision events, applies barrel and
//! momentum selection cuts, builds directed doublet graphs with sparse
//! incidence matrices, and trains one of five GNN variants whose Edge and
//! Node Network blocks are either plain MLPs or hybrid MLP → parametrized
//! quantum circuit → MLP stacks simulated on an exact statevector backend.

pub mod autodiff;
pub mod cli;
pub mod error;
pub mod events;
pub mod graphs;
pub mod model;
pub mod quantum;
pub mod train;

pub use error::{Error, Result};
