//! Triple classification on knowledge graphs framed as a debate.
//!
//! Two reinforcement-learning agents walk the graph from the subject of a
//! query triple. The first collects paths supporting the triple, the second
//! paths refuting it. A sum-pooling judge reads all paths together with the
//! query relation and object and outputs a truth score in `(0, 1)`.
//!
//! Crate layout:
//! - [`kg`]: vocabularies, TSV loading, the augmented adjacency index and
//!   dataset splitting with corrupted negatives.
//! - [`env`]: the walk MDP and debate orchestration.
//! - [`autodiff`]: a small reverse-mode tape over `f64` vectors, Adam and
//!   checkpoints.
//! - [`policy`]: LSTM agents.
//! - [`judge`]: the argument classifier.
//! - [`trainer`]: REINFORCE, judge fitting, evaluation and metrics.
//! - [`fixtures`]: small graphs used by tests, demos and the CLI.

pub mod autodiff;
pub mod env;
pub mod error;
pub mod fixtures;
pub mod judge;
pub mod kg;
pub mod model;
pub mod policy;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
