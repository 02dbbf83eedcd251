//! Attention-head pruning for fairness.
//!
//! Masks over attention heads are scored by fairness and perplexity, either
//! measured directly or predicted by small regressors, and searched with
//! simulated annealing or with ranking baselines.

pub mod anneal;
pub mod baselines;
pub mod error;
pub mod io;
pub mod mask;
pub mod metrics;
pub mod oracle;
pub mod pareto;
pub mod report;
pub mod surrogate;
pub mod sweep;

pub use error::{Error, ErrorKind, Result};
pub use mask::{HeadMask, WeightBounds};
