//! Instance-dependent dropout architecture construction.
//!
//! A fully connected sigmoid/softmax network is shared by a growing set of
//! dropout architectures. Each architecture is a binary mask over the hidden
//! units; instances are partitioned among architectures by a uniform process
//! mixture model, every architecture's mask is refined by simulated annealing
//! against the likelihood of its members, and the shared weights are trained
//! by masked backpropagation.
//!
//! Modules:
//! - [`nn`]: the network itself (forward, masked backward, loss, SGD).
//! - [`upmm`]: the mixture model over masks (assignment, annealing, prediction).
//! - [`data`]: synthetic generator, CSV ingestion, standardization, splits.
//! - [`trainer`]: training loops for CODA and the DNN / dropout baselines,
//!   F1 and paired t-test evaluation, and the benchmark harness.
//! - [`cli`]: the `coda` command line (`gen-data`, `train`, `predict`, `benchmark`).

pub mod cli;
pub mod data;
pub mod error;
pub mod nn;
pub mod trainer;
pub mod upmm;

mod rng;

pub use error::{Error, Result};
