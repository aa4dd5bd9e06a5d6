//! Simulation and analysis of federated random reshuffling with compressed communication.
//!
//! Clients hold equal-size ridge-regression datasets. Each round every client runs one
//! shuffled pass of local gradient steps from the server iterate and uploads a compressed
//! message; the server averages. The [`theory`] module evaluates the convergence bounds on
//! the same problems, and [`harness`] drives configured experiments to CSV traces.

pub mod algorithms;
pub mod compress;
pub mod data;
pub mod error;
pub mod fixtures;
pub mod harness;
pub mod problem;
pub mod rng;
pub mod shuffle;
pub mod theory;

pub use algorithms::{run, Algorithm, EpochRecord, InitialPoint, RunConfig, Trace};
pub use compress::{CompressorKind, CompressorSpec};
pub use error::{Error, Result};
pub use problem::{ClientData, DenseVector, FederatedProblem, SmoothnessConstants};
pub use shuffle::{Permutation, ShuffleMode};
pub use theory::{MethodParams, Theory, TheoryReport};
