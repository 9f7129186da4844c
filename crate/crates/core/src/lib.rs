//! ridgeBART: Bayesian additive regression trees whose leaves are linear
//! combinations of ridge functions `phi(omega . z + b)`.
//!
//! Trees route on covariates `x`; each leaf evaluates a small ridge expansion
//! in smoothing variables `z`. The Gibbs sampler integrates out the leaf outer
//! weights when it proposes tree changes, so one tree update costs time linear
//! in the number of observations.
//!
//! ```no_run
//! use ridgebart::{dgp, sampler, PriorConfig, PriorSettings};
//!
//! let sim = dgp::generate_friedman(500, 1.0, 0, 7);
//! let config = PriorConfig::calibrate(&PriorSettings::default(), &sim.data).unwrap();
//! let samples = sampler::run_chain(&sim.data, &config, 2000, 1000, 1, 7).unwrap();
//! let summary = sampler::predict(&samples, sim.data.x(), sim.data.z(), 0.95).unwrap();
//! println!("{:?}", summary[0]);
//! ```

pub mod cli;
pub mod config;
pub mod data;
pub mod dgp;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod ridge;
pub mod rng;
pub mod sampler;
pub mod stats;
pub mod tree;

pub use config::{Branching, PriorConfig, PriorSettings};
pub use data::{ColumnKind, Dataset, Matrix, Outcome};
pub use error::{Error, Result};
pub use model::{ChainMeta, Ensemble, LeafParams, PosteriorSamples};
pub use ridge::Activation;
pub use tree::{DecisionRule, NodeId, RidgeTree};
