//! Fractional belief propagation for Ising models.
//!
//! The fractional family interpolates between tree-re-weighted message passing
//! (`lambda = 0`, an upper bound on `log Z`) and loopy belief propagation
//! (`lambda = 1`, a lower bound on attractive models). The gap to the exact
//! partition function is a multiplicative correction that can be written as an
//! expectation under the product of node beliefs and estimated by sampling.
//!
//! Module map:
//!
//! - [`model`]: graphs, Ising instances, random ensembles, model files.
//! - [`trw_weights`]: edge appearance probabilities and spanning-tree certificates.
//! - [`fbp`]: the fractional message-passing solver and free-energy evaluation.
//! - [`analysis`]: lambda sweeps, derivatives and the search for the exact lambda.
//! - [`correction`]: the multiplicative correction, exact and sampled.
//! - [`oracle`]: brute-force ground truth and the zero-field transform.
//! - [`exact`]: exact log-sums over pairwise binary models (enumeration and elimination).

pub mod analysis;
pub mod correction;
pub mod error;
pub mod exact;
pub mod fbp;
pub mod model;
pub mod numeric;
pub mod oracle;
pub mod rng;
pub mod trw_weights;

pub use error::{Error, Result};
pub use fbp::{run_fbp, BeliefSet, FbpOptions, FbpResult, MessageSet, Schedule};
pub use model::{build_complete, build_grid, Graph, IsingModel};
pub use trw_weights::{edge_uniform_rho, rho_lambda, EdgeAppearance, SpanningTreeSet};
