//! Squared prediction gap (PG²) and the PGI² faithfulness metric for additive
//! ensembles of binary decision trees.
//!
//! The exact path ([`exact`]) evaluates `E[(f(x') - f(x))²]` in closed form
//! by enumerating leaf pairs with a double pre-order traversal, where `x'` is
//! `x` with the features of `S` independently perturbed. The [`sampling`]
//! module provides Monte Carlo and Halton-based quasi-Monte Carlo estimators
//! of the same quantity, and [`ranking`] / [`metrics`] build feature rankings
//! and aggregate faithfulness scores on top of it.

pub mod data;
pub mod error;
pub mod exact;
pub mod metrics;
pub mod model;
pub mod perturb;
pub mod ranking;
pub mod sampling;
pub mod synthetic;

pub use error::{Error, Result};
pub use exact::{leaf_pair_probabilities, pg2_brute_force, pg2_exact, ExactOptions, LeafPairTable};
pub use model::{ModelFormat, Node, Tree, TreeEnsemble};
pub use perturb::{Distribution, PerturbationSpec};
pub use ranking::{AttributionVector, Ranking};
pub use sampling::{EstimatorConfig, SamplingMethod};
