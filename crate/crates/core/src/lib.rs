//! Statistically robust Wasserstein distributionally robust optimization.
//!
//! The ambiguity set around an empirical distribution `D_n` composes a
//! Wasserstein ball of radius `eps` (adversarial budget) with a KL ball of
//! radius `gamma` (statistical budget):
//!
//! ```text
//! U(D_n) = { D' : exists D'' with W_p(D_n, D'') <= eps and KL(D'' || D') <= gamma }
//! ```
//!
//! The crate provides
//!
//! - [`model`] / [`data`]: small classifiers with hand-written gradients and datasets,
//! - [`metrics`]: exact Wasserstein, KL, TV and Levy-Prokhorov computations,
//! - [`reweight`]: the KL-constrained re-weighting of per-sample losses,
//! - [`adversary`]: PGD and the penalised (UDR-style) adversarial search,
//! - [`oracle`]: brute-force evaluation of the robust loss, its dual, and a minimax check,
//! - [`certificates`]: generalization certificate calculators and a Monte Carlo audit,
//! - [`harness`]: the re-weighted adversarial training loop, evaluation and experiment sweeps.

pub mod adversary;
pub mod certificates;
pub mod data;
pub mod distribution;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod reweight;
pub mod simplex;

pub use data::{Dataset, Sample};
pub use distribution::{AmbiguityParams, DiscreteDistribution};
pub use error::{Error, Result};
pub use model::{Activation, Arch, ModelParams};
