//! Outlier-resistant nonnegative matrix factorization.
//!
//! The central solver, [`polish::solve_target_polish`], runs Fast-HALS against
//! a polished copy of the data in which poorly fitted entries are pulled
//! toward the global median, then finishes with a few weighted multiplicative
//! iterations on the original data. Weighted NMF baselines, corruption
//! generators, clustering metrics and a benchmark driver round out the crate.

pub mod bench;
pub mod corruption;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod io;
pub mod matrix;
pub mod metrics;
pub mod polish;
pub mod weights;

pub use engine::{FactorPair, Fit, InitMethod, SolveConfig};
pub use error::{Error, Result};
pub use matrix::DenseMatrix;
pub use metrics::LabelVector;
pub use polish::{solve_target_polish, PolishConfig, PolishFit};
pub use weights::{WeightKind, WeightScheme};
