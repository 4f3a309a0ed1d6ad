//! Tree-based propensity score estimation with missing covariate data.
//!
//! The crate bundles the pieces needed to study how classification trees and
//! their ensembles behave when confounders are partially observed:
//!
//! * [`data`]: datasets with an explicit missingness mask and CSV I/O;
//! * [`stats`]: seeded random streams and small statistical primitives;
//! * [`cart`]: CART with surrogate splits or a missing-value branch;
//! * [`ensemble`]: bagged and boosted trees as propensity score models;
//! * [`impute`]: chained-equation multiple imputation and Rubin's rules;
//! * [`causal`]: ATT estimation by inverse probability weighting or matching;
//! * [`dgp`]: the simulation design with MCAR/MAR missingness;
//! * [`harness`]: the Monte Carlo driver and performance metrics;
//! * [`appendix`]: exact checks of the weighting identities and counterexamples.

pub mod appendix;
pub mod cart;
pub mod causal;
pub mod data;
pub mod dgp;
pub mod ensemble;
pub mod error;
pub mod harness;
pub mod impute;
pub mod logistic;
pub mod stats;

pub use error::{Error, Result};
