//! Tree ensembles used as propensity score models: bagged CART with
//! surrogate splits and gradient-boosted CART with a missing-value branch
//! whose iteration count is chosen by covariate balance.

mod bagging;
mod balance;
mod boosting;

pub use bagging::{fit_bagged, fit_bagged_on_resamples, predict_ps_bagged, BaggedModel};
pub use balance::{mean_ks_balance, BalanceEvaluator};
pub use boosting::{fit_boosted, predict_ps_boosted, BoostConfig, BoostedModel};
