//! Consumption-investment objective under constant or wealth-driven risk
//! aversion, and the policy training loop.

pub mod compare;
pub mod config;
pub mod rollout;
pub mod train;
pub mod utility;

pub use compare::{compare, ComparisonReport, ComparisonSummary, HISTOGRAM_BINS};
pub use config::{FeatureScaling, TrainConfig, UtilityMode, WealthReference, N_FEATURES};
pub use rollout::{build_batch, objective, objective_gradient, rollout, BatchGraph, Rollout};
pub use train::{train, train_from, TrainReport};
pub use utility::{crra_utility, risk_aversion, wdra_utility, wealth_step, RiskAversionCoeffs};
