//! Jump-diffusion asset model, its maximum-likelihood calibration and
//! Monte-Carlo simulation, and an LSTM consumption-investment policy trained
//! under constant or wealth-driven relative risk aversion.

pub mod calibration;
pub mod error;
pub mod io;
pub mod kou;
pub mod neural;
pub mod simulation;
pub mod special;
pub mod stats;
pub mod wdra;

pub use calibration::{calibrate, density_report, estimate_lambda_init, CalibrationConfig, CalibrationResult};
pub use error::{Error, Result};
pub use kou::{jump_size_density, log_likelihood, log_return_moments, return_density, KouParams, ReturnSample};
pub use simulation::{log_returns, simulate, PathSet, SimConfig};
pub use wdra::{compare, train, TrainConfig, TrainReport};
