//! Side-by-side CRRA and WDRA training on shared paths.

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::train::{train, TrainReport};
use crate::error::{Error, Result};
use crate::simulation::PathSet;
use crate::stats::{mean, std_dev, Histogram};

pub const HISTOGRAM_BINS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub crra_final_utility: f64,
    pub wdra_final_utility: f64,
    pub crra_theta_std: f64,
    pub wdra_theta_std: f64,
    pub crra_mean_terminal_wealth: f64,
    pub wdra_mean_terminal_wealth: f64,
    pub crra_mean_cumulative_consumption: f64,
    pub wdra_mean_cumulative_consumption: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub crra: TrainReport,
    pub wdra: TrainReport,
    /// Terminal wealth histograms over a shared range.
    pub crra_wealth_hist: Histogram,
    pub wdra_wealth_hist: Histogram,
    /// Investment-rate histograms over `[0, 1]`.
    pub crra_theta_hist: Histogram,
    pub wdra_theta_hist: Histogram,
    pub summary: ComparisonSummary,
}

fn all_theta(r: &TrainReport) -> Vec<f64> {
    r.final_rollout.theta.iter().flatten().copied().collect()
}

fn mean_cumulative_consumption(r: &TrainReport) -> f64 {
    let dt = r.config.dt;
    let per_path: Vec<f64> = r
        .final_rollout
        .consumption
        .iter()
        .map(|c| c.iter().sum::<f64>() * dt)
        .collect();
    mean(&per_path)
}

/// Trains both models on the same paths and summarises their differences.
pub fn compare(paths: &PathSet, config_crra: &TrainConfig, config_wdra: &TrainConfig) -> Result<ComparisonReport> {
    if config_crra.seed != config_wdra.seed {
        return Err(Error::Config("both models must share the same seed".into()));
    }
    let crra = train(paths, config_crra)?;
    let wdra = train(paths, config_wdra)?;

    let (wc, ww) = (crra.terminal_wealth(), wdra.terminal_wealth());
    let lo = wc.iter().chain(&ww).copied().fold(f64::INFINITY, f64::min);
    let hi = wc.iter().chain(&ww).copied().fold(f64::NEG_INFINITY, f64::max);
    let (tc, tw) = (all_theta(&crra), all_theta(&wdra));

    let summary = ComparisonSummary {
        crra_final_utility: crra.final_utility(),
        wdra_final_utility: wdra.final_utility(),
        crra_theta_std: std_dev(&tc),
        wdra_theta_std: std_dev(&tw),
        crra_mean_terminal_wealth: mean(&wc),
        wdra_mean_terminal_wealth: mean(&ww),
        crra_mean_cumulative_consumption: mean_cumulative_consumption(&crra),
        wdra_mean_cumulative_consumption: mean_cumulative_consumption(&wdra),
    };
    Ok(ComparisonReport {
        crra_wealth_hist: Histogram::new(&wc, HISTOGRAM_BINS, lo, hi),
        wdra_wealth_hist: Histogram::new(&ww, HISTOGRAM_BINS, lo, hi),
        crra_theta_hist: Histogram::new(&tc, HISTOGRAM_BINS, 0.0, 1.0),
        wdra_theta_hist: Histogram::new(&tw, HISTOGRAM_BINS, 0.0, 1.0),
        crra,
        wdra,
        summary,
    })
}
