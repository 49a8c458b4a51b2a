//! Monte-Carlo price paths on a daily grid.
//!
//! Each path draws its jump times by accumulating `Exp(lambda)` inter-arrival
//! times over the horizon, floors them onto day indices and attaches an i.i.d.
//! double-exponential size to every jump. Daily log increments are the
//! Gaussian diffusion step plus the jumps landing on that day.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kou::KouParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub s0: f64,
    pub n_days: usize,
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            s0: 100.0,
            n_days: 247,
            n_paths: 100,
            dt: 1.0 / 247.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.s0 > 0.0 && self.s0.is_finite()) {
            return Err(Error::Config(format!("s0 must be positive, got {}", self.s0)));
        }
        if self.n_days == 0 {
            return Err(Error::Config("n_days must be at least 1".into()));
        }
        if self.n_paths == 0 {
            return Err(Error::Config("n_paths must be at least 1".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        Ok(())
    }
}

/// Simulated prices, one row per path with `n_days + 1` columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSet {
    pub prices: Vec<Vec<f64>>,
    pub seed: u64,
    pub params: KouParams,
    pub dt: f64,
}

impl PathSet {
    pub fn n_paths(&self) -> usize {
        self.prices.len()
    }

    pub fn n_days(&self) -> usize {
        self.prices.first().map_or(0, |p| p.len().saturating_sub(1))
    }

    pub fn s0(&self) -> f64 {
        self.prices[0][0]
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.prices.first() else {
            return Err(Error::Config("path set has no paths".into()));
        };
        let width = first.len();
        if width < 2 {
            return Err(Error::Config("paths need at least two prices".into()));
        }
        let s0 = first[0];
        for (i, row) in self.prices.iter().enumerate() {
            if row.len() != width {
                return Err(Error::Shape(format!("path {i} has {} prices, expected {width}", row.len())));
            }
            if row[0] != s0 {
                return Err(Error::Config(format!("path {i} does not start at s0 = {s0}")));
            }
            if let Some(k) = row.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::Config(format!("path {i} has non-positive price at day {k}")));
            }
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config("dt must be positive".into()));
        }
        Ok(())
    }

    /// Subset of paths by index, keeping metadata.
    pub fn select(&self, indices: &[usize]) -> PathSet {
        PathSet {
            prices: indices.iter().map(|&i| self.prices[i].clone()).collect(),
            seed: self.seed,
            params: self.params,
            dt: self.dt,
        }
    }
}

/// Per-path simulation diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct SimDiagnostics {
    pub jump_counts: Vec<usize>,
}

fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

fn jump_size(rng: &mut ChaCha8Rng, params: &KouParams, up: &Exp<f64>, down: &Exp<f64>) -> f64 {
    if rng.random::<f64>() < params.p {
        params.alpha + up.sample(rng)
    } else {
        params.alpha - down.sample(rng)
    }
}

fn simulate_path(params: &KouParams, config: &SimConfig, index: usize) -> (Vec<f64>, usize) {
    let mut rng = path_rng(config.seed, index);
    let n = config.n_days;
    let horizon = n as f64 * config.dt;

    let mut jumps = vec![0.0; n];
    let mut n_jumps = 0;
    if params.lambda > 0.0 {
        let arrival = Exp::new(params.lambda).expect("lambda > 0");
        let up = Exp::new(params.eta1).expect("eta1 > 0");
        let down = Exp::new(params.eta2).expect("eta2 > 0");
        let mut t = arrival.sample(&mut rng);
        while t < horizon {
            let day = ((t / config.dt).floor() as usize).min(n - 1);
            jumps[day] += jump_size(&mut rng, params, &up, &down);
            n_jumps += 1;
            t += arrival.sample(&mut rng);
        }
    }

    let drift = (params.mu - 0.5 * params.sigma * params.sigma) * config.dt;
    let vol = params.sigma * config.dt.sqrt();
    let mut prices = Vec::with_capacity(n + 1);
    prices.push(config.s0);
    let mut s = config.s0;
    for jump in jumps {
        let z: f64 = StandardNormal.sample(&mut rng);
        s *= (drift + vol * z + jump).exp();
        prices.push(s);
    }
    (prices, n_jumps)
}

fn check_params(params: &KouParams) -> Result<()> {
    // zero volatility is a valid degenerate case for path generation
    if params.sigma == 0.0 {
        KouParams { sigma: 1.0, ..*params }.validate()
    } else {
        params.validate()
    }
}

/// Simulates `n_paths` independent paths. Path `i` uses its own RNG stream
/// derived from `(seed, i)`, so results do not depend on thread count or on
/// how many other paths are generated.
pub fn simulate(params: &KouParams, config: &SimConfig) -> Result<PathSet> {
    simulate_with_diagnostics(params, config).map(|(p, _)| p)
}

pub fn simulate_with_diagnostics(
    params: &KouParams,
    config: &SimConfig,
) -> Result<(PathSet, SimDiagnostics)> {
    check_params(params)?;
    config.validate()?;
    let (prices, jump_counts): (Vec<_>, Vec<_>) = (0..config.n_paths)
        .into_par_iter()
        .map(|i| simulate_path(params, config, i))
        .unzip();
    let paths = PathSet {
        prices,
        seed: config.seed,
        params: *params,
        dt: config.dt,
    };
    if let Err(e) = paths.validate() {
        return Err(Error::Config(format!("simulation produced an invalid path set: {e}")));
    }
    Ok((paths, SimDiagnostics { jump_counts }))
}

/// `ln(S_{k+1} / S_k)` for every path and day.
pub fn log_returns(paths: &PathSet) -> Vec<Vec<f64>> {
    paths
        .prices
        .iter()
        .map(|row| row.windows(2).map(|w| (w[1] / w[0]).ln()).collect())
        .collect()
}
