//! Kou double-exponential jump-diffusion model.
//!
//! Log-prices follow
//!
//! ```text
//! ln S_t = ln S_0 + (mu - sigma^2/2) t + sigma B_t + sum_{i <= N_t} U_i
//! ```
//!
//! with `N_t` Poisson of rate `lambda` and jump sizes `U_i` drawn from a
//! shifted asymmetric double-exponential law located at `alpha`:
//!
//! ```text
//! f(y) = p eta1 e^{-eta1 (y - alpha)}  for y >= alpha
//!        q eta2 e^{ eta2 (y - alpha)}  for y <  alpha
//! ```
//!
//! Over a short step `dt` the daily log return is approximated with at most
//! one jump (Bernoulli with success probability `lambda dt`), which has the
//! closed-form density evaluated by [`return_density`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{ln_norm_cdf, ln_norm_pdf, log_add_exp, LN_SQRT_2PI};

/// Parameters of the jump-diffusion. `q = 1 - p` is never stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KouParams {
    /// Drift per year.
    pub mu: f64,
    /// Diffusion volatility per year.
    pub sigma: f64,
    /// Jump intensity per year.
    pub lambda: f64,
    /// Probability that a jump lands above `alpha`.
    pub p: f64,
    /// Decay rate of the upper branch.
    pub eta1: f64,
    /// Decay rate of the lower branch.
    pub eta2: f64,
    /// Location of the jump-size law (log scale).
    pub alpha: f64,
}

impl KouParams {
    pub fn new(
        mu: f64,
        sigma: f64,
        lambda: f64,
        p: f64,
        eta1: f64,
        eta2: f64,
        alpha: f64,
    ) -> Result<Self> {
        let params = Self {
            mu,
            sigma,
            lambda,
            p,
            eta1,
            eta2,
            alpha,
        };
        params.validate()?;
        Ok(params)
    }

    /// The estimated parameter vector reported for the one-year stock sample:
    /// (mu, sigma, lambda, p, eta1, eta2, alpha) = (-0.2438, 0.2579, 2, 0.0062, 1.0879, 0.2435, 0.2).
    pub fn paper() -> Self {
        Self {
            mu: -0.2438,
            sigma: 0.2579,
            lambda: 2.0,
            p: 0.0062,
            eta1: 1.0879,
            eta2: 0.2435,
            alpha: 0.2,
        }
    }

    pub fn q(&self) -> f64 {
        1.0 - self.p
    }

    pub fn validate(&self) -> Result<()> {
        fn check(name: &'static str, value: f64, ok: bool, constraint: &'static str) -> Result<()> {
            if ok && value.is_finite() {
                Ok(())
            } else {
                Err(Error::ParamDomain {
                    name,
                    value,
                    constraint,
                })
            }
        }
        check("mu", self.mu, true, "finite")?;
        check("sigma", self.sigma, self.sigma > 0.0, "sigma > 0")?;
        check("lambda", self.lambda, self.lambda >= 0.0, "lambda >= 0")?;
        check("p", self.p, self.p > 0.0 && self.p < 1.0, "0 < p < 1")?;
        check("eta1", self.eta1, self.eta1 > 1.0, "eta1 > 1")?;
        check("eta2", self.eta2, self.eta2 > 0.0, "eta2 > 0")?;
        check("alpha", self.alpha, true, "finite")?;
        Ok(())
    }

    /// Mean of a single jump size, `alpha + p/eta1 - q/eta2`.
    pub fn jump_mean(&self) -> f64 {
        self.alpha + self.p / self.eta1 - self.q() / self.eta2
    }

    /// Second raw moment of a single jump size.
    pub fn jump_second_moment(&self) -> f64 {
        let (p, q) = (self.p, self.q());
        let centered_mean = p / self.eta1 - q / self.eta2;
        let centered_second = 2.0 * p / (self.eta1 * self.eta1) + 2.0 * q / (self.eta2 * self.eta2);
        self.alpha * self.alpha + 2.0 * self.alpha * centered_mean + centered_second
    }
}

/// Daily (or other fixed-step) log returns.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSample {
    values: Vec<f64>,
    dt: f64,
}

impl ReturnSample {
    pub fn new(values: Vec<f64>, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Sample(format!("dt must be positive, got {dt}")));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Sample(format!("non-finite value at index {i}")));
        }
        Ok(Self { values, dt })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Sample mean and (n-1)-normalised standard deviation.
    pub fn mean_std(&self) -> (f64, f64) {
        mean_std(&self.values)
    }
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Density of a single jump size.
pub fn jump_size_density(y: f64, params: &KouParams) -> Result<f64> {
    params.validate()?;
    let d = y - params.alpha;
    Ok(if d >= 0.0 {
        params.p * params.eta1 * (-params.eta1 * d).exp()
    } else {
        params.q() * params.eta2 * (params.eta2 * d).exp()
    })
}

fn check_bernoulli(params: &KouParams, dt: f64) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::Sample(format!("dt must be positive, got {dt}")));
    }
    let ldt = params.lambda * dt;
    if ldt >= 1.0 {
        return Err(Error::ApproximationDomain(ldt));
    }
    Ok(())
}

/// ln g(x) for an already validated parameter set.
///
/// Each of the three mixture terms is assembled in log space so that the
/// `e^{...} Phi(...)` products never form `inf * 0`.
pub(crate) fn ln_return_density_unchecked(x: f64, params: &KouParams, dt: f64) -> f64 {
    let KouParams {
        mu,
        sigma,
        lambda,
        p,
        eta1,
        eta2,
        alpha,
    } = *params;
    let drift = (mu - 0.5 * sigma * sigma) * dt;
    let s = sigma * dt.sqrt();
    let s2 = s * s;
    let ldt = lambda * dt;

    let z0 = (x - drift) / s;
    let gauss = (-ldt).ln_1p() - s.ln() + ln_norm_pdf(z0);
    if ldt == 0.0 {
        return gauss;
    }
    let y = x - alpha - drift;
    let up = ldt.ln() + p.ln() + eta1.ln() + 0.5 * eta1 * eta1 * s2 - eta1 * y
        + ln_norm_cdf((y - eta1 * s2) / s);
    let down = ldt.ln() + (1.0 - p).ln() + eta2.ln() + 0.5 * eta2 * eta2 * s2 + eta2 * y
        + ln_norm_cdf(-(y + eta2 * s2) / s);
    log_add_exp(gauss, log_add_exp(up, down))
}

/// Natural log of the approximate one-step log-return density.
pub fn ln_return_density(x: f64, params: &KouParams, dt: f64) -> Result<f64> {
    params.validate()?;
    check_bernoulli(params, dt)?;
    Ok(ln_return_density_unchecked(x, params, dt))
}

/// Approximate density of a one-step log return under the Bernoulli jump
/// approximation. Reduces to the Gaussian density when `lambda = 0`.
pub fn return_density(x: f64, params: &KouParams, dt: f64) -> Result<f64> {
    ln_return_density(x, params, dt).map(f64::exp)
}

/// Gaussian density of the jump-free one-step log return.
pub fn diffusion_density(x: f64, params: &KouParams, dt: f64) -> f64 {
    let drift = (params.mu - 0.5 * params.sigma * params.sigma) * dt;
    let s = params.sigma * dt.sqrt();
    let z = (x - drift) / s;
    (-0.5 * z * z - LN_SQRT_2PI).exp() / s
}

/// Log of the smallest positive `f64`; log densities below it are treated as
/// a density that is numerically zero.
pub const LN_DENSITY_FLOOR: f64 = -744.4400719213812;

/// Sum of `ln g(x_i)` over the sample.
///
/// Returns `f64::NEG_INFINITY` when any point has numerically zero density;
/// never NaN.

pub fn log_likelihood(sample: &ReturnSample, params: &KouParams) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::Sample("empty sample".into()));
    }
    params.validate()?;
    check_bernoulli(params, sample.dt())?;
    let mut total = 0.0;
    for &x in sample.values() {
        let lg = ln_return_density_unchecked(x, params, sample.dt());
        if !(lg >= LN_DENSITY_FLOOR) {
            return Ok(f64::NEG_INFINITY);
        }
        total += lg;
    }
    Ok(total)
}

/// Exact mean and variance of the one-step log return under compound-Poisson
/// jumps, `((mu - sigma^2/2) dt + lambda dt E[U], sigma^2 dt + lambda dt E[U^2])`.
pub fn log_return_moments(params: &KouParams, dt: f64) -> Result<(f64, f64)> {
    params.validate()?;
    let mean = (params.mu - 0.5 * params.sigma * params.sigma) * dt
        + params.lambda * dt * params.jump_mean();
    let var = params.sigma * params.sigma * dt + params.lambda * dt * params.jump_second_moment();
    Ok((mean, var))
}
