//! Maximum-likelihood calibration of [`KouParams`] with Adam.
//!
//! The optimizer works on an unconstrained vector `raw`:
//!
//! | parameter | map                            |
//! |-----------|--------------------------------|
//! | mu        | `raw[0]`                       |
//! | sigma     | `exp(raw[1])`                  |
//! | lambda    | `lambda_max * sigmoid(raw[2])` |
//! | p         | `sigmoid(raw[3])`              |
//! | eta1      | `1 + exp(raw[4])`              |
//! | eta2      | `exp(raw[5])`                  |
//! | alpha     | `raw[6]`                       |
//!
//! where `lambda_max = 0.999 / dt` keeps the one-jump-per-step approximation
//! valid. Every `raw` therefore maps to a valid parameter set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kou::{log_likelihood, mean_std, LN_DENSITY_FLOOR, return_density, KouParams, ReturnSample};
use crate::neural::{adam_step, AdamHyper, AdamState, Matrix, ParamBlock, Tape, Var};
use crate::special::{sigmoid, LN_SQRT_2PI};

pub const PARAM_NAMES: [&str; 7] = ["mu", "sigma", "lambda", "p", "eta1", "eta2", "alpha"];

/// Window (in iterations) over which the best log-likelihood must keep improving.
pub const CONVERGENCE_WINDOW: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub max_iters: usize,
    pub learning_rate: f64,
    /// Relative change of the best log-likelihood over [`CONVERGENCE_WINDOW`]
    /// iterations below which the run counts as converged.
    pub tolerance: f64,
    pub init: Option<KouParams>,
    /// Recorded for provenance; the optimizer itself draws no random numbers.
    pub seed: u64,
    /// Keep lambda at its initial value.
    pub freeze_lambda: bool,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            max_iters: 4000,
            learning_rate: 0.02,
            tolerance: 1e-8,
            init: None,
            seed: 0,
            freeze_lambda: false,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        if let Some(p) = &self.init {
            p.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub log_likelihood: f64,
    pub best_log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub params: KouParams,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub trace: Vec<TracePoint>,
    pub converged: bool,
}

/// Bijection between valid parameters and the unconstrained optimizer space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reparam {
    pub lambda_max: f64,
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl Reparam {
    pub fn for_dt(dt: f64) -> Self {
        Self {
            lambda_max: 0.999 / dt,
        }
    }

    pub fn to_params(&self, raw: &[f64; 7]) -> KouParams {
        KouParams {
            mu: raw[0],
            sigma: raw[1].exp(),
            lambda: self.lambda_max * sigmoid(raw[2]),
            p: sigmoid(raw[3]),
            eta1: 1.0 + raw[4].exp(),
            eta2: raw[5].exp(),
            alpha: raw[6],
        }
    }

    pub fn to_raw(&self, p: &KouParams) -> Result<[f64; 7]> {
        p.validate()?;
        if p.lambda <= 0.0 || p.lambda >= self.lambda_max {
            return Err(Error::ParamDomain {
                name: "lambda",
                value: p.lambda,
                constraint: "0 < lambda < 0.999/dt for calibration",
            });
        }
        Ok([
            p.mu,
            p.sigma.ln(),
            logit(p.lambda / self.lambda_max),
            logit(p.p),
            (p.eta1 - 1.0).ln(),
            p.eta2.ln(),
            p.alpha,
        ])
    }
}

/// Natural parameters as tape nodes.
struct NaturalVars {
    mu: Var,
    sigma: Var,
    lambda: Option<Var>,
    p: Var,
    eta1: Var,
    eta2: Var,
    alpha: Var,
}

/// Tape expression for `sum_i ln g(x_i)`.
/// Returns the per-point log densities and their sum.
fn build_log_likelihood(tape: &mut Tape, data: Var, v: &NaturalVars, dt: f64) -> (Var, Var) {
    let sig2 = tape.square(v.sigma);
    let half_sig2 = tape.scale(sig2, -0.5);
    let drift_rate = tape.add(v.mu, half_sig2);
    let drift = tape.scale(drift_rate, dt);
    let s = tape.scale(v.sigma, dt.sqrt());
    let s2 = tape.square(s);
    let ln_s = tape.ln(s);

    let centered = tape.sub(data, drift);
    let z0 = tape.div(centered, s);
    let z0sq = tape.square(z0);
    let ln_phi = tape.scale(z0sq, -0.5);
    let ln_phi = tape.offset(ln_phi, -LN_SQRT_2PI);
    let gauss = tape.sub(ln_phi, ln_s);

    let Some(lambda) = v.lambda else {
        return (gauss, tape.sum(gauss));
    };
    let ldt = tape.scale(lambda, dt);
    let no_jump = tape.neg(ldt);
    let no_jump = tape.offset(no_jump, 1.0);
    let ln_no_jump = tape.ln(no_jump);
    let gauss = tape.add(gauss, ln_no_jump);
    let ln_ldt = tape.ln(ldt);

    let y = tape.sub(centered, v.alpha);

    // upward branch
    let ln_p = tape.ln(v.p);
    let ln_eta1 = tape.ln(v.eta1);
    let eta1_sq = tape.square(v.eta1);
    let var_term = tape.mul(eta1_sq, s2);
    let var_term = tape.scale(var_term, 0.5);
    let lin = tape.mul(v.eta1, y);
    let shift = tape.mul(v.eta1, s2);
    let arg = tape.sub(y, shift);
    let arg = tape.div(arg, s);
    let ln_cdf = tape.ln_norm_cdf(arg);
    let consts = tape.add(ln_ldt, ln_p);
    let consts = tape.add(consts, ln_eta1);
    let consts = tape.add(consts, var_term);
    let up = tape.sub(ln_cdf, lin);
    let up = tape.add(up, consts);

    // downward branch
    let neg_p = tape.neg(v.p);
    let q = tape.offset(neg_p, 1.0);
    let ln_q = tape.ln(q);
    let ln_eta2 = tape.ln(v.eta2);
    let eta2_sq = tape.square(v.eta2);
    let var_term = tape.mul(eta2_sq, s2);
    let var_term = tape.scale(var_term, 0.5);
    let lin = tape.mul(v.eta2, y);
    let shift = tape.mul(v.eta2, s2);
    let arg = tape.add(y, shift);
    let arg = tape.div(arg, s);
    let arg = tape.neg(arg);
    let ln_cdf = tape.ln_norm_cdf(arg);
    let consts = tape.add(ln_ldt, ln_q);
    let consts = tape.add(consts, ln_eta2);
    let consts = tape.add(consts, var_term);
    let down = tape.add(ln_cdf, lin);
    let down = tape.add(down, consts);

    let jumps = tape.log_add_exp(up, down);
    let per_point = tape.log_add_exp(gauss, jumps);
    (per_point, tape.sum(per_point))
}

/// Sum value, or the sentinel when some point's density is numerically zero.
fn checked_total(tape: &Tape, per_point: Var, total: Var) -> f64 {
    if tape.value(per_point).data().iter().any(|&lg| !(lg >= LN_DENSITY_FLOOR)) {
        f64::NEG_INFINITY
    } else {
        tape.value(total).item()
    }
}

fn data_leaf(tape: &mut Tape, sample: &ReturnSample) -> Var {
    tape.leaf(Matrix::column(sample.values().to_vec()))
}

/// Log-likelihood and its gradient with respect to the natural parameters
/// `(mu, sigma, lambda, p, eta1, eta2, alpha)`, by reverse-mode differentiation.
pub fn log_likelihood_gradient(sample: &ReturnSample, params: &KouParams) -> Result<(f64, [f64; 7])> {
    params.validate()?;
    let mut tape = Tape::new();
    let data = data_leaf(&mut tape, sample);
    let leaves: Vec<Var> = [
        params.mu,
        params.sigma,
        params.lambda,
        params.p,
        params.eta1,
        params.eta2,
        params.alpha,
    ]
    .iter()
    .map(|&v| tape.scalar(v))
    .collect();
    let vars = NaturalVars {
        mu: leaves[0],
        sigma: leaves[1],
        lambda: (params.lambda > 0.0).then_some(leaves[2]),
        p: leaves[3],
        eta1: leaves[4],
        eta2: leaves[5],
        alpha: leaves[6],
    };
    let (per_point, ll) = build_log_likelihood(&mut tape, data, &vars, sample.dt());
    let grads = tape.backward(ll);
    let mut g = [0.0; 7];
    for (gi, &leaf) in g.iter_mut().zip(&leaves) {
        *gi = grads.get(leaf).map_or(0.0, |m| m.item());
    }
    Ok((checked_total(&tape, per_point, ll), g))
}

/// Log-likelihood and its gradient with respect to the unconstrained vector.
/// With `frozen_lambda = Some(l)` the lambda coordinate is ignored and has zero gradient.
pub fn log_likelihood_raw_gradient(
    sample: &ReturnSample,
    reparam: &Reparam,
    raw: &[f64; 7],
    frozen_lambda: Option<f64>,
) -> (f64, [f64; 7]) {
    let mut tape = Tape::new();
    let data = data_leaf(&mut tape, sample);
    let leaves: Vec<Var> = raw.iter().map(|&v| tape.scalar(v)).collect();
    let sigma = tape.exp(leaves[1]);
    let lambda = match frozen_lambda {
        Some(l) if l == 0.0 => None,
        Some(l) => Some(tape.scalar(l)),
        None => {
            let s = tape.sigmoid(leaves[2]);
            Some(tape.scale(s, reparam.lambda_max))
        }
    };
    let p = tape.sigmoid(leaves[3]);
    let e1 = tape.exp(leaves[4]);
    let eta1 = tape.offset(e1, 1.0);
    let eta2 = tape.exp(leaves[5]);
    let vars = NaturalVars {
        mu: leaves[0],
        sigma,
        lambda,
        p,
        eta1,
        eta2,
        alpha: leaves[6],
    };
    let (per_point, ll) = build_log_likelihood(&mut tape, data, &vars, sample.dt());
    let grads = tape.backward(ll);
    let mut g = [0.0; 7];
    for (gi, &leaf) in g.iter_mut().zip(&leaves) {
        *gi = grads.get(leaf).map_or(0.0, |m| m.item());
    }
    (checked_total(&tape, per_point, ll), g)
}

/// Annualised count of points outside `mean +- 3 s`.
pub fn estimate_lambda_init(sample: &ReturnSample) -> Result<f64> {
    if sample.len() < 30 {
        return Err(Error::Sample(format!(
            "need at least 30 points to count 3-sigma outliers, got {}",
            sample.len()
        )));
    }
    let (mean, sd) = sample.mean_std();
    let first = sample.values()[0];
    if sample.values().iter().all(|&x| x == first) || !(sd > 0.0) {
        return Err(Error::Sample("sample has zero variance".into()));
    }
    let outliers = sample
        .values()
        .iter()
        .filter(|&&x| (x - mean).abs() > 3.0 * sd)
        .count();
    Ok(outliers as f64 / (sample.len() as f64 * sample.dt()))
}

/// Mean and standard deviation of the points surviving repeated 3-sigma clipping.
fn clipped_moments(values: &[f64]) -> (f64, f64) {
    let mut kept: Vec<f64> = values.to_vec();
    for _ in 0..100 {
        let (m, s) = mean_std(&kept);
        let next: Vec<f64> = kept.iter().copied().filter(|x| (x - m).abs() <= 3.0 * s).collect();
        if next.len() == kept.len() || next.len() < 10 {
            return (m, s);
        }
        kept = next;
    }
    mean_std(&kept)
}

/// Starting point used when the config carries no explicit `init`.
///
/// Diffusion drift and volatility come from the moments of the 3-sigma-clipped
/// sample so that jumps do not inflate sigma; lambda comes from
/// [`estimate_lambda_init`] kept within the calibrable range.
pub fn default_init(sample: &ReturnSample) -> Result<KouParams> {
    let dt = sample.dt();
    let (m, s) = clipped_moments(sample.values());
    if !(s > 0.0) {
        return Err(Error::Sample("sample has zero variance".into()));
    }
    let sigma = s / dt.sqrt();
    let mu = m / dt + 0.5 * sigma * sigma;
    let horizon = sample.len() as f64 * dt;
    let lambda = estimate_lambda_init(sample)?.clamp(0.5 / horizon, 0.5 / dt);
    let params = KouParams {
        mu,
        sigma,
        lambda,
        p: 0.5,
        eta1: 2.0,
        eta2: 1.0,
        alpha: 0.0,
    };
    params.validate()?;
    Ok(params)
}

fn name_offending_param(sample: &ReturnSample, init: &KouParams, fallback: &KouParams) -> &'static str {
    let swap = |i: usize| {
        let mut p = *init;
        match i {
            0 => p.mu = fallback.mu,
            1 => p.sigma = fallback.sigma,
            2 => p.lambda = fallback.lambda,
            3 => p.p = fallback.p,
            4 => p.eta1 = fallback.eta1,
            5 => p.eta2 = fallback.eta2,
            _ => p.alpha = fallback.alpha,
        }
        p
    };
    for (i, name) in PARAM_NAMES.iter().enumerate() {
        if let Ok(ll) = log_likelihood(sample, &swap(i)) {
            if ll.is_finite() {
                return name;
            }
        }
    }
    "sigma"
}

/// Maximises the log-likelihood with Adam and returns the best iterate seen.
pub fn calibrate(sample: &ReturnSample, config: &CalibrationConfig) -> Result<CalibrationResult> {
    config.validate()?;
    if sample.is_empty() {
        return Err(Error::Sample("empty sample".into()));
    }
    let reparam = Reparam::for_dt(sample.dt());
    let init = match config.init {
        Some(p) => p,
        None => default_init(sample)?,
    };
    if init.lambda * sample.dt() >= 1.0 {
        return Err(Error::Initialization { param: "lambda" });
    }
    let ll0 = log_likelihood(sample, &init)?;
    if !ll0.is_finite() {
        let fallback = default_init(sample).unwrap_or(init);
        return Err(Error::Initialization {
            param: name_offending_param(sample, &init, &fallback),
        });
    }
    let frozen = config.freeze_lambda.then_some(init.lambda);
    let mut raw = if init.lambda == 0.0 {
        if frozen.is_none() {
            return Err(Error::Initialization { param: "lambda" });
        }
        reparam.to_raw(&KouParams { lambda: 1.0, ..init })?
    } else {
        reparam.to_raw(&init)?
    };

    let n = sample.len() as f64;
    let blocks: Vec<ParamBlock> = PARAM_NAMES
        .iter()
        .enumerate()
        .map(|(i, name)| ParamBlock {
            name: (*name).to_string(),
            start: i,
            len: 1,
        })
        .collect();
    let mut adam = AdamState::new(7, AdamHyper::with_learning_rate(config.learning_rate))?;
    let mut best_raw = raw;
    let mut best_ll = f64::NEG_INFINITY;
    let mut trace = Vec::with_capacity(config.max_iters.min(100_000));
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..config.max_iters {
        iterations = it + 1;
        let (ll, grad) = log_likelihood_raw_gradient(sample, &reparam, &raw, frozen);
        let usable = ll.is_finite() && grad.iter().all(|g| g.is_finite());
        if usable && ll > best_ll {
            best_ll = ll;
            best_raw = raw;
        }
        trace.push(TracePoint {
            iteration: it,
            log_likelihood: if ll.is_nan() { f64::NEG_INFINITY } else { ll },
            best_log_likelihood: best_ll,
        });
        if it >= CONVERGENCE_WINDOW {
            let earlier = trace[it - CONVERGENCE_WINDOW].best_log_likelihood;
            let rel = (best_ll - earlier).abs() / earlier.abs().max(1e-12);
            if rel < config.tolerance {
                converged = true;
                break;
            }
        }
        if !usable {
            // step left the numerically usable region: return to the best point with a smaller step
            raw = best_raw;
            adam.hyper.alpha *= 0.5;
            continue;
        }
        // minimise the negative mean log-likelihood
        let step: Vec<f64> = grad.iter().map(|g| -g / n).collect();
        adam_step(&mut raw, &step, &mut adam, &blocks)?;
    }

    let mut params = reparam.to_params(&best_raw);
    if let Some(l) = frozen {
        params.lambda = l;
    }
    let log_likelihood = log_likelihood(sample, &params)?;
    Ok(CalibrationResult {
        params,
        log_likelihood,
        iterations,
        trace,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityRow {
    pub x: f64,
    pub model_density: f64,
    pub kde_density: f64,
}

/// Silverman's rule-of-thumb bandwidth `1.06 s n^{-1/5}`.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let (_, s) = mean_std(values);
    1.06 * s * (values.len() as f64).powf(-0.2)
}

/// Gaussian kernel density estimate at `x`.
pub fn gaussian_kde(values: &[f64], bandwidth: f64, x: f64) -> f64 {
    let norm = 1.0 / (values.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    values
        .iter()
        .map(|v| {
            let z = (x - v) / bandwidth;
            (-0.5 * z * z).exp()
        })
        .sum::<f64>()
        * norm
}

/// Model density next to a Gaussian KDE of the sample on a uniform grid over
/// `[min - 3s, max + 3s]`.
pub fn density_report(params: &KouParams, sample: &ReturnSample, grid_size: usize) -> Result<Vec<DensityRow>> {
    if sample.is_empty() {
        return Err(Error::Sample("empty sample".into()));
    }
    if grid_size < 2 {
        return Err(Error::Config("grid_size must be at least 2".into()));
    }
    let values = sample.values();
    let (_, s) = mean_std(values);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min) - 3.0 * s;
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 3.0 * s;
    let bw = silverman_bandwidth(values);
    if !(bw > 0.0) {
        return Err(Error::Sample("sample has zero variance".into()));
    }
    let step = (hi - lo) / (grid_size - 1) as f64;
    (0..grid_size)
        .map(|i| {
            let x = lo + i as f64 * step;
            Ok(DensityRow {
                x,
                model_density: return_density(x, params, sample.dt())?,
                kde_density: gaussian_kde(values, bw, x),
            })
        })
        .collect()
}
