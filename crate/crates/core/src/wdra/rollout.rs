//! Differentiable Monte-Carlo rollout of the policy through the wealth
//! recursion, and the expected-utility objective built on it.

use rayon::prelude::*;

use super::config::{FeatureScaling, TrainConfig, UtilityMode, WealthReference, N_FEATURES};
use crate::error::{Error, Result};
use crate::neural::{BoundPolicy, Matrix, PolicyNet, Tape, Var};
use crate::simulation::PathSet;

/// Tape nodes of one batch rollout. Every per-step node is `batch x 1`.
pub struct BatchGraph {
    /// Mean utility over the batch (1 x 1).
    pub objective: Var,
    /// Discounted utility of each path.
    pub totals: Var,
    /// Discounted consumption utility of each path (absent when `zeta = 0`).
    pub consumption_term: Option<Var>,
    pub terminal_term: Var,
    pub theta: Vec<Var>,
    /// Consumption rate `c_t = c_raw_t * w_t`.
    pub consumption: Vec<Var>,
    /// `w_0 .. w_T`.
    pub wealth: Vec<Var>,
    /// Wealth before flooring, `w_1 .. w_T`.
    pub pre_floor: Vec<Var>,
}

fn utility(tape: &mut Tape, x: Var, w: Var, w_ref: Var, cfg: &TrainConfig) -> Var {
    match cfg.utility {
        UtilityMode::Crra { rho } => {
            let e = tape.scalar(1.0 - rho);
            tape.box_cox(x, e)
        }
        UtilityMode::Wdra { coeffs } => {
            let ratio = tape.div(w, w_ref);
            let lin = tape.scale(ratio, coeffs.b1);
            let lin = tape.offset(lin, coeffs.b0);
            let cube = tape.cube(ratio);
            let cube = tape.scale(cube, coeffs.b2);
            let rho = tape.add(lin, cube);
            let rho = tape.clamp(rho, cfg.rho_clip.0, cfg.rho_clip.1);
            let neg = tape.neg(rho);
            let e = tape.offset(neg, 1.0);
            tape.box_cox(x, e)
        }
    }
}

fn wealth_reference(tape: &mut Tape, w: Var, cfg: &TrainConfig) -> Var {
    match cfg.wealth_reference {
        WealthReference::Initial => tape.scalar(cfg.w0),
        WealthReference::BatchMean => tape.mean(w),
    }
}

/// Records the rollout of `prices` (one slice of `T + 1` prices per path)
/// under the bound policy.
pub fn build_batch(
    tape: &mut Tape,
    policy: &BoundPolicy,
    prices: &[&[f64]],
    cfg: &TrainConfig,
    scaling: &FeatureScaling,
) -> BatchGraph {
    let batch = prices.len();
    let horizon = prices[0].len() - 1;
    let dt = cfg.dt;

    let wealth_selector = tape.leaf(Matrix::row(vec![0.0, 1.0, 0.0]));
    let mut w = tape.leaf(Matrix::filled(batch, 1, cfg.w0));
    let mut state = policy.zero_state(tape, batch);
    let mut acc: Option<Var> = None;
    let mut graph_theta = Vec::with_capacity(horizon);
    let mut graph_c = Vec::with_capacity(horizon);
    let mut graph_w = Vec::with_capacity(horizon + 1);
    let mut graph_pre = Vec::with_capacity(horizon);
    graph_w.push(w);

    let [o0, o1, o2] = scaling.offset;
    let [k0, k1, k2] = scaling.scale;
    for t in 0..horizon {
        let time_feature = (t as f64 / horizon as f64 - o2) / k2;
        let mut fixed = Vec::with_capacity(batch * N_FEATURES);
        let mut ret = Vec::with_capacity(batch);
        for p in prices {
            fixed.extend_from_slice(&[((p[t] / p[0]).ln() - o0) / k0, 0.0, time_feature]);
            ret.push((p[t + 1] - p[t]) / p[t]);
        }
        let fixed = tape.leaf(Matrix::from_vec(batch, N_FEATURES, fixed));
        let wf = tape.scale(w, 1.0 / (cfg.w0 * k1));
        let wf = tape.offset(wf, -o1 / k1);
        let wpart = tape.mul(wf, wealth_selector);
        let x = tape.add(fixed, wpart);

        state = policy.step(tape, x, state);
        let (theta, c_raw) = policy.heads(tape, state.h);
        let c = tape.mul(c_raw, w);

        if cfg.zeta > 0.0 {
            let w_ref = wealth_reference(tape, w, cfg);
            let guarded = tape.offset(c, cfg.consumption_floor());
            let u = utility(tape, guarded, w, w_ref, cfg);
            let weight = cfg.zeta * (-cfg.eta_discount * t as f64 * dt).exp() * dt;
            let term = tape.scale(u, weight);
            acc = Some(match acc {
                Some(a) => tape.add(a, term),
                None => term,
            });
        }

        let ret = tape.leaf(Matrix::column(ret));
        let risky = tape.mul(theta, ret);
        let not_risky = tape.neg(theta);
        let not_risky = tape.offset(not_risky, 1.0);
        let riskless = tape.scale(not_risky, cfg.r * dt);
        let growth = tape.add(risky, riskless);
        let growth = tape.offset(growth, 1.0);
        let grown = tape.mul(w, growth);
        let spent = tape.scale(c, dt);
        let pre = tape.sub(grown, spent);
        w = tape.floor_at(pre, cfg.wealth_floor);

        graph_theta.push(theta);
        graph_c.push(c);
        graph_pre.push(pre);
        graph_w.push(w);
    }

    let w_ref = wealth_reference(tape, w, cfg);
    let u_terminal = utility(tape, w, w, w_ref, cfg);
    let weight = (1.0 - cfg.zeta) * (-cfg.eta_discount * horizon as f64 * dt).exp();
    let terminal = tape.scale(u_terminal, weight);
    let totals = match acc {
        Some(a) => tape.add(a, terminal),
        None => terminal,
    };
    let objective = tape.mean(totals);
    BatchGraph {
        objective,
        totals,
        consumption_term: acc,
        terminal_term: terminal,
        theta: graph_theta,
        consumption: graph_c,
        wealth: graph_w,
        pre_floor: graph_pre,
    }
}

/// Realised quantities of a forward rollout, one row per path.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub objective: f64,
    pub per_path: Vec<f64>,
    pub consumption_term: Vec<f64>,
    pub terminal_term: Vec<f64>,
    pub theta: Vec<Vec<f64>>,
    pub consumption: Vec<Vec<f64>>,
    pub wealth: Vec<Vec<f64>>,
    /// Number of (path, day) pairs where the wealth floor was binding.
    pub floor_hits: usize,
}

impl Rollout {
    pub fn terminal_wealth(&self) -> Vec<f64> {
        self.wealth.iter().map(|w| *w.last().expect("non-empty path")).collect()
    }
}

fn column(tape: &Tape, v: Var) -> Vec<f64> {
    tape.value(v).data().to_vec()
}

fn transpose_steps(tape: &Tape, steps: &[Var], batch: usize) -> Vec<Vec<f64>> {
    let mut rows = vec![Vec::with_capacity(steps.len()); batch];
    for &v in steps {
        for (row, &x) in rows.iter_mut().zip(tape.value(v).data()) {
            row.push(x);
        }
    }
    rows
}

fn check_horizon(paths: &PathSet, cfg: &TrainConfig) -> Result<()> {
    paths.validate()?;
    cfg.validate()?;
    if (paths.dt - cfg.dt).abs() > 1e-12 * cfg.dt {
        return Err(Error::Config(format!(
            "path step {} does not match configured dt {}",
            paths.dt, cfg.dt
        )));
    }
    Ok(())
}

fn rollout_chunk(
    net: &PolicyNet,
    prices: &[&[f64]],
    cfg: &TrainConfig,
    scaling: &FeatureScaling,
) -> Rollout {
    let mut tape = Tape::new();
    let bound = net.bind(&mut tape);
    let g = build_batch(&mut tape, &bound, prices, cfg, scaling);
    let batch = prices.len();
    let floor_hits = g
        .pre_floor
        .iter()
        .map(|&v| tape.value(v).data().iter().filter(|&&x| x <= cfg.wealth_floor).count())
        .sum();
    Rollout {
        objective: tape.value(g.objective).item(),
        per_path: column(&tape, g.totals),
        consumption_term: g
            .consumption_term
            .map_or_else(|| vec![0.0; batch], |v| column(&tape, v)),
        terminal_term: column(&tape, g.terminal_term),
        theta: transpose_steps(&tape, &g.theta, batch),
        consumption: transpose_steps(&tape, &g.consumption, batch),
        wealth: transpose_steps(&tape, &g.wealth, batch),
        floor_hits,
    }
}

/// Forward rollout of every path, evaluated in consecutive chunks of
/// `cfg.batch_size` paths (chunks run in parallel, results are merged in order).
pub fn rollout(
    paths: &PathSet,
    net: &PolicyNet,
    cfg: &TrainConfig,
    scaling: &FeatureScaling,
) -> Result<Rollout> {
    check_horizon(paths, cfg)?;
    let rows: Vec<&[f64]> = paths.prices.iter().map(Vec::as_slice).collect();
    let parts: Vec<Rollout> = rows
        .par_chunks(cfg.batch_size)
        .map(|chunk| rollout_chunk(net, chunk, cfg, scaling))
        .collect();
    let mut out = Rollout {
        objective: 0.0,
        per_path: Vec::with_capacity(rows.len()),
        consumption_term: Vec::with_capacity(rows.len()),
        terminal_term: Vec::with_capacity(rows.len()),
        theta: Vec::with_capacity(rows.len()),
        consumption: Vec::with_capacity(rows.len()),
        wealth: Vec::with_capacity(rows.len()),
        floor_hits: 0,
    };
    for part in parts {
        out.per_path.extend(part.per_path);
        out.consumption_term.extend(part.consumption_term);
        out.terminal_term.extend(part.terminal_term);
        out.theta.extend(part.theta);
        out.consumption.extend(part.consumption);
        out.wealth.extend(part.wealth);
        out.floor_hits += part.floor_hits;
    }
    out.objective = out.per_path.iter().sum::<f64>() / out.per_path.len() as f64;
    Ok(out)
}

/// Monte-Carlo estimate of the discounted expected utility of consumption and
/// terminal wealth under the policy.
pub fn objective(paths: &PathSet, net: &PolicyNet, cfg: &TrainConfig, scaling: &FeatureScaling) -> Result<f64> {
    rollout(paths, net, cfg, scaling).map(|r| r.objective)
}

/// Objective over all paths as a single batch, with its exact gradient with
/// respect to the flat policy parameters.
pub fn objective_gradient(
    paths: &PathSet,
    net: &PolicyNet,
    cfg: &TrainConfig,
    scaling: &FeatureScaling,
) -> Result<(f64, Vec<f64>)> {
    check_horizon(paths, cfg)?;
    let rows: Vec<&[f64]> = paths.prices.iter().map(Vec::as_slice).collect();
    let mut tape = Tape::new();
    let bound = net.bind(&mut tape);
    let g = build_batch(&mut tape, &bound, &rows, cfg, scaling);
    let grads = tape.backward(g.objective);
    Ok((tape.value(g.objective).item(), bound.flat_gradient(&tape, &grads)))
}
