//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line.
//!
//! Fixed seeds are listed next to each check; the training runs use
//! `TRAIN_SEED` for both the paths and the policy.

use std::io::Write;
use std::time::{Duration, Instant};

use kou_wdra::calibration::{calibrate, log_likelihood_gradient, CalibrationConfig};
use kou_wdra::kou::{log_likelihood, log_return_moments, return_density, KouParams, ReturnSample};
use kou_wdra::neural::{adam_step, AdamHyper, AdamState, ParamBlock, PolicyNet};
use kou_wdra::simulation::{log_returns, simulate, PathSet, SimConfig};
use kou_wdra::special::norm_pdf;
use kou_wdra::stats::{mean, std_dev};
use kou_wdra::wdra::{
    compare, objective, objective_gradient, train, FeatureScaling, RiskAversionCoeffs, TrainConfig, UtilityMode,
    N_FEATURES,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DT: f64 = 1.0 / 247.0;
const TRAIN_SEED: u64 = 7;

fn report(id: u32, name: &str, ok: bool, detail: String, elapsed: Duration) {
    // Written straight to the stream so the line survives output capture.
    let line = format!(
        "criterion {id} [{name}]: {} ({detail}; {:.2}s)\n",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}

/// Simpson's rule on `n` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Breakpoints that resolve the narrow diffusion peak and the long jump tails.
const SEGMENTS: [(f64, f64, usize); 5] = [
    (-250.0, -1.0, 250_000),
    (-1.0, -0.25, 75_000),
    (-0.25, 0.25, 100_000),
    (0.25, 1.0, 75_000),
    (1.0, 60.0, 60_000),
];

#[test]
fn c1_density_correctness() {
    let start = Instant::now();
    let p = KouParams::paper();
    let g = |x: f64| return_density(x, &p, DT).unwrap();
    let mass: f64 = SEGMENTS.iter().map(|&(a, b, n)| simpson(g, a, b, n)).sum();

    let gauss = KouParams { lambda: 0.0, ..p };
    let drift = (p.mu - 0.5 * p.sigma * p.sigma) * DT;
    let s = p.sigma * DT.sqrt();
    let mut worst: f64 = 0.0;
    for i in -2000..=2000 {
        let x = drift + i as f64 * 5e-3 * s;
        let oracle = norm_pdf((x - drift) / s) / s;
        worst = worst.max((return_density(x, &gauss, DT).unwrap() - oracle).abs());
    }
    let elapsed = start.elapsed();
    let ok = (mass - 1.0).abs() < 1e-4 && worst < 1e-12 && elapsed < Duration::from_secs(1);
    report(
        1,
        "density",
        ok,
        format!("mass {mass:.10}, max gaussian gap {worst:.2e}"),
        elapsed,
    );
    assert!(ok);
}

/// Cumulative distribution of the approximate density on a dense grid.
struct NumericCdf {
    xs: Vec<f64>,
    cdf: Vec<f64>,
}

impl NumericCdf {
    fn new(p: &KouParams) -> Self {
        let mut xs = vec![SEGMENTS[0].0];
        let mut cdf = vec![0.0];
        let mut prev = return_density(xs[0], p, DT).unwrap();
        for &(a, b, n) in &SEGMENTS {
            let h = (b - a) / n as f64;
            for i in 1..=n {
                let x = a + i as f64 * h;
                let mid = return_density(x - 0.5 * h, p, DT).unwrap();
                let g = return_density(x, p, DT).unwrap();
                // Simpson on each cell
                cdf.push(cdf.last().unwrap() + h / 6.0 * (prev + 4.0 * mid + g));
                xs.push(x);
                prev = g;
            }
        }
        Self { xs, cdf }
    }

    fn at(&self, x: f64) -> f64 {
        match self.xs.binary_search_by(|v| v.total_cmp(&x)) {
            Ok(i) => self.cdf[i],
            Err(0) => 0.0,
            Err(i) if i == self.xs.len() => *self.cdf.last().unwrap(),
            Err(i) => {
                let t = (x - self.xs[i - 1]) / (self.xs[i] - self.xs[i - 1]);
                self.cdf[i - 1] + t * (self.cdf[i] - self.cdf[i - 1])
            }
        }
    }
}

#[test]
fn c2_simulation_fidelity() {
    let start = Instant::now();
    let p = KouParams::paper();
    let cfg = SimConfig {
        n_paths: 10_000,
        n_days: 247,
        seed: 2024,
        ..SimConfig::default()
    };
    let set = simulate(&p, &cfg).unwrap();
    let returns: Vec<f64> = log_returns(&set).into_iter().flatten().collect();
    let n = returns.len() as f64;

    let (m_true, v_true) = log_return_moments(&p, DT).unwrap();
    let m = mean(&returns);
    let v = returns.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m4 = returns.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    let se_mean = (v / n).sqrt();
    let se_var = ((m4 - v * v) / n).sqrt();
    let z_mean = (m - m_true) / se_mean;
    let z_var = (v - v_true) / se_var;

    let cdf = NumericCdf::new(&p);
    let mut head: Vec<f64> = returns[..100_000].to_vec();
    head.sort_by(f64::total_cmp);
    let k = head.len() as f64;
    let ks = head
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf.at(x);
            (f - i as f64 / k).abs().max(((i + 1) as f64 / k - f).abs())
        })
        .fold(0.0, f64::max);

    let elapsed = start.elapsed();
    let ok = z_mean.abs() < 3.0 && z_var.abs() < 3.0 && ks < 0.01 && elapsed < Duration::from_secs(30);
    report(
        2,
        "simulation",
        ok,
        format!("mean z {z_mean:.2}, variance z {z_var:.2}, KS {ks:.4}"),
        elapsed,
    );
    assert!(ok);
}

#[test]
fn c3_calibration_recovery() {
    let start = Instant::now();
    let truth = KouParams::paper();
    let mut hits = 0;
    let mut monotone = true;
    let mut lines = Vec::new();
    for seed in 0..10u64 {
        let set = simulate(
            &truth,
            &SimConfig {
                n_paths: 1,
                n_days: 10_000,
                seed,
                ..SimConfig::default()
            },
        )
        .unwrap();
        let sample = ReturnSample::new(log_returns(&set).remove(0), DT).unwrap();
        let fit = calibrate(&sample, &CalibrationConfig::default()).unwrap();
        let sigma_ok = ((fit.params.sigma - truth.sigma) / truth.sigma).abs() < 0.10;
        let mu_ok = (fit.params.mu - truth.mu).abs() < 0.1;
        if sigma_ok && mu_ok {
            hits += 1;
        }
        monotone &= fit
            .trace
            .windows(2)
            .all(|w| w[1].best_log_likelihood >= w[0].best_log_likelihood);
        lines.push(format!(
            "seed {seed}: mu {:.4} sigma {:.4} iters {}",
            fit.params.mu, fit.params.sigma, fit.iterations
        ));
    }
    for l in &lines {
        println!("  {l}");
    }
    let elapsed = start.elapsed();
    let ok = hits >= 8 && monotone && elapsed < Duration::from_secs(120);
    report(
        3,
        "calibration",
        ok,
        format!("{hits}/10 seeds recovered, best trace monotone: {monotone}"),
        elapsed,
    );
    assert!(ok);
}

fn rel_err(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        0.0
    } else {
        d / a.abs().max(b.abs())
    }
}

#[test]
fn c4_gradient_exactness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(44);

    // (a) likelihood
    let mut worst_ll: f64 = 0.0;
    for trial in 0..10u64 {
        let p = KouParams {
            mu: rng.random_range(-0.5..0.5),
            sigma: rng.random_range(0.15..0.5),
            lambda: rng.random_range(0.5..10.0),
            p: rng.random_range(0.1..0.9),
            eta1: rng.random_range(1.5..20.0),
            eta2: rng.random_range(0.5..20.0),
            alpha: rng.random_range(-0.1..0.1),
        };
        let sim = simulate(
            &p,
            &SimConfig {
                n_paths: 1,
                n_days: 60,
                seed: trial,
                ..SimConfig::default()
            },
        )
        .unwrap();
        let sample = ReturnSample::new(log_returns(&sim).remove(0), DT).unwrap();
        let (_, grad) = log_likelihood_gradient(&sample, &p).unwrap();
        let v = [p.mu, p.sigma, p.lambda, p.p, p.eta1, p.eta2, p.alpha];
        for i in 0..7 {
            let h = 1e-6 * v[i].abs().max(1.0);
            let shifted = |d: f64| {
                let mut w = v;
                w[i] += d;
                let q = KouParams::new(w[0], w[1], w[2], w[3], w[4], w[5], w[6]).unwrap();
                log_likelihood(&sample, &q).unwrap()
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            worst_ll = worst_ll.max(rel_err(grad[i], fd));
        }
    }

    // (b) training objective, T = 5, hidden = 4, 3 paths. Monthly steps and a
    // 1e-4 step keep every component above the round-off floor of the quotient.
    let mut worst_obj: f64 = 0.0;
    let scaling = FeatureScaling::default();
    let monthly = 1.0 / 12.0;
    let market = KouParams {
        mu: 0.08,
        sigma: 0.3,
        lambda: 3.0,
        p: 0.4,
        eta1: 10.0,
        eta2: 8.0,
        alpha: 0.0,
    };
    for trial in 0..10u64 {
        let paths = simulate(
            &market,
            &SimConfig {
                n_paths: 3,
                n_days: 5,
                dt: monthly,
                seed: 100 + trial,
                ..SimConfig::default()
            },
        )
        .unwrap();
        let cfg = TrainConfig {
            hidden_size: 4,
            batch_size: 3,
            dt: monthly,
            ..TrainConfig::default()
        };
        let mut net = PolicyNet::init(N_FEATURES, 4, 1000 + trial);
        let mut flat = net.to_flat();
        // lift the consumption head off the ReLU kink
        let n = flat.len();
        flat[n - 1] = 0.5;
        net.set_flat(&flat).unwrap();
        let (_, grad) = objective_gradient(&paths, &net, &cfg, &scaling).unwrap();
        for i in 0..n {
            let h = 1e-4 * flat[i].abs().max(1.0);
            let mut eval = |d: f64| {
                let mut w = flat.clone();
                w[i] += d;
                net.set_flat(&w).unwrap();
                objective(&paths, &net, &cfg, &scaling).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            worst_obj = worst_obj.max(rel_err(grad[i], fd));
        }
    }

    let elapsed = start.elapsed();
    let ok = worst_ll < 1e-5 && worst_obj < 1e-4 && elapsed < Duration::from_secs(10);
    report(
        4,
        "gradients",
        ok,
        format!("likelihood worst rel {worst_ll:.2e}, objective worst rel {worst_obj:.2e}"),
        elapsed,
    );
    assert!(ok);
}

#[test]
fn c5_adam_behaviour() {
    let start = Instant::now();
    let block = [ParamBlock {
        name: "x".into(),
        start: 0,
        len: 4,
    }];
    let alpha = 0.01;
    let mut x = vec![0.3, -1.0, 2.0, 0.0];
    let g = vec![0.5, -3.0, 1e-9, -1e6];
    let hyper = AdamHyper {
        alpha,
        epsilon: 0.0,
        ..AdamHyper::default()
    };
    let mut st = AdamState::new(4, hyper).unwrap();
    let before = x.clone();
    adam_step(&mut x, &g, &mut st, &block).unwrap();
    let first_ok = x
        .iter()
        .zip(&before)
        .zip(&g)
        .all(|((a, b), gi)| ((a - b) - (-alpha * gi.signum())).abs() < 1e-15);

    let one = [ParamBlock {
        name: "x".into(),
        start: 0,
        len: 1,
    }];
    let mut y = vec![1.0];
    let mut st = AdamState::new(1, AdamHyper::with_learning_rate(1e-2)).unwrap();
    for _ in 0..1000 {
        let grad = vec![2.0 * y[0]];
        adam_step(&mut y, &grad, &mut st, &one).unwrap();
    }
    let elapsed = start.elapsed();
    let ok = first_ok && y[0].abs() < 0.1;
    report(
        5,
        "adam",
        ok,
        format!("first step sign-exact: {first_ok}, |x| after 1000 steps {:.3e}", y[0].abs()),
        elapsed,
    );
    assert!(ok);
}

fn paper_paths(n_paths: usize, seed: u64) -> PathSet {
    simulate(
        &KouParams::paper(),
        &SimConfig {
            n_paths,
            n_days: 247,
            seed,
            ..SimConfig::default()
        },
    )
    .unwrap()
}

fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    xs.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
}

#[test]
fn c6_training_convergence() {
    let start = Instant::now();
    let paths = paper_paths(100, TRAIN_SEED);
    let cfg = TrainConfig {
        seed: TRAIN_SEED,
        ..TrainConfig::default()
    };
    let rep = train(&paths, &cfg).unwrap();
    let ma = moving_average(&rep.utility_trace, 100);
    let tail = &ma[ma.len() - 300..];
    let worst_drop = tail.windows(2).map(|w| w[0] - w[1]).fold(f64::NEG_INFINITY, f64::max);
    let improved = rep.final_utility() > rep.initial_utility;
    let elapsed = start.elapsed();
    let ok = improved && worst_drop <= 1e-3 && elapsed < Duration::from_secs(15 * 60);
    report(
        6,
        "training",
        ok,
        format!(
            "utility {:.6} -> {:.6}, largest moving-average drop {worst_drop:.2e}",
            rep.initial_utility,
            rep.final_utility()
        ),
        elapsed,
    );
    assert!(ok);
}

#[test]
fn c7_merton_oracle() {
    let start = Instant::now();
    let (mu, sigma, r, rho) = (0.10, 0.25, 0.02, 3.0);
    let merton = (mu - r) / (rho * sigma * sigma);
    let gbm = KouParams {
        mu,
        sigma,
        lambda: 0.0,
        ..KouParams::paper()
    };
    let paths = simulate(
        &gbm,
        &SimConfig {
            n_paths: 2000,
            n_days: 247,
            seed: TRAIN_SEED,
            ..SimConfig::default()
        },
    )
    .unwrap();
    let cfg = TrainConfig {
        zeta: 0.0,
        r,
        utility: UtilityMode::Crra { rho },
        batch_size: 200,
        learning_rate: 1e-2,
        epochs: 60,
        hidden_size: 8,
        seed: TRAIN_SEED,
        ..TrainConfig::default()
    };
    let rep = train(&paths, &cfg).unwrap();
    let all_theta: Vec<f64> = rep.final_rollout.theta.iter().flatten().copied().collect();
    let learned = mean(&all_theta);
    let elapsed = start.elapsed();
    let ok = (learned - merton).abs() <= 0.15 && elapsed < Duration::from_secs(15 * 60);
    report(
        7,
        "merton",
        ok,
        format!(
            "mean theta {learned:.4} (sd {:.4}) vs Merton {merton:.4}",
            std_dev(&all_theta)
        ),
        elapsed,
    );
    assert!(ok);
}

#[test]
fn c8_model_equivalence() {
    let start = Instant::now();
    let paths = paper_paths(30, 11);
    let base = TrainConfig {
        epochs: 15,
        hidden_size: 6,
        seed: 11,
        ..TrainConfig::default()
    };
    let rho = 3.0;
    let crra = TrainConfig {
        utility: UtilityMode::Crra { rho },
        ..base.clone()
    };
    let wdra = TrainConfig {
        utility: UtilityMode::Wdra {
            coeffs: RiskAversionCoeffs::constant(rho),
        },
        ..base
    };
    let a = train(&paths, &crra).unwrap();
    let b = train(&paths, &wdra).unwrap();
    let same_trace = a
        .utility_trace
        .iter()
        .zip(&b.utility_trace)
        .all(|(x, y)| x.to_bits() == y.to_bits());
    let same_weights = a
        .checkpoint
        .weights
        .iter()
        .zip(&b.checkpoint.weights)
        .all(|(x, y)| x.to_bits() == y.to_bits());
    let same_wealth = a.terminal_wealth() == b.terminal_wealth();
    let elapsed = start.elapsed();
    let ok = same_trace && same_weights && same_wealth && a.initial_utility.to_bits() == b.initial_utility.to_bits();
    report(
        8,
        "equivalence",
        ok,
        format!("trace {same_trace}, weights {same_weights}, terminal wealth {same_wealth}"),
        elapsed,
    );
    assert!(ok);
}

#[test]
fn c9_comparison_pipeline() {
    let start = Instant::now();
    let paths = paper_paths(40, 5);
    let base = TrainConfig {
        epochs: 20,
        hidden_size: 8,
        seed: 5,
        ..TrainConfig::default()
    };
    let crra = TrainConfig {
        utility: UtilityMode::Crra { rho: 3.0 },
        ..base.clone()
    };
    let rep = compare(&paths, &crra, &base).unwrap();
    let s = &rep.summary;
    let traces = rep.crra.utility_trace.len() == 20 && rep.wdra.utility_trace.len() == 20;
    let hists = rep.crra_wealth_hist.counts.iter().sum::<usize>() == 40
        && rep.wdra_wealth_hist.counts.iter().sum::<usize>() == 40
        && rep.crra_theta_hist.counts.iter().sum::<usize>() == 40 * 247
        && rep.wdra_theta_hist.counts.iter().sum::<usize>() == 40 * 247;
    let dists = rep.crra.theta_stats().len() == 247
        && rep.wdra.consumption_stats().len() == 247
        && rep.crra.final_rollout.theta.len() == 40;
    let fields = [
        s.crra_final_utility,
        s.wdra_final_utility,
        s.crra_theta_std,
        s.wdra_theta_std,
        s.crra_mean_terminal_wealth,
        s.wdra_mean_terminal_wealth,
        s.crra_mean_cumulative_consumption,
        s.wdra_mean_cumulative_consumption,
    ];
    let finite = fields.iter().all(|v| v.is_finite());
    let elapsed = start.elapsed();
    let ok = traces && hists && dists && finite;
    report(
        9,
        "comparison",
        ok,
        format!(
            "theta sd crra {:.4} / wdra {:.4}, mean consumption crra {:.4} / wdra {:.4}",
            s.crra_theta_std, s.wdra_theta_std, s.crra_mean_cumulative_consumption, s.wdra_mean_cumulative_consumption
        ),
        elapsed,
    );
    assert!(ok);
}
