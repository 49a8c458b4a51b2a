use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use kou_wdra::calibration::{calibrate, density_report, CalibrationConfig};
use kou_wdra::io;
use kou_wdra::kou::KouParams;
use kou_wdra::simulation::{simulate, PathSet, SimConfig};
use kou_wdra::stats::{DayStats, Histogram};
use kou_wdra::wdra::{
    compare, train, RiskAversionCoeffs, TrainConfig, TrainReport, UtilityMode, WealthReference,
};
use serde_json::json;

use crate::manifest::Recorder;
use crate::svg::{self, Series};
use crate::{CalibrateArgs, Cli, Command, SimulateArgs, TrainArgs, UtilityKind, WealthRef};

pub enum Outcome {
    Done,
    NotConverged,
}

/// `Input` maps to exit code 2, `Runtime` to 1.
pub enum Failure {
    Input(anyhow::Error),
    Runtime(anyhow::Error),
}

type Res<T> = std::result::Result<T, Failure>;

fn input<T>(r: kou_wdra::Result<T>) -> Res<T> {
    r.map_err(|e| Failure::Input(e.into()))
}

fn runtime<T, E: Into<anyhow::Error>>(r: std::result::Result<T, E>) -> Res<T> {
    r.map_err(|e| Failure::Runtime(e.into()))
}

fn resolve_seed(cli: &Cli) -> Res<u64> {
    match (cli.seed, cli.test_mode) {
        (Some(s), _) => Ok(s),
        (None, true) => Err(Failure::Input(anyhow::anyhow!("--seed is required in test mode"))),
        (None, false) => {
            let nanos = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_nanos() as u64)
                .unwrap_or(0);
            log::warn!("no --seed given, using time-derived seed {nanos}");
            Ok(nanos)
        }
    }
}

pub fn run(cli: &Cli) -> Res<Outcome> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Input(anyhow::anyhow!("--threads must be positive")));
        }
        runtime(rayon::ThreadPoolBuilder::new().num_threads(n).build_global())?;
    }
    let seed = resolve_seed(cli)?;
    match &cli.command {
        Command::Calibrate(a) => {
            check_input_exists(&a.returns)?;
            runtime(fs::create_dir_all(&cli.out_dir))?;
            cmd_calibrate(a, seed, &cli.out_dir, cli.plot)
        }
        Command::Simulate(a) => {
            runtime(fs::create_dir_all(&cli.out_dir))?;
            cmd_simulate(a, seed, &cli.out_dir, cli.plot)
        }
        Command::Train(a) => {
            check_input_exists(&a.paths)?;
            runtime(fs::create_dir_all(&cli.out_dir))?;
            cmd_train(a, seed, &cli.out_dir, cli.plot)
        }
        Command::Compare(a) => {
            check_input_exists(&a.paths)?;
            runtime(fs::create_dir_all(&cli.out_dir))?;
            cmd_compare(a, seed, &cli.out_dir, cli.plot)
        }
    }
}

fn check_input_exists(path: &Path) -> Res<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Input(anyhow::anyhow!("input file {} not found", path.display())))
    }
}

fn cmd_calibrate(a: &CalibrateArgs, seed: u64, out: &Path, plot: bool) -> Res<Outcome> {
    let mut rec = Recorder::new("calibrate", seed, out);
    runtime(rec.input(&a.returns))?;
    let sample = input(io::read_returns_csv(&a.returns, a.dt))?;
    let cfg = CalibrationConfig {
        max_iters: a.max_iters,
        learning_rate: a.learning_rate,
        tolerance: a.tolerance,
        seed,
        ..CalibrationConfig::default()
    };
    let result = input(calibrate(&sample, &cfg))?;
    let report = input(density_report(&result.params, &sample, a.grid))?;

    runtime(rec.write("params.json", &io::calibration_json(&result)))?;
    let p = rec.output("trace.csv");
    runtime(io::write_trace_csv(&p, &result.trace))?;
    let p = rec.output("density_report.csv");
    runtime(io::write_density_csv(&p, &report))?;
    if plot {
        let xs: Vec<f64> = report.iter().map(|r| r.x).collect();
        let chart = svg::line_chart(
            "Return density",
            &[
                Series {
                    label: "model",
                    xs: xs.clone(),
                    ys: report.iter().map(|r| r.model_density).collect(),
                },
                Series {
                    label: "KDE",
                    xs,
                    ys: report.iter().map(|r| r.kde_density).collect(),
                },
            ],
        );
        runtime(rec.write("density.svg", &chart))?;
        let chart = svg::line_chart(
            "Log-likelihood",
            &[Series {
                label: "best",
                xs: result.trace.iter().map(|t| t.iteration as f64).collect(),
                ys: result.trace.iter().map(|t| t.best_log_likelihood).collect(),
            }],
        );
        runtime(rec.write("trace.svg", &chart))?;
    }
    log::info!(
        "log-likelihood {:.4} after {} iterations (converged: {})",
        result.log_likelihood,
        result.iterations,
        result.converged
    );
    let config = json!({
        "returns": a.returns.display().to_string(),
        "dt": a.dt,
        "max_iters": cfg.max_iters,
        "learning_rate": cfg.learning_rate,
        "tolerance": cfg.tolerance,
        "grid": a.grid,
    });
    runtime(rec.finish(config))?;
    Ok(if result.converged { Outcome::Done } else { Outcome::NotConverged })
}

fn cmd_simulate(a: &SimulateArgs, seed: u64, out: &Path, plot: bool) -> Res<Outcome> {
    let mut rec = Recorder::new("simulate", seed, out);
    let params = match &a.params {
        Some(path) => {
            check_input_exists(path)?;
            runtime(rec.input(path))?;
            input(io::read_params_json(path))?
        }
        None => KouParams::paper(),
    };
    let cfg = SimConfig {
        s0: a.s0,
        n_days: a.days,
        n_paths: a.paths,
        dt: a.dt,
        seed,
    };
    let set = input(simulate(&params, &cfg))?;
    let csv = rec.output("paths.csv");
    runtime(io::write_paths_csv(&csv, &set))?;
    let side = rec.output("paths.json");
    runtime(io::write_paths_sidecar(&side, &set))?;
    if plot {
        let series: Vec<Series> = set
            .prices
            .iter()
            .take(20)
            .map(|row| Series {
                label: "",
                xs: (0..row.len()).map(|d| d as f64).collect(),
                ys: row.clone(),
            })
            .collect();
        runtime(rec.write("paths.svg", &svg::line_chart("Simulated prices", &series)))?;
    }
    let config = json!({
        "params": params,
        "s0": a.s0,
        "days": a.days,
        "paths": a.paths,
        "dt": a.dt,
    });
    runtime(rec.finish(config))?;
    Ok(Outcome::Done)
}

fn load_paths(a: &TrainArgs, rec: &mut Recorder) -> Res<PathSet> {
    runtime(rec.input(&a.paths))?;
    let side_path = io::sidecar_path(&a.paths);
    let sidecar = if side_path.is_file() {
        runtime(rec.input(&side_path))?;
        Some(input(io::read_sidecar(&side_path))?)
    } else {
        None
    };
    let set = input(io::read_paths_csv(&a.paths, sidecar.as_ref(), a.dt))?;
    if let Some(days) = a.days {
        if days != set.n_days() {
            return Err(Failure::Input(anyhow::anyhow!(
                "--days {days} does not match the {} days in {}",
                set.n_days(),
                a.paths.display()
            )));
        }
    }
    Ok(set)
}

fn base_config(a: &TrainArgs, seed: u64, dt: f64) -> TrainConfig {
    TrainConfig {
        zeta: a.zeta,
        eta_discount: a.eta,
        r: a.r,
        w0: a.w0,
        dt,
        wealth_reference: match a.wealth_ref {
            WealthRef::Initial => WealthReference::Initial,
            WealthRef::BatchMean => WealthReference::BatchMean,
        },
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        epochs: a.epochs,
        hidden_size: a.hidden,
        seed,
        wealth_floor: a.wealth_floor,
        ..TrainConfig::default()
    }
}

fn wdra_coeffs(a: &TrainArgs) -> RiskAversionCoeffs {
    let d = RiskAversionCoeffs::default();
    RiskAversionCoeffs {
        b0: a.b0.unwrap_or(d.b0),
        b1: a.b1.unwrap_or(d.b1),
        b2: a.b2.unwrap_or(d.b2),
    }
}

fn crra_config(a: &TrainArgs, seed: u64, dt: f64) -> TrainConfig {
    TrainConfig {
        utility: UtilityMode::Crra { rho: a.rho },
        ..base_config(a, seed, dt)
    }
}

fn wdra_config(a: &TrainArgs, seed: u64, dt: f64) -> TrainConfig {
    TrainConfig {
        utility: UtilityMode::Wdra { coeffs: wdra_coeffs(a) },
        ..base_config(a, seed, dt)
    }
}

fn day_series<'a>(label: &'a str, stats: &[DayStats]) -> [Series<'a>; 3] {
    let xs: Vec<f64> = stats.iter().map(|s| s.day as f64).collect();
    [
        Series {
            label,
            xs: xs.clone(),
            ys: stats.iter().map(|s| s.mean).collect(),
        },
        Series {
            label: "p10",
            xs: xs.clone(),
            ys: stats.iter().map(|s| s.p10).collect(),
        },
        Series {
            label: "p90",
            xs,
            ys: stats.iter().map(|s| s.p90).collect(),
        },
    ]
}

fn write_train_outputs(rec: &mut Recorder, rep: &TrainReport, plot: bool) -> Res<()> {
    let p = rec.output("utility_trace.csv");
    runtime(io::write_utility_trace_csv(&p, &rep.utility_trace))?;
    let p = rec.output("terminal_wealth.csv");
    runtime(io::write_terminal_wealth_csv(&p, &rep.terminal_wealth()))?;
    let theta = rep.theta_stats();
    let p = rec.output("theta.csv");
    runtime(io::write_day_stats_csv(&p, &theta))?;
    let consumption = rep.consumption_stats();
    let p = rec.output("consumption.csv");
    runtime(io::write_day_stats_csv(&p, &consumption))?;
    let p = rec.output("checkpoint.json");
    runtime(rep.checkpoint.save(&p))?;
    if plot {
        let trace = svg::line_chart(
            "Expected utility",
            &[Series {
                label: "utility",
                xs: (0..rep.utility_trace.len()).map(|e| e as f64).collect(),
                ys: rep.utility_trace.clone(),
            }],
        );
        runtime(rec.write("utility_trace.svg", &trace))?;
        runtime(rec.write("theta.svg", &svg::line_chart("Investment rate", &day_series("mean", &theta))))?;
        runtime(rec.write(
            "consumption.svg",
            &svg::line_chart("Consumption", &day_series("mean", &consumption)),
        ))?;
        let tw = rep.terminal_wealth();
        let (lo, hi) = min_max(&tw);
        let h = Histogram::new(&tw, 30, lo, hi);
        runtime(rec.write(
            "terminal_wealth.svg",
            &svg::histogram("Terminal wealth", &h.edges, &[("wealth", &h.counts)]),
        ))?;
    }
    Ok(())
}

fn min_max(xs: &[f64]) -> (f64, f64) {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, lo + 0.5)
    }
}

fn cmd_train(a: &TrainArgs, seed: u64, out: &Path, plot: bool) -> Res<Outcome> {
    let mut rec = Recorder::new("train", seed, out);
    let paths = load_paths(a, &mut rec)?;
    let cfg = match a.utility {
        UtilityKind::Crra => crra_config(a, seed, paths.dt),
        UtilityKind::Wdra => wdra_config(a, seed, paths.dt),
    };
    input(cfg.validate())?;
    let rep = input(train(&paths, &cfg))?;
    log::info!(
        "expected utility {:.6} -> {:.6}",
        rep.initial_utility,
        rep.final_utility()
    );
    write_train_outputs(&mut rec, &rep, plot)?;
    runtime(rec.finish(runtime(serde_json::to_value(&cfg))?))?;
    Ok(Outcome::Done)
}

fn side_by_side(rec: &mut Recorder, name: &str, header: &str, rows: impl Iterator<Item = String>) -> Res<()> {
    let mut text = String::from(header);
    text.push('\n');
    for r in rows {
        text.push_str(&r);
        text.push('\n');
    }
    runtime(rec.write(name, &text))
}

fn paired_stats(rec: &mut Recorder, name: &str, a: &[DayStats], b: &[DayStats]) -> Res<()> {
    side_by_side(
        rec,
        name,
        "day,crra_mean,crra_p10,crra_p90,wdra_mean,wdra_p10,wdra_p90",
        a.iter().zip(b).map(|(x, y)| {
            format!(
                "{},{},{},{},{},{},{}",
                x.day, x.mean, x.p10, x.p90, y.mean, y.p10, y.p90
            )
        }),
    )
}

fn paired_hist(rec: &mut Recorder, name: &str, a: &Histogram, b: &Histogram) -> Res<()> {
    side_by_side(
        rec,
        name,
        "bin_lo,bin_hi,crra,wdra",
        (0..a.bins()).map(|k| format!("{},{},{},{}", a.edges[k], a.edges[k + 1], a.counts[k], b.counts[k])),
    )
}

fn cmd_compare(a: &TrainArgs, seed: u64, out: &Path, plot: bool) -> Res<Outcome> {
    let mut rec = Recorder::new("compare", seed, out);
    let paths = load_paths(a, &mut rec)?;
    let crra = crra_config(a, seed, paths.dt);
    let wdra = wdra_config(a, seed, paths.dt);
    input(crra.validate())?;
    input(wdra.validate())?;
    let rep = input(compare(&paths, &crra, &wdra))?;

    side_by_side(
        &mut rec,
        "utility_trace.csv",
        "epoch,crra,wdra",
        rep.crra
            .utility_trace
            .iter()
            .zip(&rep.wdra.utility_trace)
            .enumerate()
            .map(|(e, (c, w))| format!("{e},{c},{w}")),
    )?;
    side_by_side(
        &mut rec,
        "terminal_wealth.csv",
        "path,crra,wdra",
        rep.crra
            .terminal_wealth()
            .iter()
            .zip(rep.wdra.terminal_wealth())
            .enumerate()
            .map(|(i, (c, w))| format!("{i},{c},{w}")),
    )?;
    paired_hist(&mut rec, "terminal_wealth_hist.csv", &rep.crra_wealth_hist, &rep.wdra_wealth_hist)?;
    paired_hist(&mut rec, "theta_hist.csv", &rep.crra_theta_hist, &rep.wdra_theta_hist)?;
    let (tc, tw) = (rep.crra.theta_stats(), rep.wdra.theta_stats());
    paired_stats(&mut rec, "theta.csv", &tc, &tw)?;
    let (cc, cw) = (rep.crra.consumption_stats(), rep.wdra.consumption_stats());
    paired_stats(&mut rec, "consumption.csv", &cc, &cw)?;
    let p = rec.output("crra_checkpoint.json");
    runtime(rep.crra.checkpoint.save(&p))?;
    let p = rec.output("wdra_checkpoint.json");
    runtime(rep.wdra.checkpoint.save(&p))?;
    runtime(rec.write("summary.json", &runtime(serde_json::to_string_pretty(&rep.summary))?))?;

    if plot {
        let epochs: Vec<f64> = (0..rep.crra.utility_trace.len()).map(|e| e as f64).collect();
        let chart = svg::line_chart(
            "Expected utility",
            &[
                Series {
                    label: "CRRA",
                    xs: epochs.clone(),
                    ys: rep.crra.utility_trace.clone(),
                },
                Series {
                    label: "WDRA",
                    xs: epochs,
                    ys: rep.wdra.utility_trace.clone(),
                },
            ],
        );
        runtime(rec.write("utility_trace.svg", &chart))?;
        let h = svg::histogram(
            "Terminal wealth",
            &rep.crra_wealth_hist.edges,
            &[("CRRA", &rep.crra_wealth_hist.counts), ("WDRA", &rep.wdra_wealth_hist.counts)],
        );
        runtime(rec.write("terminal_wealth.svg", &h))?;
        let h = svg::histogram(
            "Investment rate",
            &rep.crra_theta_hist.edges,
            &[("CRRA", &rep.crra_theta_hist.counts), ("WDRA", &rep.wdra_theta_hist.counts)],
        );
        runtime(rec.write("theta_hist.svg", &h))?;
        let days: Vec<f64> = cc.iter().map(|s| s.day as f64).collect();
        let chart = svg::line_chart(
            "Mean consumption",
            &[
                Series {
                    label: "CRRA",
                    xs: days.clone(),
                    ys: cc.iter().map(|s| s.mean).collect(),
                },
                Series {
                    label: "WDRA",
                    xs: days,
                    ys: cw.iter().map(|s| s.mean).collect(),
                },
            ],
        );
        runtime(rec.write("consumption.svg", &chart))?;
    }
    log::info!(
        "final utility CRRA {:.6}, WDRA {:.6}",
        rep.summary.crra_final_utility,
        rep.summary.wdra_final_utility
    );
    let config = json!({ "crra": crra, "wdra": wdra });
    runtime(rec.finish(config))?;
    Ok(Outcome::Done)
}
