//! Adam training of the policy on a fixed set of simulated paths.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{FeatureScaling, TrainConfig, N_FEATURES};
use super::rollout::{build_batch, rollout, Rollout};
use crate::error::{Error, Result};
use crate::neural::{adam_step, AdamHyper, AdamState, Checkpoint, PolicyNet, Tape};
use crate::simulation::PathSet;
use crate::stats::{per_day_stats, DayStats};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub scaling: FeatureScaling,
    /// Expected utility of the initial policy over the full path set.
    pub initial_utility: f64,
    /// Expected utility over the full path set after each epoch.
    pub utility_trace: Vec<f64>,
    pub checkpoint: Checkpoint,
    /// Rollout of the final policy over the full path set.
    pub final_rollout: Rollout,
}

impl TrainReport {
    pub fn terminal_wealth(&self) -> Vec<f64> {
        self.final_rollout.terminal_wealth()
    }

    pub fn theta_stats(&self) -> Vec<DayStats> {
        per_day_stats(&self.final_rollout.theta)
    }

    pub fn consumption_stats(&self) -> Vec<DayStats> {
        per_day_stats(&self.final_rollout.consumption)
    }

    pub fn final_utility(&self) -> f64 {
        self.utility_trace.last().copied().unwrap_or(self.initial_utility)
    }

    pub fn policy(&self) -> Result<PolicyNet> {
        self.checkpoint.to_net()
    }
}

/// Trains a freshly initialised policy.
///
/// Each epoch shuffles the paths, takes one Adam step per minibatch on the
/// negated batch objective, then re-evaluates the full path set.
pub fn train(paths: &PathSet, config: &TrainConfig) -> Result<TrainReport> {
    let net = PolicyNet::init(N_FEATURES, config.hidden_size, config.seed);
    train_from(paths, config, net)
}

pub fn train_from(paths: &PathSet, config: &TrainConfig, mut net: PolicyNet) -> Result<TrainReport> {
    config.validate()?;
    paths.validate()?;
    if net.input_size() != N_FEATURES || net.hidden_size() != config.hidden_size {
        return Err(Error::Shape("policy shape does not match the training configuration".into()));
    }
    let scaling = FeatureScaling::default();
    let initial = rollout(paths, &net, config, &scaling)?;
    if !initial.objective.is_finite() {
        let path = initial.per_path.iter().position(|v| !v.is_finite()).unwrap_or(0);
        return Err(Error::NonFiniteObjective { epoch: 0, batch: 0, path });
    }

    let mut flat = net.to_flat();
    let blocks = net.blocks();
    let mut adam = AdamState::new(flat.len(), AdamHyper::with_learning_rate(config.learning_rate))?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);
    let mut order: Vec<usize> = (0..paths.n_paths()).collect();
    let mut trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let rows: Vec<&[f64]> = idx.iter().map(|&i| paths.prices[i].as_slice()).collect();
            let mut tape = Tape::new();
            let bound = net.bind(&mut tape);
            let graph = build_batch(&mut tape, &bound, &rows, config, &scaling);
            let value = tape.value(graph.objective).item();
            if !value.is_finite() {
                let row = tape
                    .value(graph.totals)
                    .data()
                    .iter()
                    .position(|v| !v.is_finite())
                    .unwrap_or(0);
                return Err(Error::NonFiniteObjective {
                    epoch,
                    batch,
                    path: idx[row],
                });
            }
            let grads = tape.backward(graph.objective);
            let ascent = bound.flat_gradient(&tape, &grads);
            let descent: Vec<f64> = ascent.iter().map(|g| -g).collect();
            adam_step(&mut flat, &descent, &mut adam, &blocks)?;
            net.set_flat(&flat)?;
        }
        let eval = rollout(paths, &net, config, &scaling)?;
        if !eval.objective.is_finite() {
            let path = eval.per_path.iter().position(|v| !v.is_finite()).unwrap_or(0);
            return Err(Error::NonFiniteObjective { epoch, batch: usize::MAX, path });
        }
        if epoch % 50 == 0 || epoch + 1 == config.epochs {
            log::info!("epoch {epoch}: expected utility {:.6}", eval.objective);
        }
        trace.push(eval.objective);
    }

    let final_rollout = rollout(paths, &net, config, &scaling)?;
    Ok(TrainReport {
        config: config.clone(),
        scaling,
        initial_utility: initial.objective,
        utility_trace: trace,
        checkpoint: Checkpoint::new(&net, scaling.offset.to_vec(), scaling.scale.to_vec()),
        final_rollout,
    })
}
