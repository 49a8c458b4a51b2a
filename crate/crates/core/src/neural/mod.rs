//! Differentiable building blocks: dense matrices, a reverse-mode tape, the
//! LSTM policy and the Adam optimizer.

pub mod adam;
pub mod checkpoint;
pub mod lstm;
pub mod matrix;
pub mod tape;

pub use adam::{adam_step, AdamHyper, AdamState, ParamBlock};
pub use checkpoint::Checkpoint;
pub use lstm::{
    lstm_step, policy_forward, BoundPolicy, GateWeights, HeadWeights, LstmState, LstmWeights,
    PolicyNet, PolicyOutput, TapeState,
};
pub use matrix::Matrix;
pub use tape::{Gradients, Tape, Var};
