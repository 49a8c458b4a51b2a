//! LSTM policy network.
//!
//! The recurrence keeps a memory state `h` and an emitted signal `C`:
//!
//! ```text
//! F_t = sigma(Q_F x_t + R_F C_{t-1} + b_F)
//! I_t = sigma(Q_I x_t + R_I C_{t-1} + b_I)
//! O_t = sigma(Q_O x_t + R_O C_{t-1} + b_O)
//! h_t = F_t * h_{t-1} + I_t * tanh(Q_h x_t + R_h C_{t-1} + b_h)
//! C_t = O_t * tanh(h_t)
//! ```
//!
//! with `h_0 = C_0 = 0`. Two scalar heads read `h_t` at every step: an
//! investment rate `theta_t = sigmoid(.)` and a raw consumption
//! `c_t = relu(.)`, so outputs at `t` depend only on inputs up to `t`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::ParamBlock;
use super::matrix::Matrix;
use super::tape::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::special::sigmoid;

pub const N_GATES: usize = 4;
pub const GATE_NAMES: [&str; N_GATES] = ["forget", "input", "output", "candidate"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateWeights {
    /// hidden x input
    pub q: Matrix,
    /// hidden x hidden
    pub r: Matrix,
    pub b: Vec<f64>,
}

/// Gate parameters in the order forget, input, output, candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmWeights {
    pub input_size: usize,
    pub hidden_size: usize,
    pub gates: [GateWeights; N_GATES],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmState {
    /// Memory state.
    pub h: Vec<f64>,
    /// Emitted signal, always inside (-1, 1).
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden_size: usize) -> Self {
        Self {
            h: vec![0.0; hidden_size],
            c: vec![0.0; hidden_size],
        }
    }
}

/// Affine read-outs of `h_t` for the investment rate and consumption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadWeights {
    pub theta_w: Vec<f64>,
    pub theta_b: f64,
    pub c_w: Vec<f64>,
    pub c_b: f64,
}

/// Per-step outputs of the policy for one input sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub theta: Vec<f64>,
    pub c_raw: Vec<f64>,
}

/// LSTM plus heads; the unit the optimizer updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyNet {
    pub lstm: LstmWeights,
    pub heads: HeadWeights,
}

impl LstmWeights {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        let gate = || GateWeights {
            q: Matrix::zeros(hidden_size, input_size),
            r: Matrix::zeros(hidden_size, hidden_size),
            b: vec![0.0; hidden_size],
        };
        Self {
            input_size,
            hidden_size,
            gates: [gate(), gate(), gate(), gate()],
        }
    }

    pub fn all_finite(&self) -> bool {
        self.gates
            .iter()
            .all(|g| g.q.all_finite() && g.r.all_finite() && g.b.iter().all(|v| v.is_finite()))
    }
}

impl PolicyNet {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        Self {
            lstm: LstmWeights::zeros(input_size, hidden_size),
            heads: HeadWeights {
                theta_w: vec![0.0; hidden_size],
                theta_b: 0.0,
                c_w: vec![0.0; hidden_size],
                c_b: 0.0,
            },
        }
    }

    /// Uniform(-k, k) weights with `k = 1/sqrt(hidden_size)` and zero biases.
    pub fn init(input_size: usize, hidden_size: usize, seed: u64) -> Self {
        let mut net = Self::zeros(input_size, hidden_size);
        let k = 1.0 / (hidden_size as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |m: &mut [f64]| {
            for v in m.iter_mut() {
                *v = rng.random_range(-k..k);
            }
        };
        for g in net.lstm.gates.iter_mut() {
            draw(g.q.data_mut());
            draw(g.r.data_mut());
        }
        draw(&mut net.heads.theta_w);
        draw(&mut net.heads.c_w);
        net
    }

    pub fn input_size(&self) -> usize {
        self.lstm.input_size
    }

    pub fn hidden_size(&self) -> usize {
        self.lstm.hidden_size
    }

    pub fn n_params(&self) -> usize {
        let (d, h) = (self.input_size(), self.hidden_size());
        N_GATES * (h * d + h * h + h) + 2 * (h + 1)
    }

    /// Contiguous blocks of the flat layout, in order.
    pub fn blocks(&self) -> Vec<ParamBlock> {
        let (d, h) = (self.input_size(), self.hidden_size());
        let mut out = Vec::new();
        let mut start = 0;
        let mut push = |name: String, len: usize| {
            out.push(ParamBlock { name, start, len });
            start += len;
        };
        for g in GATE_NAMES {
            push(format!("lstm.{g}.q"), h * d);
            push(format!("lstm.{g}.r"), h * h);
            push(format!("lstm.{g}.b"), h);
        }
        push("head.theta.w".into(), h);
        push("head.theta.b".into(), 1);
        push("head.c.w".into(), h);
        push("head.c.b".into(), 1);
        out
    }

    /// Flat parameter vector in [`PolicyNet::blocks`] order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        for g in &self.lstm.gates {
            v.extend_from_slice(g.q.data());
            v.extend_from_slice(g.r.data());
            v.extend_from_slice(&g.b);
        }
        v.extend_from_slice(&self.heads.theta_w);
        v.push(self.heads.theta_b);
        v.extend_from_slice(&self.heads.c_w);
        v.push(self.heads.c_b);
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                flat.len()
            )));
        }
        let mut it = flat.iter().copied();
        let mut fill = |dst: &mut [f64]| {
            for v in dst.iter_mut() {
                *v = it.next().expect("length checked");
            }
        };
        for g in self.lstm.gates.iter_mut() {
            fill(g.q.data_mut());
            fill(g.r.data_mut());
            fill(&mut g.b);
        }
        fill(&mut self.heads.theta_w);
        fill(std::slice::from_mut(&mut self.heads.theta_b));
        fill(&mut self.heads.c_w);
        fill(std::slice::from_mut(&mut self.heads.c_b));
        Ok(())
    }

    /// Places the weights on `tape` in packed form for batched evaluation.
    pub fn bind(&self, tape: &mut Tape) -> BoundPolicy {
        let (d, h) = (self.input_size(), self.hidden_size());
        // rows 0..d act on the input, rows d..d+h on C_{t-1}; column block g*h..(g+1)*h is gate g
        let mut w = Matrix::zeros(d + h, N_GATES * h);
        let mut b = Matrix::zeros(1, N_GATES * h);
        for (gi, g) in self.lstm.gates.iter().enumerate() {
            for j in 0..h {
                for k in 0..d {
                    w.set(k, gi * h + j, g.q.get(j, k));
                }
                for k in 0..h {
                    w.set(d + k, gi * h + j, g.r.get(j, k));
                }
                b.set(0, gi * h + j, g.b[j]);
            }
        }
        let mut hw = Matrix::zeros(h, 2);
        for j in 0..h {
            hw.set(j, 0, self.heads.theta_w[j]);
            hw.set(j, 1, self.heads.c_w[j]);
        }
        let hb = Matrix::row(vec![self.heads.theta_b, self.heads.c_b]);
        BoundPolicy {
            input_size: d,
            hidden_size: h,
            w: tape.leaf(w),
            b: tape.leaf(b),
            head_w: tape.leaf(hw),
            head_b: tape.leaf(hb),
        }
    }
}

/// Weights of a [`PolicyNet`] living on a tape.
#[derive(Debug, Clone, Copy)]
pub struct BoundPolicy {
    input_size: usize,
    hidden_size: usize,
    w: Var,
    b: Var,
    head_w: Var,
    head_b: Var,
}

/// Batched recurrent state on a tape (rows are sequences).
#[derive(Debug, Clone, Copy)]
pub struct TapeState {
    pub h: Var,
    pub c: Var,
}

impl BoundPolicy {
    pub fn zero_state(&self, tape: &mut Tape, batch: usize) -> TapeState {
        TapeState {
            h: tape.leaf(Matrix::zeros(batch, self.hidden_size)),
            c: tape.leaf(Matrix::zeros(batch, self.hidden_size)),
        }
    }

    /// One recurrence step for a batch of inputs `x` (batch x input_size).
    pub fn step(&self, tape: &mut Tape, x: Var, state: TapeState) -> TapeState {
        debug_assert_eq!(tape.value(x).cols(), self.input_size);
        let h = self.hidden_size;
        let xin = tape.concat_cols(x, state.c);
        let z = tape.matmul(xin, self.w);
        let z = tape.add(z, self.b);
        let zf = tape.slice_cols(z, 0, h);
        let zi = tape.slice_cols(z, h, 2 * h);
        let zo = tape.slice_cols(z, 2 * h, 3 * h);
        let zh = tape.slice_cols(z, 3 * h, 4 * h);
        let f = tape.sigmoid(zf);
        let i = tape.sigmoid(zi);
        let o = tape.sigmoid(zo);
        let cand = tape.tanh(zh);
        let keep = tape.mul(f, state.h);
        let write = tape.mul(i, cand);
        let h_new = tape.add(keep, write);
        let th = tape.tanh(h_new);
        let c_new = tape.mul(o, th);
        TapeState { h: h_new, c: c_new }
    }

    /// `(theta, c_raw)`, each batch x 1, read from the memory state.
    pub fn heads(&self, tape: &mut Tape, h: Var) -> (Var, Var) {
        let z = tape.matmul(h, self.head_w);
        let z = tape.add(z, self.head_b);
        let zt = tape.slice_cols(z, 0, 1);
        let zc = tape.slice_cols(z, 1, 2);
        (tape.sigmoid(zt), tape.relu(zc))
    }

    /// Gradient of the traced output w.r.t. the weights, in flat layout.
    pub fn flat_gradient(&self, tape: &Tape, grads: &Gradients) -> Vec<f64> {
        let (d, h) = (self.input_size, self.hidden_size);
        let gw = grads.wrt(tape, self.w);
        let gb = grads.wrt(tape, self.b);
        let ghw = grads.wrt(tape, self.head_w);
        let ghb = grads.wrt(tape, self.head_b);
        let mut out = Vec::with_capacity(N_GATES * (h * d + h * h + h) + 2 * (h + 1));
        for gi in 0..N_GATES {
            for j in 0..h {
                for k in 0..d {
                    out.push(gw.get(k, gi * h + j));
                }
            }
            for j in 0..h {
                for k in 0..h {
                    out.push(gw.get(d + k, gi * h + j));
                }
            }
            for j in 0..h {
                out.push(gb.get(0, gi * h + j));
            }
        }
        for j in 0..h {
            out.push(ghw.get(j, 0));
        }
        out.push(ghb.get(0, 0));
        for j in 0..h {
            out.push(ghw.get(j, 1));
        }
        out.push(ghb.get(0, 1));
        out
    }
}

fn affine_row(m: &Matrix, row: usize, x: &[f64]) -> f64 {
    m.row_slice(row).iter().zip(x).map(|(a, b)| a * b).sum()
}

/// One step of the recurrence for a single sequence.
pub fn lstm_step(x: &[f64], state: &LstmState, w: &LstmWeights) -> Result<LstmState> {
    let h = w.hidden_size;
    if x.len() != w.input_size || state.h.len() != h || state.c.len() != h {
        return Err(Error::Shape(format!(
            "lstm_step: input {} (expected {}), state ({}, {}) (expected {h})",
            x.len(),
            w.input_size,
            state.h.len(),
            state.c.len()
        )));
    }
    let pre = |g: &GateWeights, j: usize| affine_row(&g.q, j, x) + affine_row(&g.r, j, &state.c) + g.b[j];
    let [gf, gi, go, gh] = &w.gates;
    let mut next = LstmState::zeros(h);
    for j in 0..h {
        let f = sigmoid(pre(gf, j));
        let i = sigmoid(pre(gi, j));
        let o = sigmoid(pre(go, j));
        let cand = pre(gh, j).tanh();
        next.h[j] = f * state.h[j] + i * cand;
        next.c[j] = o * next.h[j].tanh();
    }
    Ok(next)
}

/// Runs the policy over one feature sequence.
pub fn policy_forward(features: &[Vec<f64>], net: &PolicyNet) -> Result<PolicyOutput> {
    if features.is_empty() {
        return Err(Error::Shape("policy_forward needs at least one step".into()));
    }
    let mut state = LstmState::zeros(net.hidden_size());
    let mut out = PolicyOutput {
        theta: Vec::with_capacity(features.len()),
        c_raw: Vec::with_capacity(features.len()),
    };
    let dot = |w: &[f64], h: &[f64]| w.iter().zip(h).map(|(a, b)| a * b).sum::<f64>();
    for x in features {
        state = lstm_step(x, &state, &net.lstm)?;
        out.theta.push(sigmoid(dot(&net.heads.theta_w, &state.h) + net.heads.theta_b));
        out.c_raw.push((dot(&net.heads.c_w, &state.h) + net.heads.c_b).max(0.0));
    }
    Ok(out)
}
