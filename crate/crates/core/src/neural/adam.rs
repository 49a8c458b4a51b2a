//! Adam with bias-corrected moment estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    /// Learning rate.
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamHyper {
    pub fn with_learning_rate(alpha: f64) -> Self {
        Self {
            alpha,
            ..Self::default()
        }
    }
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment accumulators for one flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub hyper: AdamHyper,
}

/// Named contiguous range of a flat parameter vector, used in error messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

impl AdamState {
    pub fn new(n_params: usize, hyper: AdamHyper) -> Result<Self> {
        if !(0.0..1.0).contains(&hyper.beta1) || !(0.0..1.0).contains(&hyper.beta2) {
            return Err(Error::Config(format!(
                "Adam decay rates must lie in [0, 1): beta1={}, beta2={}",
                hyper.beta1, hyper.beta2
            )));
        }
        if !(hyper.alpha > 0.0) || hyper.epsilon < 0.0 {
            return Err(Error::Config("Adam needs alpha > 0 and epsilon >= 0".into()));
        }
        Ok(Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            hyper,
        })
    }

    /// Bias-corrected moments `(m_hat, v_hat)` at the current step.
    pub fn corrected(&self) -> (Vec<f64>, Vec<f64>) {
        let t = self.t as i32;
        let c1 = 1.0 - self.hyper.beta1.powi(t);
        let c2 = 1.0 - self.hyper.beta2.powi(t);
        (
            self.m.iter().map(|m| m / c1).collect(),
            self.v.iter().map(|v| v / c2).collect(),
        )
    }
}

/// One Adam update of `params` in place.
///
/// `blocks` names parameter ranges so that a non-finite gradient can be
/// reported against the block it belongs to; pass an empty slice to report
/// the whole vector as `params`.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    blocks: &[ParamBlock],
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
        let block = blocks
            .iter()
            .find(|b| index >= b.start && index < b.start + b.len)
            .map(|b| b.name.clone())
            .unwrap_or_else(|| "params".to_string());
        return Err(Error::NonFiniteGradient { block, index });
    }

    let AdamHyper {
        alpha,
        beta1,
        beta2,
        epsilon,
    } = state.hyper;
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        let denom = v_hat.sqrt() + epsilon;
        if denom > 0.0 {
            *p -= alpha * m_hat / denom;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = vec![0.3, -1.2, 4.0];
        let before = p.clone();
        let mut s = AdamState::new(3, AdamHyper::default()).unwrap();
        adam_step(&mut p, &[0.0; 3], &mut s, &[]).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_is_signed_learning_rate() {
        let hyper = AdamHyper {
            alpha: 0.01,
            epsilon: 0.0,
            ..AdamHyper::default()
        };
        let mut p = vec![1.0, 1.0, 1.0];
        let g = [3.5, -1e-4, 250.0];
        let mut s = AdamState::new(3, hyper).unwrap();
        adam_step(&mut p, &g, &mut s, &[]).unwrap();
        for (pi, gi) in p.iter().zip(g) {
            assert!((pi - (1.0 - 0.01 * gi.signum())).abs() < 1e-15);
        }
        let (m_hat, v_hat) = s.corrected();
        for i in 0..3 {
            assert!((m_hat[i] - g[i]).abs() <= 1e-15 * g[i].abs());
            assert!((v_hat[i] - g[i] * g[i]).abs() <= 1e-15 * g[i] * g[i]);
        }
    }

    #[test]
    fn non_finite_gradient_names_block() {
        let blocks = [
            ParamBlock { name: "lstm".into(), start: 0, len: 2 },
            ParamBlock { name: "heads".into(), start: 2, len: 2 },
        ];
        let mut p = vec![0.0; 4];
        let mut s = AdamState::new(4, AdamHyper::default()).unwrap();
        let err = adam_step(&mut p, &[0.0, 0.0, f64::NAN, 0.0], &mut s, &blocks).unwrap_err();
        assert_eq!(err, Error::NonFiniteGradient { block: "heads".into(), index: 2 });
        assert_eq!(s.t, 0);
    }

    #[test]
    fn bad_hyper_rejected() {
        let h = AdamHyper { beta1: 1.0, ..AdamHyper::default() };
        assert!(AdamState::new(1, h).is_err());
    }
}
