//! Utility functions, the wealth-driven risk-aversion curve and the Euler
//! wealth step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{box_cox, BOX_COX_LOG_THRESHOLD};

/// Coefficients of `rho(W) = b0 + b1 W + b2 W^3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskAversionCoeffs {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
}

impl Default for RiskAversionCoeffs {
    /// `b1 = 0.13`, `b2 = -0.45`, and `b0` chosen so that `rho(1) = 3`.
    fn default() -> Self {
        Self::with_mean_at_reference(3.0, 0.13, -0.45)
    }
}

impl RiskAversionCoeffs {
    /// Picks `b0` so that `rho(1) = target`.
    pub fn with_mean_at_reference(target: f64, b1: f64, b2: f64) -> Self {
        Self {
            b0: target - b1 - b2,
            b1,
            b2,
        }
    }

    /// Constant curve `rho(W) = rho`.
    pub fn constant(rho: f64) -> Self {
        Self {
            b0: rho,
            b1: 0.0,
            b2: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.b0, self.b1, self.b2].iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config("risk-aversion coefficients must be finite".into()))
        }
    }

    /// Stationary point of the unclipped cubic, `sqrt(b1 / (-3 b2))`, when it exists.
    pub fn peak_ratio(&self) -> Option<f64> {
        let r = self.b1 / (-3.0 * self.b2);
        (r > 0.0 && r.is_finite()).then(|| r.sqrt())
    }
}

/// `clamp(b0 + b1 W + b2 W^3, lo, hi)`.
pub fn risk_aversion(w: f64, coeffs: &RiskAversionCoeffs, clip: (f64, f64)) -> f64 {
    (coeffs.b1 * w + coeffs.b0 + coeffs.b2 * (w * w * w)).clamp(clip.0, clip.1)
}

/// `(x^{1-rho} - 1)/(1 - rho)`, or `ln x` when `|rho - 1| < 1e-6`.
pub fn crra_utility(x: f64, rho: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::UtilityDomain(x));
    }
    let e = 1.0 - rho;
    Ok(if e.abs() < BOX_COX_LOG_THRESHOLD {
        x.ln()
    } else {
        box_cox(x, e)
    })
}

/// CRRA utility with the coefficient read off the risk-aversion curve at the
/// wealth ratio `w / w_ref`.
pub fn wdra_utility(
    x: f64,
    w: f64,
    w_ref: f64,
    coeffs: &RiskAversionCoeffs,
    clip: (f64, f64),
) -> Result<f64> {
    if !(w > 0.0) || !(w_ref > 0.0) {
        return Err(Error::UtilityDomain(w.min(w_ref)));
    }
    crra_utility(x, risk_aversion(w / w_ref, coeffs, clip))
}

/// One Euler step of the self-financing wealth equation with consumption,
/// floored at `floor`.
#[allow(clippy::too_many_arguments)]
pub fn wealth_step(
    w: f64,
    theta: f64,
    c: f64,
    s_now: f64,
    s_next: f64,
    r: f64,
    dt: f64,
    floor: f64,
) -> f64 {
    let next = w * (1.0 + theta * (s_next - s_now) / s_now + (1.0 - theta) * r * dt) - c * dt;
    next.max(floor)
}
