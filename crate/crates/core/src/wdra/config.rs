use serde::{Deserialize, Serialize};

use super::utility::RiskAversionCoeffs;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum UtilityMode {
    /// Constant relative risk aversion.
    Crra { rho: f64 },
    /// Risk aversion driven by the wealth ratio.
    Wdra { coeffs: RiskAversionCoeffs },
}

/// Denominator of the wealth ratio fed to the risk-aversion curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WealthReference {
    /// The initial wealth `w0`.
    Initial,
    /// Cross-sectional mean wealth of the current batch at the same date.
    BatchMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of intermediate consumption against terminal wealth.
    pub zeta: f64,
    /// Subjective discount rate per year.
    pub eta_discount: f64,
    /// Risk-free rate per year.
    pub r: f64,
    pub w0: f64,
    pub dt: f64,
    pub utility: UtilityMode,
    pub wealth_reference: WealthReference,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub hidden_size: usize,
    pub seed: u64,
    pub wealth_floor: f64,
    pub rho_clip: (f64, f64),
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            zeta: 0.5,
            eta_discount: 0.05,
            r: 0.03,
            w0: 1.0,
            dt: 1.0 / 247.0,
            utility: UtilityMode::Wdra {
                coeffs: RiskAversionCoeffs::default(),
            },
            wealth_reference: WealthReference::Initial,
            batch_size: 10,
            learning_rate: 1e-3,
            epochs: 1000,
            hidden_size: 50,
            seed: 0,
            wealth_floor: 1e-4,
            rho_clip: (0.2, 10.0),
        }
    }
}

impl TrainConfig {
    pub fn crra(rho: f64) -> Self {
        Self {
            utility: UtilityMode::Crra { rho },
            ..Self::default()
        }
    }

    /// Additive guard on consumption inside the utility, `1e-8 * w0`.
    pub fn consumption_floor(&self) -> f64 {
        1e-8 * self.w0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.zeta) {
            return bad("zeta must lie in [0, 1]");
        }
        if !self.eta_discount.is_finite() || !self.r.is_finite() {
            return bad("discount and risk-free rates must be finite");
        }
        if !(self.w0 > 0.0 && self.w0.is_finite()) {
            return bad("w0 must be positive");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(self.wealth_floor > 0.0) {
            return bad("wealth_floor must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.hidden_size == 0 {
            return bad("hidden_size must be at least 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        let (lo, hi) = self.rho_clip;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo < hi) {
            return bad("rho_clip must satisfy 0 < lo < hi");
        }
        match self.utility {
            UtilityMode::Crra { rho } if !rho.is_finite() => bad("rho must be finite"),
            UtilityMode::Wdra { coeffs } => coeffs.validate(),
            _ => Ok(()),
        }
    }
}

/// Affine standardisation `(raw - offset) / scale` of the policy inputs
/// `(ln(S_t/S_0), w_t/w_0, t/T)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub offset: [f64; 3],
    pub scale: [f64; 3],
}

impl Default for FeatureScaling {
    fn default() -> Self {
        Self {
            offset: [0.0, 1.0, 0.5],
            scale: [0.5, 0.5, 0.5],
        }
    }
}

pub const N_FEATURES: usize = 3;
