//! Standard normal helpers evaluated in log space.

use std::f64::consts::{PI, SQRT_2};

/// ln(sqrt(2*pi))
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

pub fn ln_norm_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

pub fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// ln Phi(z), accurate over the whole real line.
///
/// Below z = -30 the complementary error function underflows for practical
/// purposes and the Mills-ratio asymptotic series is used instead.
pub fn ln_norm_cdf(z: f64) -> f64 {
    if z > 5.0 {
        (-0.5 * libm::erfc(z / SQRT_2)).ln_1p()
    } else if z > -30.0 {
        (0.5 * libm::erfc(-z / SQRT_2)).ln()
    } else {
        let w = 1.0 / (z * z);
        let series = 1.0 - w * (1.0 - w * (3.0 - w * (15.0 - w * 105.0)));
        -0.5 * z * z - (-z).ln() - LN_SQRT_2PI + series.ln()
    }
}

/// d/dz ln Phi(z) = phi(z) / Phi(z), the inverse Mills ratio.
pub fn d_ln_norm_cdf(z: f64) -> f64 {
    (ln_norm_pdf(z) - ln_norm_cdf(z)).exp()
}

/// ln(exp(a) + exp(b)) without overflow; handles -inf operands.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

/// Logistic function evaluated without overflow for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}


/// Exponent magnitude below which [`box_cox`] switches to its logarithmic limit.
pub const BOX_COX_LOG_THRESHOLD: f64 = 1e-6;

/// Box-Cox transform `(x^a - 1) / a`, with `ln x` for `|a| < 1e-6`.
pub fn box_cox(x: f64, a: f64) -> f64 {
    let l = x.ln();
    if a.abs() < BOX_COX_LOG_THRESHOLD {
        l
    } else {
        (a * l).exp_m1() / a
    }
}

/// Partial derivatives of [`box_cox`] with respect to `x` and `a`.
pub fn box_cox_partials(x: f64, a: f64) -> (f64, f64) {
    let l = x.ln();
    if a.abs() < BOX_COX_LOG_THRESHOLD {
        return (1.0 / x, 0.5 * l * l);
    }
    let d_x = ((a - 1.0) * l).exp();
    let z = a * l;
    // (z e^z - e^z + 1) / z^2
    let h = if z.abs() < 1e-3 {
        0.5 + z * (1.0 / 3.0 + z * (1.0 / 8.0 + z / 30.0))
    } else {
        (z * z.exp() - z.exp_m1()) / (z * z)
    };
    (d_x, l * l * h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_cdf_matches_direct_in_bulk() {
        for i in -200..=200 {
            let z = i as f64 * 0.05;
            let direct = norm_cdf(z).ln();
            assert!((ln_norm_cdf(z) - direct).abs() < 1e-13, "z={z}");
        }
    }

    #[test]
    fn ln_cdf_is_continuous_at_branch_points() {
        for &z in &[-30.0f64, 5.0] {
            let lo = ln_norm_cdf(z - 1e-9);
            let hi = ln_norm_cdf(z + 1e-9);
            assert!((lo - hi).abs() < 1e-6 * lo.abs().max(1e-12), "z={z}");
        }
        // asymptotic branch vs erfc just above the switch
        let z = -29.0f64;
        let direct = (0.5 * libm::erfc(-z / SQRT_2)).ln();
        let w = 1.0 / (z * z);
        let series = 1.0 - w * (1.0 - w * (3.0 - w * (15.0 - w * 105.0)));
        let asym = -0.5 * z * z - (-z).ln() - LN_SQRT_2PI + series.ln();
        assert!((direct - asym).abs() < 1e-9);
    }

    #[test]
    fn far_tail_is_finite() {
        assert!(ln_norm_cdf(-1e4).is_finite());
        assert!(d_ln_norm_cdf(-1e4).is_finite());
        assert_eq!(ln_norm_cdf(1e4), 0.0);
    }

    #[test]
    fn box_cox_partials_match_finite_differences() {
        for &(x, a) in &[(2.0, -2.0), (0.3, 0.5), (1.7, 1e-5), (0.9, -3e-4), (5.0, 2e-3)] {
            let (dx, da) = box_cox_partials(x, a);
            let h = 1e-6;
            let fx = (box_cox(x + h, a) - box_cox(x - h, a)) / (2.0 * h);
            let fa = (box_cox(x, a + h * 1e-2) - box_cox(x, a - h * 1e-2)) / (2.0 * h * 1e-2);
            assert!((dx - fx).abs() < 1e-7 * dx.abs().max(1.0), "x={x} a={a}");
            assert!((da - fa).abs() < 1e-5 * da.abs().max(1e-3), "x={x} a={a} {da} {fa}");
        }
    }

    #[test]
    fn sigmoid_saturates_without_nan() {
        assert_eq!(sigmoid(1e4), 1.0);
        assert_eq!(sigmoid(-1e4), 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() == 0.0);
    }
}
