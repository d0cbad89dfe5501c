//! Standard-normal tail ratios that stay accurate far into the tails.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

const SQRT_PI: f64 = 1.772_453_850_905_516;

/// Standard normal density.
pub fn pdf(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
    }
}

/// Standard normal distribution function.
pub fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Scaled complementary error function `exp(x²)·erfc(x)` for `x ≥ 0`.
pub fn erfcx(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x < 26.0 {
        (x * x).exp() * libm::erfc(x)
    } else {
        // asymptotic series; 2x² > 1350 so a handful of terms is exact in f64
        let inv = 1.0 / (2.0 * x * x);
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..8 {
            term *= -((2 * k - 1) as f64) * inv;
            sum += term;
        }
        sum / (x * SQRT_PI)
    }
}

/// Mills ratio `Q(x)/φ(x)` for `x ≥ 0`.
fn mills(x: f64) -> f64 {
    (PI / 2.0).sqrt() * erfcx(x * FRAC_1_SQRT_2)
}

/// First two truncation ratios of a standard normal restricted to `[lo, hi]`:
///
/// `g1 = (φ(lo) − φ(hi)) / (Φ(hi) − Φ(lo))`,
/// `g2 = (lo·φ(lo) − hi·φ(hi)) / (Φ(hi) − Φ(lo))`.
///
/// The truncated mean is `g1` and the variance is `1 + g2 − g1²`.
pub fn truncation_ratios(lo: f64, hi: f64) -> (f64, f64) {
    debug_assert!(lo < hi, "empty interval [{lo}, {hi}]");
    if lo >= 0.0 {
        upper_tail_ratios(lo, hi)
    } else if hi <= 0.0 {
        let (g1, g2) = upper_tail_ratios(-hi, -lo);
        (-g1, g2)
    } else {
        let mass = 0.5 * (libm::erf(hi * FRAC_1_SQRT_2) - libm::erf(lo * FRAC_1_SQRT_2));
        let (plo, phi) = (pdf(lo), pdf(hi));
        let xlo = if lo.is_infinite() { 0.0 } else { lo * plo };
        let xhi = if hi.is_infinite() { 0.0 } else { hi * phi };
        ((plo - phi) / mass, (xlo - xhi) / mass)
    }
}

/// Both bounds in the upper half-line: everything is scaled by `φ(lo)`.
fn upper_tail_ratios(lo: f64, hi: f64) -> (f64, f64) {
    let decay = if hi.is_infinite() {
        0.0
    } else {
        (0.5 * (lo - hi) * (lo + hi)).exp()
    };
    let tail_hi = if hi.is_infinite() { 0.0 } else { decay * mills(hi) };
    let mass = mills(lo) - tail_hi;
    let hi_term = if hi.is_infinite() { 0.0 } else { hi * decay };
    ((1.0 - decay) / mass, (lo - hi_term) / mass)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erfcx_is_continuous_across_branch() {
        // d/dx log erfcx ≈ −1/x, so a 1e−9 step moves it by ~4e−11
        let a = erfcx(26.0 - 1e-9);
        let b = erfcx(26.0);
        assert!((a - b).abs() / a < 1e-10);
        assert!((erfcx(0.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn half_line_ratios() {
        // E[X | X > 0] = √(2/π); Var = 1 − 2/π
        let (g1, g2) = truncation_ratios(0.0, f64::INFINITY);
        assert!((g1 - (2.0 / PI).sqrt()).abs() < 1e-14);
        assert!(((1.0 + g2 - g1 * g1) - (1.0 - 2.0 / PI)).abs() < 1e-14);
        let (m1, m2) = truncation_ratios(f64::NEG_INFINITY, 0.0);
        assert!((m1 + g1).abs() < 1e-14 && (m2 - g2).abs() < 1e-14);
    }

    #[test]
    fn deep_tail_stays_finite() {
        // E[X | X > a] ≈ a + 1/a for large a
        let (g1, g2) = truncation_ratios(40.0, f64::INFINITY);
        assert!((g1 - 40.0).abs() < 0.03);
        let var = 1.0 + g2 - g1 * g1;
        assert!(var > 0.0 && var < 1e-3);
        let (g1, _) = truncation_ratios(-50.0, -49.9);
        assert!(g1 < -49.9 && g1 > -50.0);
    }

    #[test]
    fn straddle_matches_naive_formula() {
        let (lo, hi) = (-0.3, 1.2);
        let mass = cdf(hi) - cdf(lo);
        let (g1, g2) = truncation_ratios(lo, hi);
        assert!((g1 - (pdf(lo) - pdf(hi)) / mass).abs() < 1e-14);
        assert!((g2 - (lo * pdf(lo) - hi * pdf(hi)) / mass).abs() < 1e-14);
    }
}
