//! Brute-force posterior moments by adaptive Gauss–Kronrod quadrature.
//!
//! Used only to cross-check the closed-form quantized posterior. It shares no
//! code with it: the normal distribution function comes from `statrs` and
//! the truncated moments are integrated rather than derived.

use std::collections::BinaryHeap;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use statrs::function::erf::erfc;

use super::RealPosterior;
use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> Segment {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let pair = f(c - x) + f(c + x);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    Segment {
        a,
        b,
        value: kronrod * h,
        error: ((kronrod - gauss) * h).abs(),
    }
}

/// Globally adaptive integration over consecutive break points; stops when
/// the error estimate is below `max(rel_tol·|I|, abs_tol)`.
pub(crate) fn integrate(f: &dyn Fn(f64) -> f64, breaks: &[f64], rel_tol: f64, abs_tol: f64) -> std::result::Result<f64, String> {
    let mut heap = BinaryHeap::new();
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            let pieces = 16;
            let step = (w[1] - w[0]) / pieces as f64;
            for k in 0..pieces {
                let a = w[0] + step * k as f64;
                let b = if k + 1 == pieces { w[1] } else { a + step };
                heap.push(gk15(f, a, b));
            }
        }
    }
    for _ in 0..20_000 {
        let total: f64 = heap.iter().map(|s| s.value).sum();
        let err: f64 = heap.iter().map(|s| s.error).sum();
        if err <= (rel_tol * total.abs()).max(abs_tol) || err < 1e-300 {
            return Ok(total);
        }
        let worst = heap.pop().expect("non-empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            return Err(format!("interval [{}, {}] cannot be bisected further", worst.a, worst.b));
        }
        heap.push(gk15(f, worst.a, mid));
        heap.push(gk15(f, mid, worst.b));
    }
    Err("subdivision limit reached".into())
}

fn std_normal_mass(lo: f64, hi: f64) -> f64 {
    // Φ(hi) − Φ(lo) evaluated from the tail that avoids cancellation
    if lo >= 0.0 {
        0.5 * (erfc(lo * FRAC_1_SQRT_2) - erfc(hi * FRAC_1_SQRT_2))
    } else if hi <= 0.0 {
        0.5 * (erfc(-hi * FRAC_1_SQRT_2) - erfc(-lo * FRAC_1_SQRT_2))
    } else {
        1.0 - 0.5 * erfc(hi * FRAC_1_SQRT_2) - 0.5 * erfc(-lo * FRAC_1_SQRT_2)
    }
}

/// Posterior mean and variance of one real dimension of `z` with prior
/// `N(r1z, v1z/2)` and observation `y = z + w`, `w ~ N(0, σ_n²/2)`, known
/// only to lie in `[r_low, r_up)`. Variances in and out follow the
/// complex-per-entry convention on input (`v1z`, `noise_var`) and are
/// per-real-dimension on output.
pub fn oracle_posterior_numeric(r1z: f64, v1z: f64, r_low: f64, r_up: f64, noise_var: f64) -> Result<RealPosterior> {
    let fail = |reason: String| Error::Quadrature {
        low: r_low,
        up: r_up,
        reason,
    };
    if !(r_low < r_up) {
        return Err(fail("empty interval".into()));
    }
    if !(v1z > 0.0) || !(noise_var >= 0.0) {
        return Err(fail(format!("bad variances v1z={v1z}, noise_var={noise_var}")));
    }
    let sp = (v1z / 2.0).sqrt();
    let sw = (noise_var / 2.0).sqrt();
    let span = 40.0;

    // integrate in prior-standardized coordinate u = (z − r1z)/sp
    let to_u = |z: f64| (z - r1z) / sp;
    let likelihood = |u: f64| -> f64 {
        let z = r1z + sp * u;
        if sw == 0.0 {
            if z >= r_low && z < r_up {
                1.0
            } else {
                0.0
            }
        } else {
            std_normal_mass((r_low - z) / sw, (r_up - z) / sw)
        }
    };
    let density = |u: f64| (-0.5 * u * u).exp() / (2.0 * PI).sqrt() * likelihood(u);

    let mut lo: f64 = -span;
    let mut hi: f64 = span;
    if r_low.is_finite() {
        lo = lo.max(to_u(r_low - span * sw));
    }
    if r_up.is_finite() {
        hi = hi.min(to_u(r_up + span * sw));
    }
    if !(lo < hi) {
        return Err(fail("posterior mass lies outside the integration window".into()));
    }
    let mut breaks = vec![lo, hi];
    for edge in [r_low, r_up] {
        if edge.is_finite() {
            let u = to_u(edge);
            if u > lo && u < hi {
                breaks.push(u);
            }
        }
    }
    breaks.sort_by(f64::total_cmp);

    let tol = 1e-13;
    let mass = integrate(&density, &breaks, tol, 0.0).map_err(&fail)?;
    if !(mass > 1e-290) {
        return Err(fail(format!("normalizer underflow ({mass:e})")));
    }
    // the first moment may vanish, so its tolerance is pinned to the mass
    let first = integrate(&|u| u * density(u), &breaks, tol, tol * mass).map_err(&fail)? / mass;
    let central = integrate(&|u| (u - first).powi(2) * density(u), &breaks, tol, 0.0).map_err(&fail)? / mass;
    Ok(RealPosterior {
        mean: r1z + sp * first,
        var: sp * sp * central,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unbounded_interval_reduces_to_gaussian_update() {
        let (r, v, s2) = (0.4, 1.3, 0.7);
        let post = oracle_posterior_numeric(r, v, f64::NEG_INFINITY, f64::INFINITY, s2).unwrap();
        // no information: the prior comes back
        assert!((post.mean - r).abs() < 1e-10);
        assert!((post.var - v / 2.0).abs() < 1e-10);
    }

    #[test]
    fn noiseless_symmetric_cell_matches_truncated_gaussian() {
        // prior N(r, 1) truncated to [r − 0.8, r + 0.8]: mean r and
        // var 1 − 2aφ(a)/(2Φ(a) − 1) at a = 0.8, evaluated to 40 digits
        let (r, c) = (0.3, 0.8);
        let expected_var = 0.195_705_069_365_105_83;
        let post = oracle_posterior_numeric(r, 2.0, r - c, r + c, 0.0).unwrap();
        assert!((post.mean - r).abs() < 1e-12, "{}", post.mean - r);
        assert!((post.var - expected_var).abs() < 1e-13, "{} vs {expected_var}", post.var);
    }

    #[test]
    fn one_sided_noiseless_cell() {
        // N(0,1) truncated to [0, ∞): mean √(2/π)
        let post = oracle_posterior_numeric(0.0, 2.0, 0.0, f64::INFINITY, 0.0).unwrap();
        assert!((post.mean - (2.0 / PI).sqrt()).abs() < 1e-11);
        assert!((post.var - (1.0 - 2.0 / PI)).abs() < 1e-11);
    }

    #[test]
    fn rejects_empty_interval() {
        assert!(oracle_posterior_numeric(0.0, 1.0, 1.0, 1.0, 0.1).is_err());
    }
}
