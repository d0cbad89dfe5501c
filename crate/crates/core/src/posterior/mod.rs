//! Observation-side posterior of `z = A h` (Module A).
//!
//! Two likelihoods are supported: unquantized AWGN, and AWGN followed by a
//! midrise quantizer whose real and imaginary parts are handled as two
//! independent real channels.

mod gaussian;
mod oracle;

use num_complex::Complex64;

pub use gaussian::{cdf as normal_cdf, pdf as normal_pdf, truncation_ratios};
pub use oracle::oracle_posterior_numeric;

use crate::error::{Error, Result};
use crate::measurement::QuantizerSpec;

/// Posterior moments of one complex entry; `var` is the per-entry (complex)
/// variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarPosterior {
    pub mean: Complex64,
    pub var: f64,
}

/// Posterior moments of one real dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RealPosterior {
    pub mean: f64,
    pub var: f64,
}

fn check_prior_var(v1z: f64) -> Result<()> {
    if v1z > 0.0 && v1z.is_finite() {
        Ok(())
    } else {
        Err(Error::input(format!("prior variance must be positive and finite, got {v1z}")))
    }
}

/// Gaussian update for an unquantized observation `y = z + n`, `n ~ CN(0, σ_n²)`.
pub fn posterior_z_unquantized_scalar(r1z: Complex64, v1z: f64, y: Complex64, noise_var: f64) -> Result<ScalarPosterior> {
    check_prior_var(v1z)?;
    if !(noise_var >= 0.0) {
        return Err(Error::input(format!("noise variance must be nonnegative, got {noise_var}")));
    }
    if noise_var.is_infinite() {
        return Ok(ScalarPosterior { mean: r1z, var: v1z });
    }
    let gain = v1z / (v1z + noise_var);
    Ok(ScalarPosterior {
        mean: r1z + (y - r1z) * gain,
        var: v1z - v1z * gain,
    })
}

/// Real-part posterior for a quantized observation in the sign / η form.
/// `flip_eta_sign` exists only so the oracle suite can demonstrate that a
/// corrupted sign convention is caught.
pub(crate) fn quantized_real_part(
    r1z: f64,
    v1z: f64,
    y_tilde: f64,
    bounds: (f64, f64),
    noise_var: f64,
    flip_eta_sign: bool,
) -> RealPosterior {
    let (r_low, r_up) = bounds;
    let mut sign = if y_tilde >= 0.0 { 1.0 } else { -1.0 };
    let near = r_low.abs().min(r_up.abs());
    let far = r_low.abs().max(r_up.abs());
    let scale = ((noise_var + v1z) / 2.0).sqrt();
    if flip_eta_sign {
        sign = -sign;
    }
    let eta1 = (sign * r1z - near) / scale;
    let eta2 = (sign * r1z - far) / scale;
    let (g1, g2) = truncation_ratios(eta2, eta1);
    let (ratio, weighted) = (-g1, -g2);
    let mean = r1z + sign * v1z / (2.0 * (noise_var + v1z)).sqrt() * ratio;
    let shrink = v1z * v1z / (2.0 * (noise_var + v1z));
    let var = (v1z / 2.0 - shrink * (weighted + ratio * ratio)).max(0.0);
    RealPosterior { mean, var }
}

/// Posterior of one real dimension given its quantized observation.
pub fn posterior_real_quantized(r1z: f64, v1z: f64, y_tilde: f64, noise_var: f64, spec: &QuantizerSpec) -> Result<RealPosterior> {
    check_prior_var(v1z)?;
    let bounds = spec.bounds(y_tilde)?;
    Ok(quantized_real_part(r1z, v1z, y_tilde, bounds, noise_var, false))
}

/// Complex posterior for a quantized observation; the per-entry variance is
/// the sum of the two real-dimension variances.
pub fn posterior_z_quantized_scalar(
    r1z: Complex64,
    v1z: f64,
    y_tilde: Complex64,
    noise_var: f64,
    spec: &QuantizerSpec,
) -> Result<ScalarPosterior> {
    if spec.resolution.is_infinite() {
        return posterior_z_unquantized_scalar(r1z, v1z, y_tilde, noise_var);
    }
    let re = posterior_real_quantized(r1z.re, v1z, y_tilde.re, noise_var, spec)?;
    let im = posterior_real_quantized(r1z.im, v1z, y_tilde.im, noise_var, spec)?;
    Ok(ScalarPosterior {
        mean: Complex64::new(re.mean, im.mean),
        var: re.var + im.var,
    })
}

fn elementwise(
    r1z: &[Complex64],
    v1z: &[f64],
    y: &[Complex64],
    f: impl Fn(Complex64, f64, Complex64) -> Result<ScalarPosterior>,
) -> Result<(Vec<Complex64>, Vec<f64>)> {
    Error::check_len("prior variance", r1z.len(), v1z.len())?;
    Error::check_len("observation", r1z.len(), y.len())?;
    let mut means = Vec::with_capacity(r1z.len());
    let mut vars = Vec::with_capacity(r1z.len());
    for ((&r, &v), &yi) in r1z.iter().zip(v1z).zip(y) {
        let p = f(r, v, yi)?;
        means.push(p.mean);
        vars.push(p.var);
    }
    Ok((means, vars))
}

/// Elementwise unquantized posterior; returns `(means, variances)`.
pub fn posterior_z_unquantized(r1z: &[Complex64], v1z: &[f64], y: &[Complex64], noise_var: f64) -> Result<(Vec<Complex64>, Vec<f64>)> {
    elementwise(r1z, v1z, y, |r, v, yi| posterior_z_unquantized_scalar(r, v, yi, noise_var))
}

/// Elementwise quantized posterior; returns `(means, variances)`.
pub fn posterior_z_quantized(
    r1z: &[Complex64],
    v1z: &[f64],
    y_tilde: &[Complex64],
    noise_var: f64,
    spec: &QuantizerSpec,
) -> Result<(Vec<Complex64>, Vec<f64>)> {
    elementwise(r1z, v1z, y_tilde, |r, v, yi| posterior_z_quantized_scalar(r, v, yi, noise_var, spec))
}
