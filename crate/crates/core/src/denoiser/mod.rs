//! Module B: denoisers for the equivalent AWGN problem `r = h + w`.
//!
//! Every denoiser receives the noisy channel as a [`ChannelImage`] and the
//! noise level as the per-complex-entry variance `v` (so each real
//! coordinate carries variance `v/2`). Divergence is the trace of the
//! input-output Jacobian over all `P = 2·N·M` real coordinates.

mod cnn;
mod image;
pub mod weights;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub use cnn::{CnnArch, CnnGradients, ConvLayer, ForwardTrace, SmallCnn};
pub use image::ChannelImage;

use crate::error::{Error, Result};
use crate::gec::VARIANCE_FLOOR;
use crate::training::sure_loss;

pub trait Denoiser: Send + Sync {
    fn name(&self) -> &str;

    fn denoise(&self, r: &ChannelImage, noise_var: f64) -> Result<ChannelImage>;

    /// Closed-form divergence, when one exists.
    fn analytic_divergence(&self, _r: &ChannelImage, _noise_var: f64) -> Option<f64> {
        None
    }

    /// Denoised output and its divergence, falling back to a single-probe
    /// Monte-Carlo estimate.
    fn denoise_with_divergence(
        &self,
        r: &ChannelImage,
        noise_var: f64,
        probe_rng: &mut dyn rand::RngCore,
    ) -> Result<(ChannelImage, f64)> {
        let out = self.denoise(r, noise_var)?;
        let div = match self.analytic_divergence(r, noise_var) {
            Some(d) => d,
            None => mc_divergence_from(self, r, &out, noise_var, probe_rng, 1)?,
        };
        Ok((out, div))
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn denoise(&self, r: &ChannelImage, noise_var: f64) -> Result<ChannelImage> {
        (**self).denoise(r, noise_var)
    }
    fn analytic_divergence(&self, r: &ChannelImage, noise_var: f64) -> Option<f64> {
        (**self).analytic_divergence(r, noise_var)
    }
    fn denoise_with_divergence(
        &self,
        r: &ChannelImage,
        noise_var: f64,
        probe_rng: &mut dyn rand::RngCore,
    ) -> Result<(ChannelImage, f64)> {
        (**self).denoise_with_divergence(r, noise_var, probe_rng)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn denoise(&self, r: &ChannelImage, noise_var: f64) -> Result<ChannelImage> {
        (**self).denoise(r, noise_var)
    }
    fn analytic_divergence(&self, r: &ChannelImage, noise_var: f64) -> Option<f64> {
        (**self).analytic_divergence(r, noise_var)
    }
    fn denoise_with_divergence(
        &self,
        r: &ChannelImage,
        noise_var: f64,
        probe_rng: &mut dyn rand::RngCore,
    ) -> Result<(ChannelImage, f64)> {
        (**self).denoise_with_divergence(r, noise_var, probe_rng)
    }
}

/// Returns its input.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityDenoiser;

impl Denoiser for IdentityDenoiser {
    fn name(&self) -> &str {
        "identity"
    }
    fn denoise(&self, r: &ChannelImage, _: f64) -> Result<ChannelImage> {
        Ok(r.clone())
    }
    fn analytic_divergence(&self, r: &ChannelImage, _: f64) -> Option<f64> {
        Some(r.len() as f64)
    }
}

/// `D(x) = c·x`.
#[derive(Debug, Clone, Copy)]
pub struct ScaleDenoiser(pub f64);

impl Denoiser for ScaleDenoiser {
    fn name(&self) -> &str {
        "scale"
    }
    fn denoise(&self, r: &ChannelImage, _: f64) -> Result<ChannelImage> {
        Ok(r.map(|x| self.0 * x))
    }
    fn analytic_divergence(&self, r: &ChannelImage, _: f64) -> Option<f64> {
        Some(self.0 * r.len() as f64)
    }
}

/// Posterior mean under an i.i.d. `CN(0, prior_var)` prior: `r·P/(P + v)`.
#[derive(Debug, Clone, Copy)]
pub struct MatchedGaussianDenoiser {
    pub prior_var: f64,
}

impl Default for MatchedGaussianDenoiser {
    fn default() -> Self {
        Self { prior_var: 1.0 }
    }
}

impl MatchedGaussianDenoiser {
    fn gain(&self, noise_var: f64) -> f64 {
        self.prior_var / (self.prior_var + noise_var)
    }
}

impl Denoiser for MatchedGaussianDenoiser {
    fn name(&self) -> &str {
        "matched-gaussian"
    }
    fn denoise(&self, r: &ChannelImage, noise_var: f64) -> Result<ChannelImage> {
        let g = self.gain(noise_var);
        Ok(r.map(|x| g * x))
    }
    fn analytic_divergence(&self, r: &ChannelImage, noise_var: f64) -> Option<f64> {
        Some(self.gain(noise_var) * r.len() as f64)
    }
}

fn soft(x: f64, tau: f64) -> f64 {
    x.signum() * (x.abs() - tau).max(0.0)
}

/// Coordinatewise soft threshold at `τ = λ·√(v/2)`.
#[derive(Debug, Clone, Copy)]
pub struct SoftThresholdDenoiser {
    pub lambda: f64,
}

impl SoftThresholdDenoiser {
    pub fn threshold(&self, noise_var: f64) -> f64 {
        self.lambda * (noise_var / 2.0).sqrt()
    }

    pub fn apply_threshold(r: &ChannelImage, tau: f64) -> (ChannelImage, f64) {
        let out = r.map(|x| soft(x, tau));
        let div = r.data().iter().filter(|x| x.abs() > tau).count() as f64;
        (out, div)
    }
}

impl Denoiser for SoftThresholdDenoiser {
    fn name(&self) -> &str {
        "soft-threshold"
    }
    fn denoise(&self, r: &ChannelImage, noise_var: f64) -> Result<ChannelImage> {
        Ok(Self::apply_threshold(r, self.threshold(noise_var)).0)
    }
    fn analytic_divergence(&self, r: &ChannelImage, noise_var: f64) -> Option<f64> {
        Some(Self::apply_threshold(r, self.threshold(noise_var)).1)
    }
}

/// Log-spaced candidate λ grid.
pub fn lambda_grid(count: usize, lo: f64, hi: f64) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|k| (a + (b - a) * k as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Grid λ minimizing the SURE of the soft-threshold family on `r`; ties go
/// to the smaller λ.
pub fn sureshrink_select_lambda(r: &ChannelImage, noise_var: f64, grid: &[f64]) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::input("empty lambda grid"));
    }
    let per_coord = noise_var / 2.0;
    let p = r.len() as f64;
    let mut best = (f64::INFINITY, grid[0]);
    for &lambda in grid {
        let (out, div) = SoftThresholdDenoiser::apply_threshold(r, lambda * per_coord.sqrt());
        let risk = sure_loss(r, &out, per_coord, div, p)?;
        if risk < best.0 {
            best = (risk, lambda);
        }
    }
    Ok(best.1)
}

/// Soft threshold whose λ is re-selected by SURE on every call.
#[derive(Debug, Clone)]
pub struct SureShrinkDenoiser {
    pub grid: Vec<f64>,
}

impl Default for SureShrinkDenoiser {
    fn default() -> Self {
        Self {
            grid: lambda_grid(32, 1e-2, 10.0),
        }
    }
}

impl SureShrinkDenoiser {
    fn pick(&self, r: &ChannelImage, noise_var: f64) -> Result<SoftThresholdDenoiser> {
        Ok(SoftThresholdDenoiser {
            lambda: sureshrink_select_lambda(r, noise_var, &self.grid)?,
        })
    }
}

impl Denoiser for SureShrinkDenoiser {
    fn name(&self) -> &str {
        "sure-soft-threshold"
    }
    fn denoise(&self, r: &ChannelImage, noise_var: f64) -> Result<ChannelImage> {
        self.pick(r, noise_var)?.denoise(r, noise_var)
    }
    fn analytic_divergence(&self, r: &ChannelImage, noise_var: f64) -> Option<f64> {
        self.pick(r, noise_var).ok()?.analytic_divergence(r, noise_var)
    }
    fn denoise_with_divergence(&self, r: &ChannelImage, noise_var: f64, _: &mut dyn rand::RngCore) -> Result<(ChannelImage, f64)> {
        let st = self.pick(r, noise_var)?;
        Ok(SoftThresholdDenoiser::apply_threshold(r, st.threshold(noise_var)))
    }
}

/// Step size of the finite-difference probe: `‖r‖_∞/1000`, floored at 1e−9.
pub fn probe_step(r: &ChannelImage) -> f64 {
    (r.max_abs() / 1000.0).max(1e-9)
}

/// Gaussian probe rescaled to squared norm `P`, so `E[b bᵀ] = I` still holds
/// and `bᵀ(c·b) = c·P` exactly.
pub fn draw_probe<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    let mut b: Vec<f64> = (0..len).map(|_| StandardNormal.sample(rng)).collect();
    let norm = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = (len as f64).sqrt() / norm;
    b.iter_mut().for_each(|x| *x *= scale);
    b
}

fn mc_divergence_from<D: Denoiser + ?Sized>(
    denoiser: &D,
    r: &ChannelImage,
    base: &ChannelImage,
    noise_var: f64,
    rng: &mut dyn rand::RngCore,
    probes: usize,
) -> Result<f64> {
    if probes == 0 {
        return Err(Error::input("at least one probe is required"));
    }
    let eps = probe_step(r);
    let mut total = 0.0;
    for _ in 0..probes {
        let b = draw_probe(r.len(), rng);
        let mut shifted = r.clone();
        shifted
            .data_mut()
            .iter_mut()
            .zip(&b)
            .for_each(|(x, bi)| *x += eps * bi);
        let out = denoiser.denoise(&shifted, noise_var)?;
        let dot: f64 = b
            .iter()
            .zip(out.data().iter().zip(base.data()))
            .map(|(bi, (o, d))| bi * (o - d))
            .sum();
        total += dot / eps;
    }
    Ok(total / probes as f64)
}

/// Monte-Carlo divergence `bᵀ(D(r + εb) − D(r))/ε`, averaged over probes.
pub fn mc_divergence<D: Denoiser + ?Sized>(
    denoiser: &D,
    r: &ChannelImage,
    noise_var: f64,
    rng: &mut dyn rand::RngCore,
    probes: usize,
) -> Result<f64> {
    let base = denoiser.denoise(r, noise_var)?;
    mc_divergence_from(denoiser, r, &base, noise_var, rng, probes)
}

/// How the posterior variance of Module B normalizes the divergence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DivergenceNorm {
    /// Divide by the real-coordinate count 2·M·N.
    #[default]
    RealCoordinates,
    /// Divide by the complex-entry count M·N.
    ComplexEntries,
}

/// Output of one Module B evaluation.
#[derive(Debug, Clone)]
pub struct ModuleBOutput {
    pub h_hat: Vec<Complex64>,
    pub v_post: Vec<f64>,
    pub divergence: f64,
}

/// Denoise `r1h` at noise level `avg(v1h)`; the posterior variance is the
/// constant `div/P · avg(v1h)`, floored at [`VARIANCE_FLOOR`].
pub fn module_b_step(
    denoiser: &dyn Denoiser,
    r1h: &[Complex64],
    v1h: &[f64],
    beams: usize,
    probe_rng: &mut dyn rand::RngCore,
    norm: DivergenceNorm,
) -> Result<ModuleBOutput> {
    Error::check_len("v1h", r1h.len(), v1h.len())?;
    if beams == 0 || !r1h.len().is_multiple_of(beams) {
        return Err(Error::input("channel length is not a multiple of the beam count"));
    }
    if v1h.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::input("v1h entries must be positive"));
    }
    let subcarriers = r1h.len() / beams;
    let avg_v = v1h.iter().sum::<f64>() / v1h.len() as f64;
    let image = ChannelImage::from_stacked(beams, subcarriers, r1h)?;
    let (out, divergence) = denoiser.denoise_with_divergence(&image, avg_v, probe_rng)?;
    image.check_shape(&out)?;
    let p = match norm {
        DivergenceNorm::RealCoordinates => image.len() as f64,
        DivergenceNorm::ComplexEntries => (image.len() / 2) as f64,
    };
    let v_post = (divergence / p * avg_v).max(VARIANCE_FLOOR);
    Ok(ModuleBOutput {
        h_hat: out.to_stacked(),
        v_post: vec![v_post; r1h.len()],
        divergence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};
    use proptest::prelude::*;

    struct ZeroDenoiser;
    impl Denoiser for ZeroDenoiser {
        fn name(&self) -> &str {
            "zero"
        }
        fn denoise(&self, r: &ChannelImage, _: f64) -> Result<ChannelImage> {
            Ok(ChannelImage::zeros(r.beams(), r.subcarriers()))
        }
        fn analytic_divergence(&self, _: &ChannelImage, _: f64) -> Option<f64> {
            Some(0.0)
        }
    }

    fn gaussian_image(beams: usize, subcarriers: usize, sd: f64, seed: u64) -> ChannelImage {
        let mut rng = substream(seed, Stream::Oracle, 0);
        let data = (0..2 * beams * subcarriers)
            .map(|_| sd * crate::rng::std_normal(&mut rng))
            .collect::<Vec<f64>>();
        ChannelImage::from_data(beams, subcarriers, data).unwrap()
    }

    #[test]
    fn image_round_trip_is_lossless() {
        let img = gaussian_image(3, 5, 1.0, 1);
        let h = img.to_stacked();
        let back = ChannelImage::from_stacked(3, 5, &h).unwrap();
        assert_eq!(back, img);
        assert_eq!(back.to_stacked(), h);
    }

    #[test]
    fn soft_threshold_example() {
        // r = [3, −1, 0.5] at τ = 1
        let img = ChannelImage::from_data(1, 3, vec![3.0, -1.0, 0.5, 0.0, 0.0, 0.0]).unwrap();
        let (out, div) = SoftThresholdDenoiser::apply_threshold(&img, 1.0);
        assert_eq!(&out.data()[..3], &[2.0, 0.0, 0.0]);
        assert_eq!(div, 1.0);
        let (same, div0) = SoftThresholdDenoiser::apply_threshold(&gaussian_image(2, 2, 1.0, 2), 0.0);
        assert_eq!(same, gaussian_image(2, 2, 1.0, 2));
        assert_eq!(div0, 8.0);
        let (zeros, div_all) = SoftThresholdDenoiser::apply_threshold(&img, 5.0);
        assert!(zeros.data().iter().all(|&x| x == 0.0));
        assert_eq!(div_all, 0.0);
        // λ = 1 at v = 2 is τ = 1
        let st = SoftThresholdDenoiser { lambda: 1.0 };
        assert_eq!(st.denoise(&img, 2.0).unwrap(), out);
    }

    #[test]
    fn identity_and_scale_have_exact_mc_divergence() {
        let img = gaussian_image(8, 16, 1.0, 3);
        let p = img.len() as f64;
        for seed in 0..5 {
            let mut rng = substream(seed, Stream::Probe, 0);
            let d = mc_divergence(&IdentityDenoiser, &img, 0.1, &mut rng, 1).unwrap();
            assert!((d - p).abs() < 1e-9 * p, "{d}");
            let d = mc_divergence(&ScaleDenoiser(0.5), &img, 0.1, &mut rng, 3).unwrap();
            assert!((d - 0.5 * p).abs() < 1e-9 * p, "{d}");
        }
        assert_eq!(IdentityDenoiser.analytic_divergence(&img, 0.1), Some(p));
        assert!(mc_divergence(&IdentityDenoiser, &img, 0.1, &mut substream(0, Stream::Probe, 0), 0).is_err());
    }

    #[test]
    fn probe_step_floor() {
        let zero = ChannelImage::zeros(2, 2);
        assert_eq!(probe_step(&zero), 1e-9);
        let d = mc_divergence(&IdentityDenoiser, &zero, 1.0, &mut substream(1, Stream::Probe, 0), 1).unwrap();
        assert!((d - 8.0).abs() < 1e-6);
    }

    #[test]
    fn sureshrink_edge_cases() {
        let img = gaussian_image(4, 8, 1.0, 5);
        assert_eq!(sureshrink_select_lambda(&img, 0.3, &[0.7]).unwrap(), 0.7);
        let grid = lambda_grid(32, 1e-2, 10.0);
        assert!((grid[0] - 1e-2).abs() < 1e-15 && (grid[31] - 10.0).abs() < 1e-12);
        // noiseless input: no shrinkage wanted
        assert_eq!(sureshrink_select_lambda(&img, 1e-14, &grid).unwrap(), grid[0]);
        assert!(sureshrink_select_lambda(&img, 0.3, &[]).is_err());
    }

    #[test]
    fn module_b_examples() {
        let img = gaussian_image(4, 6, 1.0, 7);
        let r = img.to_stacked();
        let v = vec![0.3; r.len()];
        let mut rng = substream(0, Stream::Probe, 0);
        let out = module_b_step(&IdentityDenoiser, &r, &v, 4, &mut rng, DivergenceNorm::RealCoordinates).unwrap();
        assert_eq!(out.h_hat, r);
        assert!(out.v_post.iter().all(|&x| (x - 0.3).abs() < 1e-15));

        let out = module_b_step(&ZeroDenoiser, &r, &v, 4, &mut rng, DivergenceNorm::RealCoordinates).unwrap();
        assert!(out.v_post.iter().all(|&x| x == VARIANCE_FLOOR));

        // one coordinate above threshold → v_post = avg(v)/P
        let mut data = vec![0.0; 2 * 4 * 6];
        data[0] = 3.0;
        data[1] = -1.0;
        data[2] = 0.5;
        let fixture = ChannelImage::from_data(4, 6, data).unwrap();
        let v = vec![2.0; 24];
        let out = module_b_step(
            &SoftThresholdDenoiser { lambda: 1.0 },
            &fixture.to_stacked(),
            &v,
            4,
            &mut rng,
            DivergenceNorm::RealCoordinates,
        )
        .unwrap();
        assert!((out.v_post[0] - 2.0 / 48.0).abs() < 1e-15);
        assert_eq!(out.divergence, 1.0);
    }

    proptest! {
        #[test]
        fn soft_threshold_is_one_lipschitz(a in -5.0f64..5.0, b in -5.0f64..5.0, tau in 0.0f64..3.0) {
            prop_assert!((soft(a, tau) - soft(b, tau)).abs() <= (a - b).abs() + 1e-15);
        }
    }
}
