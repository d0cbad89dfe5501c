//! Losses, optimizer and the two training procedures for the CNN denoiser.

mod dbd;
mod gradient;
mod lbl;
pub mod manifest;

use serde::{Deserialize, Serialize};

pub use dbd::{train_denoiser_by_denoiser, BinnedDenoisers, DbdConfig};
pub use gradient::{batch_loss_and_grad, denoised_mse, finite_difference_gradcheck, gradcheck_fixture, GradcheckReport, TrainingPair};
pub use lbl::{generate_samples, train_layer_by_layer, LblConfig, LblResult, MeasurementSample};

use crate::denoiser::{ChannelImage, SmallCnn};
use crate::error::{Error, Result};

/// `(1/P)·‖r − D(r)‖² − σ² + (2σ²/P)·div`, with `σ²` the variance of one real
/// coordinate.
pub fn sure_loss(r: &ChannelImage, denoised: &ChannelImage, per_coord_var: f64, divergence: f64, p: f64) -> Result<f64> {
    r.check_shape(denoised)?;
    if !(p > 0.0) || !(per_coord_var >= 0.0) {
        return Err(Error::input("SURE needs P > 0 and a non-negative noise variance"));
    }
    Ok(r.squared_distance(denoised) / p - per_coord_var + 2.0 * per_coord_var * divergence / p)
}

/// `(1/P)·‖h_true − h_hat‖²`.
pub fn mse_loss(h_hat: &ChannelImage, h_true: &ChannelImage, p: f64) -> Result<f64> {
    h_hat.check_shape(h_true)?;
    if !(p > 0.0) {
        return Err(Error::input("MSE needs P > 0"));
    }
    Ok(h_hat.squared_distance(h_true) / p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Sure,
    Mse,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Sure => "sure",
            LossKind::Mse => "mse",
        })
    }
}

/// Half-open intervals over the scaled variance `σ̄² = 255·v`, lookup clamped
/// to the first and last interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseBinTable {
    edges: Vec<f64>,
}

pub const NOISE_SCALE: f64 = 255.0;

impl Default for NoiseBinTable {
    fn default() -> Self {
        Self {
            edges: vec![0.0, 10.0, 20.0, 40.0, 60.0, 80.0, 100.0, 150.0, 300.0, 500.0],
        }
    }
}

impl NoiseBinTable {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) || edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::input("bin edges must be finite and strictly increasing"));
        }
        Ok(Self { edges })
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn interval(&self, bin: usize) -> (f64, f64) {
        (self.edges[bin], self.edges[bin + 1])
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Bin of a scaled variance `σ̄²`.
    pub fn lookup_scaled(&self, scaled: f64) -> usize {
        let upper = &self.edges[1..self.edges.len() - 1];
        upper.partition_point(|&e| e <= scaled)
    }

    /// Bin of a per-entry variance `v`.
    pub fn lookup(&self, noise_var: f64) -> usize {
        self.lookup_scaled(NOISE_SCALE * noise_var)
    }
}

/// One optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub kind: LossKind,
    /// Layer (layer-by-layer) or bin (denoiser-by-denoiser) index.
    pub stage: usize,
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
    pub seed: u64,
}

/// Adaptive-moment stochastic gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(params: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; params],
            v: vec![0.0; params],
            t: 0,
        }
    }

    pub fn step(&mut self, net: &mut SmallCnn, grad: &[f64], lr: f64) -> Result<()> {
        Error::check_len("gradient", self.m.len(), grad.len())?;
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let (m, v) = (&mut self.m, &mut self.v);
        net.for_each_param_mut(|k, w| {
            m[k] = b1 * m[k] + (1.0 - b1) * grad[k];
            v[k] = b2 * v[k] + (1.0 - b2) * grad[k] * grad[k];
            *w -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
        });
        Ok(())
    }
}

/// Learning rate `initial` for the first `drop_fraction` of the epochs, then `final_lr`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub initial: f64,
    pub final_lr: f64,
    pub drop_fraction: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            initial: 1e-3,
            final_lr: 1e-4,
            drop_fraction: 0.75,
        }
    }
}

impl LrSchedule {
    pub fn at(&self, epoch: usize, epochs: usize) -> f64 {
        if (epoch as f64) < self.drop_fraction * epochs as f64 {
            self.initial
        } else {
            self.final_lr
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{IdentityDenoiser, SoftThresholdDenoiser, Denoiser};
    use crate::rng::{substream, Stream};

    fn img(data: Vec<f64>, beams: usize) -> ChannelImage {
        let sub = data.len() / (2 * beams);
        ChannelImage::from_data(beams, sub, data).unwrap()
    }

    #[test]
    fn sure_examples() {
        let r = img(vec![0.5, -1.0, 2.0, 0.25], 1);
        let p = r.len() as f64;
        let id = IdentityDenoiser.denoise(&r, 1.0).unwrap();
        assert!((sure_loss(&r, &id, 0.3, p, p).unwrap() - 0.3).abs() < 1e-15);
        let zero = ChannelImage::zeros(1, 2);
        let expect = (0.25 + 1.0 + 4.0 + 0.0625) / 4.0 - 0.3;
        assert!((sure_loss(&r, &zero, 0.3, 0.0, p).unwrap() - expect).abs() < 1e-15);
        assert!(sure_loss(&r, &zero, 0.3, 0.0, 0.0).is_err());
        assert!(sure_loss(&r, &ChannelImage::zeros(2, 2), 0.3, 0.0, p).is_err());
    }

    #[test]
    fn mse_examples() {
        let h = img(vec![1.0, -2.0, 0.5, 3.0], 1);
        assert_eq!(mse_loss(&h, &h, 4.0).unwrap(), 0.0);
        let zero = ChannelImage::zeros(1, 2);
        assert!((mse_loss(&zero, &h, 4.0).unwrap() - 14.25 / 4.0).abs() < 1e-15);
        let other = img(vec![0.0, 0.0, 1.0, 1.0], 1);
        let manual: f64 = h.data().iter().zip(other.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 4.0;
        assert_eq!(mse_loss(&other, &h, 4.0).unwrap(), manual);
    }

    #[test]
    fn sure_is_unbiased_for_soft_threshold() {
        // sparse truth, 10⁴ noise draws
        let (beams, sub) = (8, 16);
        let mut rng = substream(11, Stream::Oracle, 0);
        let truth: Vec<f64> = (0..2 * beams * sub)
            .map(|k| if k % 7 == 0 { 3.0 * crate::rng::std_normal(&mut rng) } else { 0.0 })
            .collect();
        let truth = ChannelImage::from_data(beams, sub, truth).unwrap();
        let v = 0.5;
        let sd = (v / 2.0_f64).sqrt();
        let den = SoftThresholdDenoiser { lambda: 1.5 };
        let p = truth.len() as f64;
        let (mut sure, mut mse) = (0.0, 0.0);
        let k = 10_000;
        for _ in 0..k {
            let r = truth.map(|x| x);
            let mut r = r;
            r.data_mut().iter_mut().for_each(|x| *x += sd * crate::rng::std_normal(&mut rng));
            let out = den.denoise(&r, v).unwrap();
            let div = den.analytic_divergence(&r, v).unwrap();
            sure += sure_loss(&r, &out, v / 2.0, div, p).unwrap();
            mse += mse_loss(&out, &truth, p).unwrap();
        }
        let rel = (sure - mse).abs() / mse;
        assert!(rel < 0.02, "{rel}");
    }

    #[test]
    fn bin_lookup() {
        let t = NoiseBinTable::default();
        assert_eq!(t.len(), 9);
        assert_eq!(t.interval(t.lookup_scaled(55.0)), (40.0, 60.0));
        assert_eq!(t.lookup_scaled(600.0), 8);
        assert_eq!(t.lookup_scaled(-1.0), 0);
        assert_eq!(t.lookup_scaled(10.0), 1);
        assert_eq!(t.lookup_scaled(9.999), 0);
        assert_eq!(t.lookup(55.0 / 255.0), 3);
        assert!(NoiseBinTable::new(vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn lr_schedule_drops() {
        let s = LrSchedule::default();
        assert_eq!(s.at(0, 4), 1e-3);
        assert_eq!(s.at(2, 4), 1e-3);
        assert_eq!(s.at(3, 4), 1e-4);
    }
}
