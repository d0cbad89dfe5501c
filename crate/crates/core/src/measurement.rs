//! Pilot-phase measurement operator, receiver noise and low-resolution ADCs.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{Resolution, SystemConfig};
use crate::error::{Error, Result};

/// Stacked analog combiner W̄ ∈ {±1/√(Q·N_RF)}^{(Q·N_RF)×N}.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionNetwork {
    w: DMatrix<f64>,
}

impl SelectionNetwork {
    pub fn from_matrix(w: DMatrix<f64>) -> Self {
        Self { w }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn rows(&self) -> usize {
        self.w.nrows()
    }

    pub fn antennas(&self) -> usize {
        self.w.ncols()
    }
}

/// i.i.d. equiprobable signs scaled by `1/√(Q·N_RF)`.
pub fn sample_selection_network<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> SelectionNetwork {
    let rows = cfg.measurements_per_subcarrier();
    let scale = 1.0 / (rows as f64).sqrt();
    let w = DMatrix::from_fn(rows, cfg.antennas, |_, _| if rng.random::<bool>() { scale } else { -scale });
    SelectionNetwork { w }
}

/// Uniform midrise quantizer applied independently to real and imaginary parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizerSpec {
    pub resolution: Resolution,
    pub step: f64,
}

impl QuantizerSpec {
    pub fn infinite() -> Self {
        Self {
            resolution: Resolution::Infinite,
            step: 0.0,
        }
    }

    pub fn new(bits: u32, step: f64) -> Result<Self> {
        if bits == 0 {
            return Err(Error::input("quantizer needs at least one bit"));
        }
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::input(format!("quantizer step must be positive, got {step}")));
        }
        Ok(Self {
            resolution: Resolution::Bits(bits),
            step,
        })
    }

    /// Default step: 3-sigma coverage of a real Gaussian with standard
    /// deviation `rms`, spread over `2^κ` levels.
    pub fn three_sigma(bits: u32, rms: f64) -> Result<Self> {
        Self::new(bits, 2.0 * 3.0 * rms / f64::from(1u32 << bits))
    }

    /// Largest bin index magnitude: codewords are `(k + ½)Δ`, k ∈ [−half, half−1].
    fn half_levels(bits: u32) -> i64 {
        1i64 << (bits - 1)
    }

    /// Nearest codeword for one real value; exact bin edges round up.
    pub fn quantize_real(&self, x: f64) -> f64 {
        match self.resolution {
            Resolution::Infinite => x,
            Resolution::Bits(bits) => {
                let half = Self::half_levels(bits);
                let k = (x / self.step).floor();
                let k = if k.is_nan() {
                    0
                } else {
                    (k.max(-(half as f64)).min((half - 1) as f64)) as i64
                };
                (k as f64 + 0.5) * self.step
            }
        }
    }

    /// Bin index of a codeword, or an error if `y` is not one.
    fn codeword_index(&self, y: f64, bits: u32) -> Result<i64> {
        let half = Self::half_levels(bits);
        let k = y / self.step - 0.5;
        let rounded = k.round();
        let tol = 1e-9 * k.abs().max(1.0);
        if (k - rounded).abs() > tol || rounded < -(half as f64) || rounded > (half - 1) as f64 {
            return Err(Error::NotACodeword {
                value: y,
                bits,
                step: self.step,
            });
        }
        Ok(rounded as i64)
    }

    /// `(r_low, r_up)` of the quantization cell whose codeword is `y`; the
    /// outermost cells extend to ∓∞.
    pub fn bounds(&self, y: f64) -> Result<(f64, f64)> {
        match self.resolution {
            Resolution::Infinite => Ok((f64::NEG_INFINITY, f64::INFINITY)),
            Resolution::Bits(bits) => {
                let half = Self::half_levels(bits);
                let k = self.codeword_index(y, bits)?;
                let center = (k as f64 + 0.5) * self.step;
                let low = if k == -half {
                    f64::NEG_INFINITY
                } else {
                    center - self.step / 2.0
                };
                let up = if k == half - 1 {
                    f64::INFINITY
                } else {
                    center + self.step / 2.0
                };
                Ok((low, up))
            }
        }
    }

    /// All codewords in increasing order (empty when unquantized).
    pub fn codebook(&self) -> Vec<f64> {
        match self.resolution {
            Resolution::Infinite => Vec::new(),
            Resolution::Bits(bits) => {
                let half = Self::half_levels(bits);
                (-half..half).map(|k| (k as f64 + 0.5) * self.step).collect()
            }
        }
    }
}

/// Quantizes real and imaginary parts independently.
pub fn quantize(y: &[Complex64], spec: &QuantizerSpec) -> Vec<Complex64> {
    y.iter()
        .map(|c| Complex64::new(spec.quantize_real(c.re), spec.quantize_real(c.im)))
        .collect()
}

/// Per-real-dimension cell bounds of one quantized sample.
pub fn quantization_bounds(y_tilde: f64, spec: &QuantizerSpec) -> Result<(f64, f64)> {
    spec.bounds(y_tilde)
}

/// The block-diagonal pilot model `y = (I_M ⊗ W̄) h + n`, kept implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementModel {
    pub selection: SelectionNetwork,
    pub subcarriers: usize,
    /// Complex noise variance σ_n² per measurement.
    pub noise_var: f64,
    pub quantizer: QuantizerSpec,
}

impl MeasurementModel {
    /// Assembles a model for `cfg` around a given selection network, with the
    /// SNR-derived noise level and the configured (or 3-sigma) quantizer.
    pub fn new(cfg: &SystemConfig, selection: SelectionNetwork) -> Result<Self> {
        cfg.validate()?;
        Error::check_len("selection rows", cfg.measurements_per_subcarrier(), selection.rows())?;
        Error::check_len("selection columns", cfg.antennas, selection.antennas())?;
        let noise_var = cfg.noise_var();
        let mut model = Self {
            selection,
            subcarriers: cfg.subcarriers,
            noise_var,
            quantizer: QuantizerSpec::infinite(),
        };
        if let Resolution::Bits(bits) = cfg.adc_bits {
            model.quantizer = match cfg.quantizer_step {
                Some(step) => QuantizerSpec::new(bits, step)?,
                None => {
                    let rms = ((model.p_z() + noise_var) / 2.0).sqrt();
                    QuantizerSpec::three_sigma(bits, rms)?
                }
            };
        }
        Ok(model)
    }

    pub fn sample<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Result<Self> {
        let selection = sample_selection_network(cfg, rng);
        Self::new(cfg, selection)
    }

    pub fn antennas(&self) -> usize {
        self.selection.antennas()
    }

    pub fn rows_per_subcarrier(&self) -> usize {
        self.selection.rows()
    }

    pub fn channel_len(&self) -> usize {
        self.antennas() * self.subcarriers
    }

    pub fn measurement_len(&self) -> usize {
        self.rows_per_subcarrier() * self.subcarriers
    }

    /// Per-entry power of z for unit channel power: `tr(AᴴA)/(M·Q·N_RF)`.
    pub fn p_z(&self) -> f64 {
        // tr(AᴴA) = M·‖W̄‖_F², so the M cancels.
        self.selection.matrix().norm_squared() / self.rows_per_subcarrier() as f64
    }

    /// `A x` for a stacked channel-length vector.
    pub fn apply(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        Error::check_len("channel vector", self.channel_len(), x.len())?;
        let n = self.antennas();
        let rows = self.rows_per_subcarrier();
        let w = self.selection.matrix();
        let mut out = vec![Complex64::new(0.0, 0.0); self.measurement_len()];
        for m in 0..self.subcarriers {
            let xm = &x[m * n..(m + 1) * n];
            let ym = &mut out[m * rows..(m + 1) * rows];
            for (j, xj) in xm.iter().enumerate() {
                for (i, yi) in ym.iter_mut().enumerate() {
                    *yi += xj * w[(i, j)];
                }
            }
        }
        Ok(out)
    }

    /// `Aᴴ y` for a stacked measurement-length vector.
    pub fn adjoint(&self, y: &[Complex64]) -> Result<Vec<Complex64>> {
        Error::check_len("measurement vector", self.measurement_len(), y.len())?;
        let n = self.antennas();
        let rows = self.rows_per_subcarrier();
        let w = self.selection.matrix();
        let mut out = vec![Complex64::new(0.0, 0.0); self.channel_len()];
        for m in 0..self.subcarriers {
            let ym = &y[m * rows..(m + 1) * rows];
            let xm = &mut out[m * n..(m + 1) * n];
            for (j, xj) in xm.iter_mut().enumerate() {
                *xj = ym.iter().enumerate().map(|(i, yi)| yi * w[(i, j)]).sum();
            }
        }
        Ok(out)
    }

    /// Unquantized received samples `A h + n`, n ~ CN(0, σ_n² I).
    pub fn forward<R: Rng + ?Sized>(&self, h: &[Complex64], rng: &mut R) -> Result<Vec<Complex64>> {
        let mut y = self.apply(h)?;
        if self.noise_var > 0.0 {
            let sd = (self.noise_var / 2.0).sqrt();
            for yi in &mut y {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                *yi += Complex64::new(re * sd, im * sd);
            }
        }
        Ok(y)
    }

    /// Forward model followed by the ADC.
    pub fn observe<R: Rng + ?Sized>(&self, h: &[Complex64], rng: &mut R) -> Result<Vec<Complex64>> {
        let y = self.forward(h, rng)?;
        Ok(quantize(&y, &self.quantizer))
    }

    /// Dense `I_M ⊗ W̄`; only for small reference computations.
    pub fn dense_operator(&self) -> DMatrix<Complex64> {
        let n = self.antennas();
        let rows = self.rows_per_subcarrier();
        let w = self.selection.matrix();
        let mut a = DMatrix::zeros(self.measurement_len(), self.channel_len());
        for m in 0..self.subcarriers {
            for i in 0..rows {
                for j in 0..n {
                    a[(m * rows + i, m * n + j)] = Complex64::new(w[(i, j)], 0.0);
                }
            }
        }
        a
    }
}
