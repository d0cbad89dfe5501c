use num_complex::Complex64;

use crate::channel::BeamFrequencyChannel;
use crate::error::{Error, Result};

/// Two-plane real image of a beam-frequency matrix: plane 0 holds real
/// parts, plane 1 imaginary parts; each plane is `beams × subcarriers`,
/// row-major by beam.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelImage {
    beams: usize,
    subcarriers: usize,
    data: Vec<f64>,
}

impl ChannelImage {
    pub fn zeros(beams: usize, subcarriers: usize) -> Self {
        Self {
            beams,
            subcarriers,
            data: vec![0.0; 2 * beams * subcarriers],
        }
    }

    pub fn from_data(beams: usize, subcarriers: usize, data: Vec<f64>) -> Result<Self> {
        Error::check_len("image data", 2 * beams * subcarriers, data.len())?;
        Ok(Self {
            beams,
            subcarriers,
            data,
        })
    }

    /// From a stacked (subcarrier-major) complex channel vector.
    pub fn from_stacked(beams: usize, subcarriers: usize, h: &[Complex64]) -> Result<Self> {
        Error::check_len("stacked channel", beams * subcarriers, h.len())?;
        let plane = beams * subcarriers;
        let mut data = vec![0.0; 2 * plane];
        for m in 0..subcarriers {
            for n in 0..beams {
                let c = h[m * beams + n];
                data[n * subcarriers + m] = c.re;
                data[plane + n * subcarriers + m] = c.im;
            }
        }
        Ok(Self {
            beams,
            subcarriers,
            data,
        })
    }

    pub fn from_channel(h: &BeamFrequencyChannel) -> Self {
        Self::from_stacked(h.beams(), h.subcarriers(), h.stacked()).expect("consistent channel")
    }

    pub fn to_stacked(&self) -> Vec<Complex64> {
        let plane = self.plane_len();
        let mut h = vec![Complex64::new(0.0, 0.0); plane];
        for m in 0..self.subcarriers {
            for n in 0..self.beams {
                let k = n * self.subcarriers + m;
                h[m * self.beams + n] = Complex64::new(self.data[k], self.data[plane + k]);
            }
        }
        h
    }

    pub fn beams(&self) -> usize {
        self.beams
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    fn plane_len(&self) -> usize {
        self.beams * self.subcarriers
    }

    /// Number of real coordinates, `2·N·M`.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &ChannelImage) -> bool {
        self.beams == other.beams && self.subcarriers == other.subcarriers
    }

    pub fn check_shape(&self, other: &ChannelImage) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::input(format!(
                "image shape {}x{} does not match {}x{}",
                other.beams, other.subcarriers, self.beams, self.subcarriers
            )))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            beams: self.beams,
            subcarriers: self.subcarriers,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn squared_distance(&self, other: &ChannelImage) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}
