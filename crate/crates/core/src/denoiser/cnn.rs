//! Small residual convolutional denoiser with explicit backpropagation.
//!
//! Layout is channels-first: a tensor with `c` channels over an `h × w`
//! grid is a flat slice indexed `[c][y][x]`. Convolutions are stride 1 with
//! zero padding, so every layer preserves the grid. Hidden layers use
//! `max(0, ·)`; the derivative at exactly 0 is taken as 0.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ChannelImage, Denoiser};
use crate::error::{Error, Result};

/// Channel counts per layer boundary plus a square kernel size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnArch {
    pub channels: Vec<usize>,
    pub kernel: usize,
}

impl Default for CnnArch {
    /// 4 layers, 3×3 kernels, 16 hidden channels, 2 planes in and out.
    fn default() -> Self {
        Self {
            channels: vec![2, 16, 16, 16, 2],
            kernel: 3,
        }
    }
}

impl CnnArch {
    pub fn with_hidden(hidden: usize, layers: usize) -> Self {
        let mut channels = vec![2];
        channels.extend(std::iter::repeat_n(hidden, layers.saturating_sub(1)));
        channels.push(2);
        Self { channels, kernel: 3 }
    }

    pub fn layers(&self) -> usize {
        self.channels.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.len() < 2 {
            return Err(Error::input("a network needs at least one layer"));
        }
        if self.channels[0] != 2 || *self.channels.last().unwrap() != 2 {
            return Err(Error::input("first and last channel counts must be 2 (real/imag planes)"));
        }
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return Err(Error::input("kernel size must be odd"));
        }
        if self.channels.contains(&0) {
            return Err(Error::input("channel counts must be positive"));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.channels
            .windows(2)
            .map(|w| w[0] * w[1] * self.kernel * self.kernel + w[1])
            .sum()
    }
}

/// One convolution: `weight` indexed `[out][in][ky][kx]`, one bias per output.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub kernel: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    fn zeros(inputs: usize, outputs: usize, kernel: usize) -> Self {
        Self {
            inputs,
            outputs,
            kernel,
            weight: vec![0.0; outputs * inputs * kernel * kernel],
            bias: vec![0.0; outputs],
        }
    }

    fn widx(&self, o: usize, i: usize, ky: usize, kx: usize) -> usize {
        ((o * self.inputs + i) * self.kernel + ky) * self.kernel + kx
    }

    /// Valid output range `[lo, hi)` along an axis of length `len` for tap offset `d`.
    fn span(len: usize, d: isize) -> (usize, usize) {
        let lo = (-d).max(0) as usize;
        let hi = (len as isize - d).clamp(0, len as isize) as usize;
        (lo, hi.max(lo))
    }

    fn forward(&self, input: &[f64], h: usize, w: usize) -> Vec<f64> {
        let plane = h * w;
        let pad = (self.kernel / 2) as isize;
        let mut out = vec![0.0; self.outputs * plane];
        for o in 0..self.outputs {
            let out_o = &mut out[o * plane..(o + 1) * plane];
            out_o.iter_mut().for_each(|v| *v = self.bias[o]);
            for i in 0..self.inputs {
                let in_i = &input[i * plane..(i + 1) * plane];
                for ky in 0..self.kernel {
                    let dy = ky as isize - pad;
                    let (y_lo, y_hi) = Self::span(h, dy);
                    for kx in 0..self.kernel {
                        let dx = kx as isize - pad;
                        let (x_lo, x_hi) = Self::span(w, dx);
                        let wt = self.weight[self.widx(o, i, ky, kx)];
                        if wt == 0.0 {
                            continue;
                        }
                        for y in y_lo..y_hi {
                            let src_row = (y as isize + dy) as usize * w;
                            let src = &in_i[(src_row as isize + x_lo as isize + dx) as usize
                                ..(src_row as isize + x_hi as isize + dx) as usize];
                            let dst = &mut out_o[y * w + x_lo..y * w + x_hi];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += wt * s;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    fn backward(&self, input: &[f64], grad_out: &[f64], h: usize, w: usize, grads: &mut ConvLayer, need_input: bool) -> Vec<f64> {
        let plane = h * w;
        let pad = (self.kernel / 2) as isize;
        let mut grad_in = if need_input {
            vec![0.0; self.inputs * plane]
        } else {
            Vec::new()
        };
        for o in 0..self.outputs {
            let g_o = &grad_out[o * plane..(o + 1) * plane];
            grads.bias[o] += g_o.iter().sum::<f64>();
            for i in 0..self.inputs {
                let in_i = &input[i * plane..(i + 1) * plane];
                for ky in 0..self.kernel {
                    let dy = ky as isize - pad;
                    let (y_lo, y_hi) = Self::span(h, dy);
                    for kx in 0..self.kernel {
                        let dx = kx as isize - pad;
                        let (x_lo, x_hi) = Self::span(w, dx);
                        let widx = self.widx(o, i, ky, kx);
                        let wt = self.weight[widx];
                        let mut acc = 0.0;
                        for y in y_lo..y_hi {
                            let src_start = ((y as isize + dy) * w as isize + x_lo as isize + dx) as usize;
                            let src = &in_i[src_start..src_start + (x_hi - x_lo)];
                            let g = &g_o[y * w + x_lo..y * w + x_hi];
                            acc += g.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                            if need_input {
                                let dst = &mut grad_in[i * plane + src_start..i * plane + src_start + (x_hi - x_lo)];
                                for (d, gv) in dst.iter_mut().zip(g) {
                                    *d += wt * gv;
                                }
                            }
                        }
                        grads.weight[widx] += acc;
                    }
                }
            }
        }
        grad_in
    }
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    height: usize,
    width: usize,
    /// Input of every layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of hidden layers.
    pre: Vec<Vec<f64>>,
    /// Final residual estimate.
    pub residual: Vec<f64>,
}

impl ForwardTrace {
    /// Which hidden units were strictly positive.
    pub fn active_units(&self) -> Vec<bool> {
        self.pre.iter().flatten().map(|&z| z > 0.0).collect()
    }
}

/// Gradients with the same layout as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnGradients {
    pub layers: Vec<ConvLayer>,
}

impl CnnGradients {
    pub fn zeros(arch: &CnnArch) -> Self {
        Self {
            layers: arch
                .channels
                .windows(2)
                .map(|c| ConvLayer::zeros(c[0], c[1], arch.kernel))
                .collect(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn add_scaled(&mut self, other: &CnnGradients, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.iter_mut().zip(&b.weight).for_each(|(x, y)| *x += scale * y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += scale * y);
        }
    }
}

/// Residual CNN denoiser: `D(r) = r − R(r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmallCnn {
    arch: CnnArch,
    layers: Vec<ConvLayer>,
}

impl SmallCnn {
    pub fn zeros(arch: CnnArch) -> Result<Self> {
        arch.validate()?;
        let layers = CnnGradients::zeros(&arch).layers;
        Ok(Self { arch, layers })
    }

    /// Centered uniform initialization with bound `1/√fan_in`, biases zero.
    pub fn init<R: Rng + ?Sized>(arch: CnnArch, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        for layer in &mut net.layers {
            let bound = 1.0 / ((layer.inputs * layer.kernel * layer.kernel) as f64).sqrt();
            layer.weight.iter_mut().for_each(|w| *w = rng.random_range(-bound..bound));
        }
        Ok(net)
    }

    pub fn from_layers(arch: CnnArch, layers: Vec<ConvLayer>) -> Result<Self> {
        arch.validate()?;
        let expected = CnnGradients::zeros(&arch).layers;
        if expected.len() != layers.len() {
            return Err(Error::input("layer count does not match architecture"));
        }
        for (e, l) in expected.iter().zip(&layers) {
            if e.inputs != l.inputs || e.outputs != l.outputs || e.kernel != l.kernel || e.weight.len() != l.weight.len() || e.bias.len() != l.bias.len() {
                return Err(Error::input("layer shape does not match architecture"));
            }
        }
        Ok(Self { arch, layers })
    }

    pub fn arch(&self) -> &CnnArch {
        &self.arch
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.arch.parameter_count()
    }

    /// Flat parameter vector: per layer, weights then biases.
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        Error::check_len("parameter vector", self.parameter_count(), params.len())?;
        let mut it = params.iter();
        for layer in &mut self.layers {
            for w in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
                *w = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(usize, &mut f64)) {
        let mut k = 0;
        for layer in &mut self.layers {
            for w in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
                f(k, w);
                k += 1;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|x| x.is_finite()))
    }

    /// Residual estimate for a `2 × h × w` input, with activations retained.
    pub fn forward_trace(&self, input: &[f64], h: usize, w: usize) -> Result<ForwardTrace> {
        Error::check_len("network input", 2 * h * w, input.len())?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut current = input.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&current, h, w);
            inputs.push(current);
            if k == last {
                return Ok(ForwardTrace {
                    height: h,
                    width: w,
                    inputs,
                    pre,
                    residual: z,
                });
            }
            current = z.iter().map(|&v| v.max(0.0)).collect();
            pre.push(z);
        }
        unreachable!("at least one layer")
    }

    pub fn residual(&self, input: &[f64], h: usize, w: usize) -> Result<Vec<f64>> {
        Ok(self.forward_trace(input, h, w)?.residual)
    }

    /// Backpropagates `grad_residual = ∂L/∂R` through a trace; accumulates
    /// parameter gradients into `grads` and returns `∂L/∂input`.
    pub fn backward(&self, trace: &ForwardTrace, grad_residual: &[f64], grads: &mut CnnGradients, need_input: bool) -> Vec<f64> {
        let (h, w) = (trace.height, trace.width);
        let mut g = grad_residual.to_vec();
        for k in (0..self.layers.len()).rev() {
            let want_input = need_input || k > 0;
            let mut g_in = self.layers[k].backward(&trace.inputs[k], &g, h, w, &mut grads.layers[k], want_input);
            if k > 0 {
                let z = &trace.pre[k - 1];
                g_in.iter_mut().zip(z).for_each(|(gi, &zi)| {
                    if zi <= 0.0 {
                        *gi = 0.0;
                    }
                });
            }
            g = g_in;
        }
        g
    }
}

impl Denoiser for SmallCnn {
    fn name(&self) -> &str {
        "small-cnn"
    }

    fn denoise(&self, r: &ChannelImage, _noise_var: f64) -> Result<ChannelImage> {
        let residual = self.residual(r.data(), r.beams(), r.subcarriers())?;
        let data = r.data().iter().zip(&residual).map(|(x, e)| x - e).collect();
        ChannelImage::from_data(r.beams(), r.subcarriers(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};

    fn image(h: usize, w: usize, seed: u64) -> Vec<f64> {
        let mut rng = substream(seed, Stream::Oracle, 0);
        (0..2 * h * w).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn default_arch_shape() {
        let arch = CnnArch::default();
        assert_eq!(arch.layers(), 4);
        assert_eq!(arch.parameter_count(), 2 * 16 * 9 + 16 + 2 * (16 * 16 * 9 + 16) + 16 * 2 * 9 + 2);
        assert_eq!(CnnArch::with_hidden(16, 4), arch);
        assert!(CnnArch { channels: vec![2, 4, 2], kernel: 2 }.validate().is_err());
        assert!(CnnArch { channels: vec![1, 4, 2], kernel: 3 }.validate().is_err());
    }

    #[test]
    fn zero_weights_are_identity() {
        let net = SmallCnn::zeros(CnnArch::default()).unwrap();
        let img = ChannelImage::from_data(5, 7, image(5, 7, 1)).unwrap();
        assert_eq!(net.denoise(&img, 0.1).unwrap(), img);
    }

    #[test]
    fn output_shape_and_determinism() {
        let net = SmallCnn::init(CnnArch::default(), &mut substream(2, Stream::Init, 0)).unwrap();
        let img = ChannelImage::from_data(6, 9, image(6, 9, 3)).unwrap();
        let a = net.denoise(&img, 0.1).unwrap();
        let b = net.denoise(&img, 0.1).unwrap();
        assert!(a.same_shape(&img));
        assert_eq!(a, b);
        assert!(net.denoise(&ChannelImage::zeros(0, 0), 0.1).is_ok());
    }

    #[test]
    fn single_tap_convolution_shifts() {
        // 1 → 1 channel layer whose only nonzero tap is the upper-left one:
        // out[y][x] = in[y−1][x−1] with zero padding
        let mut layer = ConvLayer::zeros(1, 1, 3);
        layer.weight[0] = 1.0;
        let input: Vec<f64> = (1..=6).map(f64::from).collect();
        let out = layer.forward(&input, 2, 3);
        assert_eq!(out, vec![0.0, 0.0, 0.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn params_round_trip() {
        let mut net = SmallCnn::init(CnnArch::with_hidden(4, 3), &mut substream(4, Stream::Init, 0)).unwrap();
        let p = net.params();
        assert_eq!(p.len(), net.parameter_count());
        let doubled: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
        net.set_params(&doubled).unwrap();
        assert_eq!(net.params(), doubled);
        assert!(net.set_params(&doubled[1..]).is_err());
    }
}
