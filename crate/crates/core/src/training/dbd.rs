//! Denoiser-by-denoiser training: one network per noise bin, trained on
//! plain AWGN denoising outside the unfolded iteration.

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::gradient::{batch_loss_and_grad, TrainingPair};
use super::{Adam, LossKind, LrSchedule, NoiseBinTable, TrainRecord, NOISE_SCALE};
use crate::denoiser::{ChannelImage, CnnArch, Denoiser, SmallCnn};
use crate::error::{Error, Result};
use crate::gec::DenoiserBank;
use crate::rng::{substream, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DbdConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: LrSchedule,
    pub arch: CnnArch,
    pub seed: u64,
    pub bins: NoiseBinTable,
    pub verbose: bool,
}

impl Default for DbdConfig {
    fn default() -> Self {
        Self {
            epochs: 4,
            batch_size: 16,
            lr: LrSchedule::default(),
            arch: CnnArch::default(),
            seed: 0,
            bins: NoiseBinTable::default(),
            verbose: false,
        }
    }
}

/// Networks indexed by noise bin; selects by the layer's `avg(v1h)`.
#[derive(Debug, Clone)]
pub struct BinnedDenoisers {
    pub table: NoiseBinTable,
    pub nets: Vec<SmallCnn>,
}

impl BinnedDenoisers {
    pub fn new(table: NoiseBinTable, nets: Vec<SmallCnn>) -> Result<Self> {
        Error::check_len("binned networks", table.len(), nets.len())?;
        Ok(Self { table, nets })
    }

    pub fn select(&self, noise_var: f64) -> &SmallCnn {
        &self.nets[self.table.lookup(noise_var)]
    }
}

impl DenoiserBank for BinnedDenoisers {
    fn for_layer(&self, _: usize, noise_var: f64) -> Result<&dyn Denoiser> {
        Ok(self.select(noise_var))
    }
}

fn noisy_pair<R: Rng + ?Sized>(h: &ChannelImage, lo: f64, hi: f64, rng: &mut R) -> TrainingPair {
    let scaled = if hi > lo { rng.random_range(lo..hi) } else { lo };
    let v = scaled / NOISE_SCALE;
    let sd = (v / 2.0).sqrt();
    let input = h.map(|x| x);
    let mut input = input;
    input
        .data_mut()
        .iter_mut()
        .for_each(|x| *x += sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng));
    TrainingPair {
        input,
        noise_var: v,
        truth: Some(h.clone()),
    }
}

/// Trains one network per bin with MSE on `h + w`, where each example draws
/// its scaled variance uniformly inside the bin and fresh noise every epoch.
pub fn train_denoiser_by_denoiser(channels: &[(usize, usize, Vec<Complex64>)], cfg: &DbdConfig) -> Result<(BinnedDenoisers, Vec<TrainRecord>)> {
    if channels.is_empty() {
        return Err(Error::input("empty channel dataset"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::input("batch size must be positive"));
    }
    let images = channels
        .iter()
        .map(|(n, m, h)| ChannelImage::from_stacked(*n, *m, h))
        .collect::<Result<Vec<_>>>()?;
    let mut nets = Vec::with_capacity(cfg.bins.len());
    let mut log = Vec::new();
    for bin in 0..cfg.bins.len() {
        let (lo, hi) = cfg.bins.interval(bin);
        let mut net = SmallCnn::init(cfg.arch.clone(), &mut substream(cfg.seed, Stream::Init, 1 + bin as u64))?;
        let mut adam = Adam::new(net.parameter_count());
        let mut noise_rng = substream(cfg.seed, Stream::Noise, bin as u64);
        let mut probe_rng = substream(cfg.seed, Stream::Probe, bin as u64);
        for epoch in 0..cfg.epochs {
            let mut order: Vec<usize> = (0..images.len()).collect();
            order.shuffle(&mut substream(cfg.seed, Stream::Training, ((bin as u64) << 32) | epoch as u64));
            let lr = cfg.lr.at(epoch, cfg.epochs);
            for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
                let batch: Vec<TrainingPair> = chunk.iter().map(|&i| noisy_pair(&images[i], lo, hi, &mut noise_rng)).collect();
                let (loss, grad) = batch_loss_and_grad(&net, &batch, LossKind::Mse, &mut probe_rng)?;
                let diverged = Error::TrainingDiverged {
                    layer: bin,
                    epoch,
                    batch: b,
                    loss,
                };
                if !loss.is_finite() {
                    return Err(diverged);
                }
                log.push(TrainRecord {
                    kind: LossKind::Mse,
                    stage: bin,
                    epoch,
                    batch: b,
                    loss,
                    seed: cfg.seed,
                });
                adam.step(&mut net, &grad, lr)?;
                if !net.is_finite() {
                    return Err(diverged);
                }
            }
        }
        if cfg.verbose {
            let last = log.last().map(|r| r.loss).unwrap_or(f64::NAN);
            eprintln!("bin {bin} [{lo}, {hi}): last batch loss {last:.4e}");
        }
        nets.push(net);
    }
    Ok((BinnedDenoisers::new(cfg.bins.clone(), nets)?, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::sample_channel;
    use crate::training::gradient::denoised_mse;
    use crate::SystemConfig;

    fn channels(count: usize, seed: u64) -> Vec<(usize, usize, Vec<Complex64>)> {
        let cfg = SystemConfig {
            antennas: 8,
            subcarriers: 8,
            paths: 2,
            ..SystemConfig::default()
        };
        (0..count)
            .map(|k| {
                let h = sample_channel(&cfg, &mut substream(seed, Stream::Channel, k as u64)).unwrap();
                (8, 8, h.into_stacked())
            })
            .collect()
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(train_denoiser_by_denoiser(&[], &DbdConfig::default()).is_err());
    }

    #[test]
    fn zero_noise_bin_learns_identity() {
        let cfg = DbdConfig {
            epochs: 30,
            batch_size: 8,
            arch: CnnArch::with_hidden(4, 3),
            bins: NoiseBinTable::new(vec![0.0, 1e-12]).unwrap(),
            lr: LrSchedule {
                initial: 3e-3,
                final_lr: 1e-3,
                drop_fraction: 0.7,
            },
            ..DbdConfig::default()
        };
        let (bank, log) = train_denoiser_by_denoiser(&channels(32, 1), &cfg).unwrap();
        assert_eq!(bank.nets.len(), 1);
        assert_eq!(log.len(), 30 * 4);
        let held_out: Vec<TrainingPair> = channels(8, 2)
            .iter()
            .map(|(n, m, h)| {
                let img = ChannelImage::from_stacked(*n, *m, h).unwrap();
                TrainingPair {
                    input: img.clone(),
                    noise_var: 0.0,
                    truth: Some(img),
                }
            })
            .collect();
        let power: f64 = held_out.iter().map(|p| p.input.data().iter().map(|x| x * x).sum::<f64>() / p.input.len() as f64).sum::<f64>() / 8.0;
        let mse = denoised_mse(&bank.nets[0], &held_out).unwrap();
        assert!(mse < 1e-4 * power, "{mse} vs {power}");
    }
}
