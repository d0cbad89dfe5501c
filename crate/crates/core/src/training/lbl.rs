//! Layer-by-layer training: layer `t` is trained on the `(r1h, v1h)` it
//! actually sees once layers `< t` are frozen.

use std::sync::Arc;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::gradient::{batch_loss_and_grad, TrainingPair};
use super::{Adam, LossKind, LrSchedule, TrainRecord};
use crate::baselines::nmse;
use crate::channel::sample_channel;
use crate::config::SystemConfig;
use crate::denoiser::{module_b_step, ChannelImage, CnnArch, SmallCnn};
use crate::error::{Error, Result};
use crate::gec::{GecConfig, GecState, Ldgec};
use crate::measurement::MeasurementModel;
use crate::rng::{substream, SimRng, Stream};

/// One pilot observation, with its truth when available.
#[derive(Debug, Clone)]
pub struct MeasurementSample {
    pub model: Arc<MeasurementModel>,
    pub y: Vec<Complex64>,
    pub truth: Option<Vec<Complex64>>,
}

/// Samples `first..first + count` of the stream for `seed`. Consecutive
/// groups of 16 share a selection network.
pub fn generate_samples(cfg: &SystemConfig, seed: u64, first: u64, count: usize, keep_truth: bool) -> Result<Vec<MeasurementSample>> {
    let mut out = Vec::with_capacity(count);
    let mut model: Option<(u64, Arc<MeasurementModel>)> = None;
    for k in first..first + count as u64 {
        let group = k / 16;
        let m = match &model {
            Some((g, m)) if *g == group => m.clone(),
            _ => {
                let m = Arc::new(MeasurementModel::sample(cfg, &mut substream(seed, Stream::Selection, group))?);
                model = Some((group, m.clone()));
                m
            }
        };
        let h = sample_channel(cfg, &mut substream(seed, Stream::Channel, k))?;
        let y = m.observe(h.stacked(), &mut substream(seed, Stream::Noise, k))?;
        out.push(MeasurementSample {
            model: m,
            y,
            truth: keep_truth.then(|| h.into_stacked()),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LblConfig {
    pub loss: LossKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: LrSchedule,
    pub arch: CnnArch,
    pub seed: u64,
    pub gec: GecConfig,
    pub verbose: bool,
}

impl Default for LblConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Sure,
            epochs: 4,
            batch_size: 16,
            lr: LrSchedule::default(),
            arch: CnnArch::default(),
            seed: 0,
            gec: GecConfig::default(),
            verbose: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LblResult {
    pub nets: Vec<SmallCnn>,
    pub log: Vec<TrainRecord>,
    /// Mean NMSE of each layer's `ĥ2` over the validation set (empty without truths).
    pub validation_nmse: Vec<f64>,
}

struct Track<'a> {
    sample: &'a MeasurementSample,
    state: GecState,
}

fn tracks<'a>(samples: &'a [MeasurementSample], gec: &GecConfig) -> Result<Vec<Track<'a>>> {
    samples
        .iter()
        .map(|s| {
            let state = Ldgec::new(&s.y, &s.model, gec)?.init_state();
            Ok(Track { sample: s, state })
        })
        .collect()
}

fn front(tracks: &mut [Track<'_>], gec: &GecConfig) -> Result<Vec<TrainingPair>> {
    tracks
        .iter_mut()
        .map(|tr| {
            let s = tr.sample;
            Ldgec::new(&s.y, &s.model, gec)?.front(&mut tr.state)?;
            let (n, m) = (s.model.antennas(), s.model.subcarriers);
            let v = tr.state.v1h.iter().sum::<f64>() / tr.state.v1h.len() as f64;
            Ok(TrainingPair {
                input: ChannelImage::from_stacked(n, m, &tr.state.r1h)?,
                noise_var: v,
                truth: s.truth.as_deref().map(|h| ChannelImage::from_stacked(n, m, h)).transpose()?,
            })
        })
        .collect()
}

/// Finishes the current layer with `net`; returns the mean NMSE of `ĥ2`
/// when every sample carries its truth.
fn back(tracks: &mut [Track<'_>], gec: &GecConfig, net: &SmallCnn, rng: &mut SimRng) -> Result<Option<f64>> {
    let mut total = 0.0;
    let mut have_truth = true;
    for tr in tracks.iter_mut() {
        let s = tr.sample;
        let runner = Ldgec::new(&s.y, &s.model, gec)?;
        let b = module_b_step(net, &tr.state.r1h, &tr.state.v1h, s.model.antennas(), rng, gec.divergence_norm)?;
        let h2 = runner.back(&mut tr.state, &b)?;
        match &s.truth {
            Some(h) => total += nmse(&h2, h)?,
            None => have_truth = false,
        }
    }
    Ok((have_truth && !tracks.is_empty()).then(|| total / tracks.len() as f64))
}

/// Trains one network per layer. Layer `t` starts from the weights of layer
/// `t − 1`; earlier layers stay frozen.
pub fn train_layer_by_layer(train: &[MeasurementSample], validation: &[MeasurementSample], cfg: &LblConfig) -> Result<LblResult> {
    if train.is_empty() {
        return Err(Error::input("empty training set"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::input("batch size must be positive"));
    }
    if cfg.loss == LossKind::Mse && train.iter().any(|s| s.truth.is_none()) {
        return Err(Error::input("MSE training needs ground-truth channels"));
    }
    cfg.gec.validate()?;
    let mut train_tracks = tracks(train, &cfg.gec)?;
    let mut val_tracks = tracks(validation, &cfg.gec)?;
    let mut net = SmallCnn::init(cfg.arch.clone(), &mut substream(cfg.seed, Stream::Init, 0))?;
    let mut result = LblResult {
        nets: Vec::with_capacity(cfg.gec.layers),
        log: Vec::new(),
        validation_nmse: Vec::new(),
    };
    let mut probe_rng = substream(cfg.seed, Stream::Probe, 0);
    let mut pass_rng = substream(cfg.seed, Stream::Probe, 1);

    for t in 0..cfg.gec.layers {
        let pairs = front(&mut train_tracks, &cfg.gec)?;
        let mut adam = Adam::new(net.parameter_count());
        for epoch in 0..cfg.epochs {
            let mut order: Vec<usize> = (0..pairs.len()).collect();
            let shuffle_seed = ((t as u64) << 32) | epoch as u64;
            order.shuffle(&mut substream(cfg.seed, Stream::Training, shuffle_seed));
            let lr = cfg.lr.at(epoch, cfg.epochs);
            for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
                let batch: Vec<TrainingPair> = chunk.iter().map(|&i| pairs[i].clone()).collect();
                let (loss, grad) = batch_loss_and_grad(&net, &batch, cfg.loss, &mut probe_rng)?;
                let diverged = Error::TrainingDiverged {
                    layer: t + 1,
                    epoch,
                    batch: b,
                    loss,
                };
                if !loss.is_finite() {
                    return Err(diverged);
                }
                result.log.push(TrainRecord {
                    kind: cfg.loss,
                    stage: t + 1,
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
        front(&mut val_tracks, &cfg.gec)?;
        back(&mut train_tracks, &cfg.gec, &net, &mut pass_rng)?;
        if let Some(v) = back(&mut val_tracks, &cfg.gec, &net, &mut pass_rng)? {
            result.validation_nmse.push(v);
        }
        if cfg.verbose {
            let v = result.validation_nmse.last().map(|v| format!("{:.2} dB", 10.0 * v.log10())).unwrap_or_default();
            eprintln!("layer {}: trained ({} pairs) {v}", t + 1, pairs.len());
        }
        result.nets.push(net.clone());
    }
    Ok(result)
}
