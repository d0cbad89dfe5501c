//! Training entry points behind `train-lbl` and `train-dbd`.

use std::fmt::Write as _;
use std::path::PathBuf;

use super::config::{TrainDbdFile, TrainLblFile};
use super::dataset::read_dataset;
use crate::channel::sample_channel;
use crate::denoiser::weights::write_atomic;
use crate::error::{Error, Result};
use crate::rng::{substream, Stream};
use crate::training::manifest::{self, TrainedWeights};
use crate::training::{generate_samples, train_denoiser_by_denoiser, train_layer_by_layer, TrainRecord};

/// Where a training run left its files.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub manifest: PathBuf,
    pub log: PathBuf,
    pub validation_nmse: Vec<f64>,
}

pub const LOG_HEADER: &str = "kind,stage,epoch,batch,loss,seed";

pub fn log_csv(log: &[TrainRecord]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for r in log {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.kind, r.stage, r.epoch, r.batch, r.loss, r.seed);
    }
    s
}

/// Trains per-layer networks. The file's `seed` drives both the samples
/// and the training streams; validation samples start at the next
/// selection-network group after the training ones.
pub fn run_train_lbl(file: &TrainLblFile) -> Result<TrainOutcome> {
    file.system.validate()?;
    let keep_truth = file.training.loss == crate::training::LossKind::Mse || file.validation_samples > 0;
    let train = generate_samples(&file.system, file.seed, 0, file.train_samples, keep_truth)?;
    let first_val = file.train_samples.div_ceil(16) as u64 * 16;
    let val = generate_samples(&file.system, file.seed, first_val, file.validation_samples, true)?;
    let mut cfg = file.training.clone();
    cfg.seed = file.seed;
    let result = train_layer_by_layer(&train, &val, &cfg)?;
    let weights = TrainedWeights::PerLayer {
        loss: cfg.loss,
        nets: result.nets,
    };
    let manifest = manifest::save(&file.output, &weights)?;
    let log = file.output.join("training-log.csv");
    write_atomic(&log, log_csv(&result.log).as_bytes())?;
    Ok(TrainOutcome {
        manifest,
        log,
        validation_nmse: result.validation_nmse,
    })
}

/// Trains one network per noise bin on stored or freshly drawn channels.
pub fn run_train_dbd(file: &TrainDbdFile) -> Result<TrainOutcome> {
    let channels = match &file.dataset {
        Some(path) => {
            let ds = read_dataset(path)?;
            let (n, m) = (ds.system.antennas, ds.system.subcarriers);
            ds.records.into_iter().map(|r| (n, m, r.channel)).collect::<Vec<_>>()
        }
        None => {
            file.system.validate()?;
            let (n, m) = (file.system.antennas, file.system.subcarriers);
            (0..file.train_samples as u64)
                .map(|k| Ok((n, m, sample_channel(&file.system, &mut substream(file.seed, Stream::Channel, k))?.into_stacked())))
                .collect::<Result<Vec<_>>>()?
        }
    };
    if channels.is_empty() {
        return Err(Error::input("no training channels"));
    }
    let mut cfg = file.training.clone();
    cfg.seed = file.seed;
    let (bank, log) = train_denoiser_by_denoiser(&channels, &cfg)?;
    let manifest = manifest::save(&file.output, &TrainedWeights::Binned(bank))?;
    let log_path = file.output.join("training-log.csv");
    write_atomic(&log_path, log_csv(&log).as_bytes())?;
    Ok(TrainOutcome {
        manifest,
        log: log_path,
        validation_nmse: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::CnnArch;
    use crate::gec::GecConfig;
    use crate::training::{DbdConfig, LblConfig, NoiseBinTable};
    use crate::SystemConfig;

    fn tiny() -> SystemConfig {
        SystemConfig {
            antennas: 8,
            rf_chains: 2,
            pilot_instants: 4,
            subcarriers: 4,
            paths: 2,
            ..SystemConfig::default()
        }
    }

    #[test]
    fn lbl_writes_manifest_and_log() {
        let dir = tempfile::tempdir().unwrap();
        let file = TrainLblFile {
            system: tiny(),
            train_samples: 8,
            validation_samples: 4,
            training: LblConfig {
                epochs: 1,
                batch_size: 4,
                arch: CnnArch::with_hidden(2, 3),
                gec: GecConfig {
                    layers: 2,
                    ..GecConfig::default()
                },
                ..LblConfig::default()
            },
            output: dir.path().join("w"),
            seed: 3,
        };
        let out = run_train_lbl(&file).unwrap();
        assert_eq!(out.validation_nmse.len(), 2);
        let TrainedWeights::PerLayer { nets, .. } = manifest::load(&out.manifest).unwrap() else {
            panic!("wrong kind")
        };
        assert_eq!(nets.len(), 2);
        let log = std::fs::read_to_string(&out.log).unwrap();
        assert!(log.starts_with(LOG_HEADER));
        // 2 layers × 1 epoch × 2 batches
        assert_eq!(log.lines().count(), 1 + 4);
    }

    #[test]
    fn dbd_reads_a_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let ds = crate::experiment::generate_dataset(&tiny(), 5, 6, false).unwrap();
        let ds_path = dir.path().join("c.ldgds");
        crate::experiment::write_dataset(&ds_path, &ds).unwrap();
        let file = TrainDbdFile {
            system: SystemConfig::default(),
            dataset: Some(ds_path),
            train_samples: 0,
            training: DbdConfig {
                epochs: 1,
                batch_size: 3,
                arch: CnnArch::with_hidden(2, 3),
                bins: NoiseBinTable::new(vec![0.0, 1.0, 10.0]).unwrap(),
                ..DbdConfig::default()
            },
            output: dir.path().join("d"),
            seed: 1,
        };
        let out = run_train_dbd(&file).unwrap();
        assert!(matches!(manifest::load(&out.manifest).unwrap(), TrainedWeights::Binned(b) if b.nets.len() == 2));
    }
}
