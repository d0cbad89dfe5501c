//! Manifest naming the weight files of a trained estimator.
//!
//! ```json
//! {"format": "ldgec-weights", "version": 1, "kind": "layer-by-layer",
//!  "loss": "sure", "entries": [{"role": "layer-1", "file": "layer-01.bin"}]}
//! ```
//!
//! File names are relative to the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BinnedDenoisers, LossKind, NoiseBinTable};
use crate::denoiser::{weights, Denoiser, SmallCnn};
use crate::error::{Error, Result};
use crate::gec::{DenoiserBank, PerLayer};

pub const MANIFEST_FORMAT: &str = "ldgec-weights";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ManifestKind {
    LayerByLayer,
    DenoiserByDenoiser,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub role: String,
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub kind: ManifestKind,
    pub loss: LossKind,
    pub entries: Vec<ManifestEntry>,
}

/// Loaded weights, ready to plug into the estimator.
#[derive(Debug, Clone)]
pub enum TrainedWeights {
    PerLayer { loss: LossKind, nets: Vec<SmallCnn> },
    Binned(BinnedDenoisers),
}

impl TrainedWeights {
    pub fn into_bank(self) -> Box<dyn DenoiserBank> {
        match self {
            TrainedWeights::PerLayer { nets, .. } => Box::new(PerLayer(nets.into_iter().map(|n| Box::new(n) as Box<dyn Denoiser>).collect())),
            TrainedWeights::Binned(b) => Box::new(b),
        }
    }

    pub fn kind(&self) -> ManifestKind {
        match self {
            TrainedWeights::PerLayer { .. } => ManifestKind::LayerByLayer,
            TrainedWeights::Binned(_) => ManifestKind::DenoiserByDenoiser,
        }
    }

    pub fn loss(&self) -> LossKind {
        match self {
            TrainedWeights::PerLayer { loss, .. } => *loss,
            TrainedWeights::Binned(_) => LossKind::Mse,
        }
    }
}

/// Writes every network plus `manifest.json` into `dir`; returns the manifest path.
pub fn save(dir: &Path, weights: &TrainedWeights) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    match weights {
        TrainedWeights::PerLayer { nets, .. } => {
            for (t, net) in nets.iter().enumerate() {
                let file = format!("layer-{:02}.bin", t + 1);
                weights::save(net, &dir.join(&file))?;
                entries.push(ManifestEntry {
                    role: format!("layer-{}", t + 1),
                    file,
                    interval: None,
                });
            }
        }
        TrainedWeights::Binned(b) => {
            for (k, net) in b.nets.iter().enumerate() {
                let file = format!("bin-{k:02}.bin");
                weights::save(net, &dir.join(&file))?;
                entries.push(ManifestEntry {
                    role: format!("bin-{k}"),
                    file,
                    interval: Some(b.table.interval(k)),
                });
            }
        }
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        kind: weights.kind(),
        loss: weights.loss(),
        entries,
    };
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    weights::write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

pub fn load(manifest_path: &Path) -> Result<TrainedWeights> {
    let text = fs::read_to_string(manifest_path)?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let manifest: Manifest = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
        path: e.path().to_string(),
        msg: e.inner().to_string(),
    })?;
    if manifest.format != MANIFEST_FORMAT || manifest.version != MANIFEST_VERSION {
        return Err(Error::Format(format!("unsupported manifest {} v{}", manifest.format, manifest.version)));
    }
    if manifest.entries.is_empty() {
        return Err(Error::Format("manifest lists no weight files".into()));
    }
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let nets = manifest
        .entries
        .iter()
        .map(|e| weights::load(&dir.join(&e.file)))
        .collect::<Result<Vec<_>>>()?;
    match manifest.kind {
        ManifestKind::LayerByLayer => Ok(TrainedWeights::PerLayer { loss: manifest.loss, nets }),
        ManifestKind::DenoiserByDenoiser => {
            let mut edges = Vec::with_capacity(nets.len() + 1);
            for (k, e) in manifest.entries.iter().enumerate() {
                let (lo, hi) = e
                    .interval
                    .ok_or_else(|| Error::Format(format!("entry {} has no noise interval", e.role)))?;
                if k == 0 {
                    edges.push(lo);
                } else if edges[k] != lo {
                    return Err(Error::Format("noise intervals are not contiguous".into()));
                }
                edges.push(hi);
            }
            let table = NoiseBinTable::new(edges).map_err(|e| Error::Format(e.to_string()))?;
            Ok(TrainedWeights::Binned(BinnedDenoisers::new(table, nets)?))
        }
    }
}
