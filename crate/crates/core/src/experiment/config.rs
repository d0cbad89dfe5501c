//! Experiment files: JSON, or an INI-like `key = value` text with optional
//! `[section]` headers. Both are turned into one JSON value and deserialized
//! with unknown keys rejected by path.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::config::{Resolution, SystemConfig};
use crate::denoiser::DivergenceNorm;
use crate::error::{Error, Result};
use crate::gec::{DampingSchedule, GecConfig};
use crate::training::{DbdConfig, LblConfig};

/// Estimators a sweep can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    /// LDGEC with the SURE-side denoiser: SURE-trained per-layer weights
    /// when `weights.sure` is given, otherwise `ldgec_denoiser`.
    LdgecSure,
    /// LDGEC with MSE-trained per-layer weights.
    LdgecMse,
    /// LDGEC with noise-binned weights from denoiser-by-denoiser training.
    LdgecDbd,
    Ls,
    Omp,
    /// LDGEC with the matched-Gaussian shrinkage denoiser.
    MatchedGaussian,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::LdgecSure => "ldgec-sure",
            Self::LdgecMse => "ldgec-mse",
            Self::LdgecDbd => "ldgec-dbd",
            Self::Ls => "ls",
            Self::Omp => "omp",
            Self::MatchedGaussian => "matched-gaussian",
        }
    }

    pub fn is_layered(self) -> bool {
        !matches!(self, Self::Ls | Self::Omp)
    }
}

/// Untrained denoiser used by `ldgec-sure` when no weights are given.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum DenoiserChoice {
    /// Soft threshold with λ picked by SURE at every layer.
    #[default]
    SureShrink,
    /// Soft threshold at `λ·√(v/2)`.
    SoftThreshold { lambda: f64 },
    Identity,
}

/// Manifest paths of trained weight sets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightPaths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sure: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mse: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dbd: Option<PathBuf>,
}

/// A sweep over SNR, measurement ratio and ADC resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Base system; swept fields are overridden per point.
    #[serde(default)]
    pub system: SystemConfig,
    #[serde(deserialize_with = "sweep_list")]
    pub estimators: Vec<EstimatorKind>,
    #[serde(default)]
    pub ldgec_denoiser: DenoiserChoice,
    #[serde(default)]
    pub weights: WeightPaths,
    /// Defaults to the system-dependent schedule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damping: Option<DampingSchedule>,
    /// Defaults to 20, or 40 above 10 dB.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<usize>,
    #[serde(default)]
    pub divergence_norm: DivergenceNorm,
    pub trials: usize,
    /// Defaults to `[system.snr_db]`.
    #[serde(default, deserialize_with = "sweep_list", skip_serializing_if = "Vec::is_empty")]
    pub snr_db: Vec<SnrPoint>,
    /// δ = Q·N_RF/N; defaults to the system's own ratio.
    #[serde(default, deserialize_with = "sweep_list", skip_serializing_if = "Vec::is_empty")]
    pub measurement_ratios: Vec<f64>,
    /// Defaults to `[system.adc_bits]`.
    #[serde(default, deserialize_with = "sweep_list", skip_serializing_if = "Vec::is_empty")]
    pub adc_bits: Vec<Resolution>,
    /// OMP sparsity; defaults to `4·L` capped at N.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omp_sparsity: Option<usize>,
    #[serde(default)]
    pub per_layer: bool,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

/// One value or a non-empty list. A missing key falls back
/// to the system's value in [`ExperimentConfig::resolve`].
fn sweep_list<'de, D, T>(de: D) -> std::result::Result<Vec<T>, D::Error>
where
    D: serde::Deserializer<'de>,
    T: Deserialize<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany<T> {
        One(T),
        Many(Vec<T>),
    }
    match OneOrMany::deserialize(de)? {
        OneOrMany::One(v) => Ok(vec![v]),
        OneOrMany::Many(v) if v.is_empty() => Err(serde::de::Error::custom("sweep list must not be empty")),
        OneOrMany::Many(v) => Ok(v),
    }
}

fn default_output() -> PathBuf {
    PathBuf::from("results.csv")
}

/// An SNR value that may be written as `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SnrPoint(#[serde(with = "crate::config::extended_f64")] pub f64);

/// One resolved sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub system: SystemConfig,
    pub gec: GecConfig,
}

impl ExperimentConfig {
    /// Fills sweep defaults from `system` and checks every field.
    pub fn resolve(mut self) -> Result<Self> {
        let bad = |path: &str, msg: String| Error::Config {
            path: path.to_owned(),
            msg,
        };
        self.system.validate()?;
        if self.estimators.is_empty() {
            return Err(bad("estimators", "must list at least one estimator".into()));
        }
        if self.trials == 0 {
            return Err(bad("trials", "must be at least 1".into()));
        }
        if self.snr_db.is_empty() {
            self.snr_db = vec![SnrPoint(self.system.snr_db)];
        }
        if self.measurement_ratios.is_empty() {
            self.measurement_ratios = vec![self.system.measurement_ratio()];
        }
        if self.adc_bits.is_empty() {
            self.adc_bits = vec![self.system.adc_bits];
        }
        for (k, s) in self.snr_db.iter().enumerate() {
            if s.0.is_nan() || s.0 == f64::NEG_INFINITY {
                return Err(bad(&format!("snr_db[{k}]"), format!("{} is not a usable SNR", s.0)));
            }
        }
        for (k, &d) in self.measurement_ratios.iter().enumerate() {
            self.pilot_instants(d).map_err(|msg| bad(&format!("measurement_ratios[{k}]"), msg))?;
        }
        if let Some(t) = self.layers {
            if t == 0 {
                return Err(bad("layers", "must be at least 1".into()));
            }
        }
        if let Some(d) = &self.damping {
            d.validate().map_err(|e| bad("damping", e.to_string()))?;
        }
        if let Some(k) = self.omp_sparsity {
            if k == 0 || k > self.system.antennas {
                return Err(bad("omp_sparsity", format!("must lie in 1..={}", self.system.antennas)));
            }
        }
        if let DenoiserChoice::SoftThreshold { lambda } = self.ldgec_denoiser {
            if !(lambda >= 0.0 && lambda.is_finite()) {
                return Err(bad("ldgec_denoiser.lambda", "must be nonnegative and finite".into()));
            }
        }
        for (est, path, name) in [
            (EstimatorKind::LdgecMse, &self.weights.mse, "weights.mse"),
            (EstimatorKind::LdgecDbd, &self.weights.dbd, "weights.dbd"),
        ] {
            if self.estimators.contains(&est) && path.is_none() {
                return Err(bad(name, format!("required by estimator {}", est.name())));
            }
        }
        Ok(self)
    }

    /// `Q` for a measurement ratio, which must make `δ·N/N_RF` a positive integer.
    fn pilot_instants(&self, ratio: f64) -> std::result::Result<usize, String> {
        let q = ratio * self.system.antennas as f64 / self.system.rf_chains as f64;
        let rounded = q.round();
        if !(rounded >= 1.0) || (q - rounded).abs() > 1e-9 {
            return Err(format!(
                "δ = {ratio} gives Q = {q}, which is not a positive integer for N = {}, N_RF = {}",
                self.system.antennas, self.system.rf_chains
            ));
        }
        Ok(rounded as usize)
    }

    /// Sweep points in file order: SNR outermost, then δ, then resolution.
    pub fn points(&self) -> Result<Vec<SweepPoint>> {
        let mut out = Vec::new();
        for snr in &self.snr_db {
            for &ratio in &self.measurement_ratios {
                for &bits in &self.adc_bits {
                    let system = SystemConfig {
                        snr_db: snr.0,
                        pilot_instants: self.pilot_instants(ratio).map_err(Error::input)?,
                        adc_bits: bits,
                        ..self.system.clone()
                    };
                    let mut gec = GecConfig::for_system(&system);
                    if let Some(t) = self.layers {
                        gec.layers = t;
                    }
                    if let Some(d) = &self.damping {
                        gec.damping = *d;
                    }
                    gec.divergence_norm = self.divergence_norm;
                    out.push(SweepPoint { system, gec });
                }
            }
        }
        Ok(out)
    }
}

/// Dataset generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default)]
    pub system: SystemConfig,
    pub count: usize,
    /// Also store the selection network and quantized measurements.
    #[serde(default)]
    pub measurements: bool,
    #[serde(default = "default_dataset_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_dataset_output() -> PathBuf {
    PathBuf::from("channels.ldgds")
}

/// Layer-by-layer training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainLblFile {
    #[serde(default)]
    pub system: SystemConfig,
    #[serde(default = "default_train_samples")]
    pub train_samples: usize,
    #[serde(default = "default_validation_samples")]
    pub validation_samples: usize,
    #[serde(default)]
    pub training: LblConfig,
    #[serde(default = "default_weights_dir")]
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

/// Denoiser-by-denoiser training settings. Channels come from a dataset
/// file when `dataset` is set and are generated otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainDbdFile {
    #[serde(default)]
    pub system: SystemConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default = "default_train_samples")]
    pub train_samples: usize,
    #[serde(default)]
    pub training: DbdConfig,
    #[serde(default = "default_weights_dir")]
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_train_samples() -> usize {
    1024
}

fn default_validation_samples() -> usize {
    256
}

fn default_weights_dir() -> PathBuf {
    PathBuf::from("weights")
}

/// Reads a JSON file (by extension or a leading `{`) or an INI-like file.
pub fn load_file<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    let is_json = path.extension().is_some_and(|e| e == "json") || text.trim_start().starts_with('{');
    if is_json {
        from_json_str(&text)
    } else {
        from_value(parse_ini(&text)?)
    }
}

/// Deserializes JSON text; errors name the offending key path.
pub fn from_json_str<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(path_error)
}

/// Deserializes an already-parsed value; errors name the offending key path.
pub fn from_value<T: DeserializeOwned>(value: Value) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(path_error)
}

fn path_error<E: std::fmt::Display>(e: serde_path_to_error::Error<E>) -> Error {
    let path = e.path().to_string();
    Error::Config {
        path: if path == "." { "(root)".into() } else { path },
        msg: e.into_inner().to_string(),
    }
}

/// `key = value` lines, `#`/`;` comments, `[a.b]` section headers and dotted
/// keys. A value is read as JSON when it parses as JSON; a bare
/// comma-separated value becomes a list; anything else is a string.
pub fn parse_ini(text: &str) -> Result<Value> {
    let mut root = Map::new();
    let mut section: Vec<String> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        let fail = |msg: &str| Error::Config {
            path: format!("line {}", lineno + 1),
            msg: msg.to_owned(),
        };
        if let Some(inner) = line.strip_prefix('[') {
            let name = inner.strip_suffix(']').ok_or_else(|| fail("unterminated section header"))?;
            section = split_key(name).ok_or_else(|| fail("empty section name"))?;
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| fail("expected `key = value`"))?;
        let mut path = section.clone();
        path.extend(split_key(key).ok_or_else(|| fail("empty key"))?);
        insert(&mut root, &path, scalar(value.trim())).map_err(|m| fail(&m))?;
    }
    Ok(Value::Object(root))
}

fn split_key(key: &str) -> Option<Vec<String>> {
    let parts: Vec<String> = key.trim().split('.').map(|p| p.trim().to_owned()).collect();
    (!parts.iter().any(String::is_empty)).then_some(parts)
}

fn scalar(text: &str) -> Value {
    if let Ok(v) = serde_json::from_str::<Value>(text) {
        return v;
    }
    if text.contains(',') {
        return Value::Array(text.split(',').map(|p| scalar(p.trim())).collect());
    }
    Value::String(text.to_owned())
}

fn insert(map: &mut Map<String, Value>, path: &[String], value: Value) -> std::result::Result<(), String> {
    let (head, rest) = path.split_first().expect("non-empty key path");
    if rest.is_empty() {
        if map.insert(head.clone(), value).is_some() {
            return Err(format!("duplicate key `{}`", path.join(".")));
        }
        return Ok(());
    }
    match map.entry(head.clone()).or_insert_with(|| Value::Object(Map::new())) {
        Value::Object(inner) => insert(inner, rest, value),
        _ => Err(format!("`{head}` is both a value and a section")),
    }
}
