//! Monte-Carlo sweeps.
//!
//! Trial `t` draws its channel, selection network, noise and probes from
//! sub-streams keyed by `t` alone, so every sweep point and estimator sees
//! the same instances and the output does not depend on the thread count.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{DenoiserChoice, EstimatorKind, ExperimentConfig, SweepPoint};
use crate::baselines::{default_sparsity, ls_estimate, nmse, omp_estimate, to_db};
use crate::channel::sample_channel;
use crate::denoiser::weights::write_atomic;
use crate::denoiser::{IdentityDenoiser, MatchedGaussianDenoiser, SoftThresholdDenoiser, SureShrinkDenoiser};
use crate::error::{Error, Result};
use crate::gec::{run_ldgec, DenoiserBank, LayerDiagnostics, Uniform};
use crate::measurement::MeasurementModel;
use crate::rng::{substream, Stream};
use crate::training::manifest;

/// Version of the results CSV column set.
pub const CSV_SCHEMA_VERSION: u32 = 1;

pub const CSV_COLUMNS: [&str; 17] = [
    "antennas",
    "rf_chains",
    "pilot_instants",
    "subcarriers",
    "paths",
    "carrier_hz",
    "bandwidth_hz",
    "adc_bits",
    "snr_db",
    "measurement_ratio",
    "layers",
    "seed",
    "trial",
    "estimator",
    "layer",
    "nmse",
    "nmse_db",
];

pub const SNR_CONVENTION: &str = "SNR = 10·log10(P_h/σ_n²) with unit average channel power P_h = 1 per entry and σ_n² the complex per-measurement noise variance, so σ_n² = 10^(−SNR/10)";

/// One CSV row. `layer` is `None` for the final estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub point: usize,
    pub trial: usize,
    pub estimator: EstimatorKind,
    pub layer: Option<usize>,
    pub nmse: f64,
}

/// Wall time of one (point, trial, estimator) run; kept out of the results
/// CSV so that file stays byte-reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub point: usize,
    pub trial: usize,
    pub estimator: EstimatorKind,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

/// Everything a sweep produced, in deterministic order.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub config: ExperimentConfig,
    pub points: Vec<SweepPoint>,
    pub rows: Vec<ResultRow>,
    pub timing: Vec<TimingRow>,
}

/// Final row, optional per-layer rows and timing of one estimator run.
type TaskRows = (ResultRow, Option<Vec<ResultRow>>, TimingRow);

enum Prepared {
    Bank(Box<dyn DenoiserBank>),
    Ls,
    Omp(usize),
}

fn prepare(cfg: &ExperimentConfig, est: EstimatorKind) -> Result<Prepared> {
    let load = |path: &Option<PathBuf>| -> Result<Box<dyn DenoiserBank>> {
        let path = path.as_ref().ok_or_else(|| Error::input(format!("{} needs a weight manifest", est.name())))?;
        Ok(manifest::load(path)?.into_bank())
    };
    Ok(match est {
        EstimatorKind::Ls => Prepared::Ls,
        EstimatorKind::Omp => Prepared::Omp(
            cfg.omp_sparsity
                .unwrap_or_else(|| default_sparsity(cfg.system.paths, cfg.system.antennas)),
        ),
        EstimatorKind::MatchedGaussian => Prepared::Bank(Box::new(Uniform(MatchedGaussianDenoiser::default()))),
        EstimatorKind::LdgecMse => Prepared::Bank(load(&cfg.weights.mse)?),
        EstimatorKind::LdgecDbd => Prepared::Bank(load(&cfg.weights.dbd)?),
        EstimatorKind::LdgecSure if cfg.weights.sure.is_some() => Prepared::Bank(load(&cfg.weights.sure)?),
        EstimatorKind::LdgecSure => Prepared::Bank(match cfg.ldgec_denoiser {
            DenoiserChoice::SureShrink => Box::new(Uniform(SureShrinkDenoiser::default())),
            DenoiserChoice::SoftThreshold { lambda } => Box::new(Uniform(SoftThresholdDenoiser { lambda })),
            DenoiserChoice::Identity => Box::new(Uniform(IdentityDenoiser)),
        }),
    })
}

/// One simulated instance of a sweep point.
#[derive(Debug, Clone)]
pub struct Instance {
    pub model: MeasurementModel,
    pub truth: Vec<Complex64>,
    pub y: Vec<Complex64>,
}

/// Draws trial `trial` of `point` for master seed `seed`.
pub fn instance(point: &SweepPoint, seed: u64, trial: usize) -> Result<Instance> {
    let t = trial as u64;
    let h = sample_channel(&point.system, &mut substream(seed, Stream::Channel, t))?;
    let model = MeasurementModel::sample(&point.system, &mut substream(seed, Stream::Selection, t))?;
    let y = model.observe(h.stacked(), &mut substream(seed, Stream::Noise, t))?;
    Ok(Instance {
        model,
        truth: h.into_stacked(),
        y,
    })
}

/// Final NMSE plus per-layer diagnostics for layered estimators.
#[derive(Debug, Clone)]
pub struct EstimateOutcome {
    pub estimator: EstimatorKind,
    pub h_hat: Vec<Complex64>,
    pub nmse: f64,
    pub layers: Option<Vec<LayerDiagnostics>>,
    pub seconds: f64,
}

fn estimate(prepared: &Prepared, est: EstimatorKind, point: &SweepPoint, inst: &Instance, seed: u64, trial: usize) -> Result<EstimateOutcome> {
    let start = Instant::now();
    let (h_hat, layers) = match prepared {
        Prepared::Ls => (ls_estimate(&inst.y, &inst.model)?, None),
        Prepared::Omp(k) => (omp_estimate(&inst.y, &inst.model, *k)?, None),
        Prepared::Bank(bank) => {
            let mut probe = substream(seed, Stream::Probe, trial as u64);
            let out = run_ldgec(&inst.y, &inst.model, &point.gec, bank.as_ref(), &mut probe, Some(&inst.truth))?;
            (out.h_hat, Some(out.diagnostics))
        }
    };
    let nmse = nmse(&h_hat, &inst.truth)?;
    Ok(EstimateOutcome {
        estimator: est,
        h_hat,
        nmse,
        layers,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs every estimator on one instance (the `estimate` subcommand).
pub fn estimate_instance(cfg: &ExperimentConfig, point: usize, trial: usize) -> Result<(SweepPoint, Vec<EstimateOutcome>)> {
    let cfg = cfg.clone().resolve()?;
    let points = cfg.points()?;
    let p = points
        .get(point)
        .cloned()
        .ok_or_else(|| Error::input(format!("sweep point {point} does not exist ({} points)", points.len())))?;
    let inst = instance(&p, cfg.seed, trial)?;
    let outcomes = cfg
        .estimators
        .iter()
        .map(|&e| estimate(&prepare(&cfg, e)?, e, &p, &inst, cfg.seed, trial))
        .collect::<Result<Vec<_>>>()?;
    Ok((p, outcomes))
}

/// Runs the full sweep.
pub fn run_sweep(cfg: &ExperimentConfig, opts: RunOptions) -> Result<SweepResult> {
    let cfg = cfg.clone().resolve()?;
    let points = cfg.points()?;
    let prepared = cfg
        .estimators
        .iter()
        .map(|&e| Ok((e, prepare(&cfg, e)?)))
        .collect::<Result<Vec<_>>>()?;
    let tasks: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..cfg.trials).map(move |t| (p, t)))
        .collect();
    let work = || -> Result<Vec<Vec<TaskRows>>> {
        tasks
            .par_iter()
            .map(|&(p, t)| {
                let inst = instance(&points[p], cfg.seed, t)?;
                prepared
                    .iter()
                    .map(|(e, prep)| {
                        let out = estimate(prep, *e, &points[p], &inst, cfg.seed, t)?;
                        let row = |layer, nmse| ResultRow {
                            point: p,
                            trial: t,
                            estimator: *e,
                            layer,
                            nmse,
                        };
                        let per_layer = (cfg.per_layer)
                            .then(|| {
                                out.layers.as_ref().map(|ls| {
                                    ls.iter()
                                        .map(|d| row(Some(d.layer), d.nmse.expect("truth supplied")))
                                        .collect()
                                })
                            })
                            .flatten();
                        Ok((
                            row(None, out.nmse),
                            per_layer,
                            TimingRow {
                                point: p,
                                trial: t,
                                estimator: *e,
                                seconds: out.seconds,
                            },
                        ))
                    })
                    .collect()
            })
            .collect()
    };
    let per_task = match opts.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::input(format!("cannot start {n} worker threads: {e}")))?
            .install(work)?,
        None => work()?,
    };
    let mut rows = Vec::new();
    let mut timing = Vec::new();
    for task in per_task {
        for (final_row, layers, time) in task {
            rows.extend(layers.into_iter().flatten());
            rows.push(final_row);
            timing.push(time);
        }
    }
    Ok(SweepResult {
        config: cfg,
        points,
        rows,
        timing,
    })
}

fn layer_label(layer: Option<usize>) -> String {
    layer.map_or_else(|| "final".to_owned(), |l| l.to_string())
}

impl SweepResult {
    pub fn final_rows(&self) -> impl Iterator<Item = &ResultRow> {
        self.rows.iter().filter(|r| r.layer.is_none())
    }

    /// Mean final NMSE (linear) of one estimator at one point.
    pub fn mean_nmse(&self, point: usize, est: EstimatorKind) -> Option<f64> {
        let v: Vec<f64> = self
            .final_rows()
            .filter(|r| r.point == point && r.estimator == est)
            .map(|r| r.nmse)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn csv(&self) -> String {
        let mut s = CSV_COLUMNS.join(",");
        s.push('\n');
        for r in &self.rows {
            let sys = &self.points[r.point].system;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                sys.antennas,
                sys.rf_chains,
                sys.pilot_instants,
                sys.subcarriers,
                sys.paths,
                sys.carrier_hz,
                sys.bandwidth_hz,
                sys.adc_bits,
                sys.snr_db,
                sys.measurement_ratio(),
                self.points[r.point].gec.layers,
                self.config.seed,
                r.trial,
                r.estimator.name(),
                layer_label(r.layer),
                r.nmse,
                to_db(r.nmse),
            );
        }
        s
    }

    pub fn timing_csv(&self) -> String {
        let mut s = String::from("snr_db,measurement_ratio,adc_bits,trial,estimator,seconds\n");
        for t in &self.timing {
            let sys = &self.points[t.point].system;
            let _ = writeln!(s, "{},{},{},{},{},{:.6}", sys.snr_db, sys.measurement_ratio(), sys.adc_bits, t.trial, t.estimator.name(), t.seconds);
        }
        s
    }

    /// Tidy per-(point, estimator, layer) means, for plotting.
    pub fn plot_csv(&self) -> String {
        let mut s = String::from("snr_db,measurement_ratio,adc_bits,estimator,layer,trials,mean_nmse,mean_nmse_db\n");
        let mut keys: Vec<(usize, EstimatorKind, Option<usize>)> = Vec::new();
        for r in &self.rows {
            let k = (r.point, r.estimator, r.layer);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        for (p, e, layer) in keys {
            let v: Vec<f64> = self
                .rows
                .iter()
                .filter(|r| r.point == p && r.estimator == e && r.layer == layer)
                .map(|r| r.nmse)
                .collect();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let sys = &self.points[p].system;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                sys.snr_db,
                sys.measurement_ratio(),
                sys.adc_bits,
                e.name(),
                layer_label(layer),
                v.len(),
                mean,
                to_db(mean)
            );
        }
        s
    }

    pub fn metadata(&self) -> Metadata<'_> {
        let quantized = self.points.iter().any(|p| !p.system.adc_bits.is_infinite());
        let baselines = self.config.estimators.iter().any(|e| !e.is_layered());
        Metadata {
            format: "ldgec-results",
            csv_schema_version: CSV_SCHEMA_VERSION,
            csv_columns: CSV_COLUMNS.to_vec(),
            version: env!("CARGO_PKG_VERSION"),
            snr_convention: SNR_CONVENTION,
            seeds: Seeds {
                master: self.config.seed,
                streams: "trial t uses substream(master, channel|selection|noise|probe, t)",
            },
            baselines_ignore_quantization: quantized && baselines,
            rows: self.rows.len(),
            config: &self.config,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Seeds {
    pub master: u64,
    pub streams: &'static str,
}

/// Metadata written next to the results; contains no timestamps so it is
/// reproducible too.
#[derive(Debug, Serialize)]
pub struct Metadata<'a> {
    pub format: &'static str,
    pub csv_schema_version: u32,
    pub csv_columns: Vec<&'static str>,
    pub version: &'static str,
    pub snr_convention: &'static str,
    pub seeds: Seeds,
    /// LS and OMP consume quantized measurements as if unquantized.
    pub baselines_ignore_quantization: bool,
    pub rows: usize,
    pub config: &'a ExperimentConfig,
}

/// `results.csv` → `results.<suffix>`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "results".into());
    path.with_file_name(format!("{stem}.{suffix}"))
}

/// Files written by [`write_outputs`].
#[derive(Debug, Clone, PartialEq)]
pub struct OutputPaths {
    pub results: PathBuf,
    pub metadata: PathBuf,
    pub timing: PathBuf,
    pub plot: Option<PathBuf>,
}

/// Writes the CSV, metadata, timing and (optionally) plot files, each via a
/// temporary file and rename.
pub fn write_outputs(result: &SweepResult, results: &Path, emit_plot_data: bool) -> Result<OutputPaths> {
    if let Some(dir) = results.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let paths = OutputPaths {
        results: results.to_path_buf(),
        metadata: sibling(results, "meta.json"),
        timing: sibling(results, "timing.csv"),
        plot: emit_plot_data.then(|| sibling(results, "plot.csv")),
    };
    write_atomic(&paths.results, result.csv().as_bytes())?;
    let mut meta = serde_json::to_string_pretty(&result.metadata()).map_err(|e| Error::Format(e.to_string()))?;
    meta.push('\n');
    write_atomic(&paths.metadata, meta.as_bytes())?;
    write_atomic(&paths.timing, result.timing_csv().as_bytes())?;
    if let Some(p) = &paths.plot {
        write_atomic(p, result.plot_csv().as_bytes())?;
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::config::SnrPoint;
    use crate::SystemConfig;

    fn tiny(estimators: Vec<EstimatorKind>, trials: usize) -> ExperimentConfig {
        ExperimentConfig {
            system: SystemConfig {
                antennas: 8,
                rf_chains: 2,
                pilot_instants: 4,
                subcarriers: 4,
                paths: 2,
                ..SystemConfig::default()
            },
            estimators,
            ldgec_denoiser: DenoiserChoice::SureShrink,
            weights: Default::default(),
            damping: None,
            layers: Some(4),
            divergence_norm: Default::default(),
            trials,
            snr_db: vec![SnrPoint(0.0), SnrPoint(10.0)],
            measurement_ratios: vec![],
            adc_bits: vec![],
            omp_sparsity: None,
            per_layer: false,
            output: "r.csv".into(),
            seed: 5,
        }
    }

    #[test]
    fn row_counts() {
        let r = run_sweep(&tiny(vec![EstimatorKind::Ls, EstimatorKind::LdgecSure], 5), RunOptions::default()).unwrap();
        assert_eq!(r.rows.len(), 20);
        let mut c = tiny(vec![EstimatorKind::Ls, EstimatorKind::LdgecSure], 5);
        c.per_layer = true;
        let r = run_sweep(&c, RunOptions::default()).unwrap();
        // LDGEC adds 4 layer rows per trial and point
        assert_eq!(r.rows.len(), 20 + 2 * 5 * 4);
        assert_eq!(r.csv().lines().count(), 1 + r.rows.len());
        assert!(r.csv().lines().nth(1).unwrap().contains(",ls,final,"));
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let c = tiny(vec![EstimatorKind::Omp, EstimatorKind::LdgecSure], 3);
        let a = run_sweep(&c, RunOptions { threads: Some(1) }).unwrap();
        let b = run_sweep(&c, RunOptions { threads: Some(3) }).unwrap();
        assert_eq!(a.csv(), b.csv());
        assert_eq!(a.plot_csv(), b.plot_csv());
    }

    #[test]
    fn metadata_names_schema_and_seed() {
        let r = run_sweep(&tiny(vec![EstimatorKind::Ls], 1), RunOptions::default()).unwrap();
        let json = serde_json::to_value(r.metadata()).unwrap();
        assert_eq!(json["csv_schema_version"], 1);
        assert_eq!(json["seeds"]["master"], 5);
        assert_eq!(json["csv_columns"].as_array().unwrap().len(), CSV_COLUMNS.len());
        assert_eq!(json["baselines_ignore_quantization"], false);
    }

    #[test]
    fn sibling_names() {
        assert_eq!(sibling(Path::new("out/res.csv"), "meta.json"), PathBuf::from("out/res.meta.json"));
    }
}
