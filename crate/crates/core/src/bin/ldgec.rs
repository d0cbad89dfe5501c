use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use ldgec::experiment::{
    estimate_instance, generate_dataset, load_file, run_oracles, run_sweep, run_train_dbd, run_train_lbl, write_dataset, write_outputs,
    DatasetConfig, ExperimentConfig, OracleOptions, RunOptions, TrainDbdFile, TrainLblFile,
};
use ldgec::denoiser::weights::write_atomic;
use ldgec::gec::diagnostics_csv;

#[derive(Parser)]
#[command(name = "ldgec", version, about = "Wideband beamspace channel estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file, JSON or INI-style key = value.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Runs every (SNR, ratio, bits, estimator, trial) and writes the results CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Also write per-point mean NMSE as tidy CSV.
        #[arg(long)]
        emit_plot_data: bool,
    },
    /// Writes a binary channel dataset.
    GenDataset {
        #[command(flatten)]
        common: Common,
    },
    /// Layer-by-layer training (SURE or MSE loss).
    TrainLbl {
        #[command(flatten)]
        common: Common,
    },
    /// Denoiser-by-denoiser training over noise bins.
    TrainDbd {
        #[command(flatten)]
        common: Common,
    },
    /// Runs the reference checks; exits nonzero if any fails.
    OracleCheck {
        /// Comma-separated subset of: posterior, unquantized, dense, divergence, sure, gradcheck.
        #[arg(long, value_delimiter = ',')]
        only: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Corrupts the quantized-posterior sign convention (mutation check).
        #[arg(long)]
        mutate_eta_sign: bool,
    },
    /// Runs each configured estimator on one instance and prints its NMSE
    /// and per-layer trace.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Index into the sweep grid (SNR, then ratio, then bits).
        #[arg(long, default_value_t = 0)]
        point: usize,
        #[arg(long, default_value_t = 0)]
        trial: usize,
    },
}

fn load<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    load_file(path).with_context(|| format!("reading {}", path.display()))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Sweep {
            common,
            threads,
            emit_plot_data,
        } => {
            let mut cfg: ExperimentConfig = load(&common.config)?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            if let Some(o) = common.out {
                cfg.output = o;
            }
            let result = run_sweep(&cfg, RunOptions { threads })?;
            let paths = write_outputs(&result, &result.config.output, emit_plot_data)?;
            eprintln!("{} rows -> {}", result.rows.len(), paths.results.display());
            eprintln!("metadata -> {}", paths.metadata.display());
            if let Some(p) = paths.plot {
                eprintln!("plot data -> {}", p.display());
            }
        }
        Command::GenDataset { common } => {
            let mut cfg: DatasetConfig = load(&common.config)?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            if let Some(o) = common.out {
                cfg.output = o;
            }
            let ds = generate_dataset(&cfg.system, cfg.seed, cfg.count, cfg.measurements)?;
            write_dataset(&cfg.output, &ds).with_context(|| format!("writing {}", cfg.output.display()))?;
            eprintln!("{} records -> {}", ds.records.len(), cfg.output.display());
        }
        Command::TrainLbl { common } => {
            let mut cfg: TrainLblFile = load(&common.config)?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            if let Some(o) = common.out {
                cfg.output = o;
            }
            let out = run_train_lbl(&cfg)?;
            for (t, v) in out.validation_nmse.iter().enumerate() {
                println!("layer {:2}  validation NMSE {:8.3} dB", t + 1, 10.0 * v.log10());
            }
            eprintln!("manifest -> {}", out.manifest.display());
            eprintln!("log -> {}", out.log.display());
        }
        Command::TrainDbd { common } => {
            let mut cfg: TrainDbdFile = load(&common.config)?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            if let Some(o) = common.out {
                cfg.output = o;
            }
            let out = run_train_dbd(&cfg)?;
            eprintln!("manifest -> {}", out.manifest.display());
            eprintln!("log -> {}", out.log.display());
        }
        Command::OracleCheck {
            only,
            seed,
            mutate_eta_sign,
        } => {
            let reports = run_oracles(&OracleOptions {
                only,
                flip_eta_sign: mutate_eta_sign,
                seed,
            })?;
            for r in &reports {
                println!("{r}");
            }
            if reports.iter().any(|r| !r.passed) {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Estimate { common, point, trial } => {
            let mut cfg: ExperimentConfig = load(&common.config)?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            let (p, outcomes) = estimate_instance(&cfg, point, trial)?;
            let sys = &p.system;
            println!(
                "# snr_db={} measurement_ratio={} adc_bits={} trial={trial}",
                sys.snr_db,
                sys.measurement_ratio(),
                sys.adc_bits
            );
            let mut trace = String::new();
            for o in &outcomes {
                println!("{:<17} nmse {:.6e} ({:.3} dB)", o.estimator.name(), o.nmse, 10.0 * o.nmse.log10());
                if let Some(d) = &o.layers {
                    trace.push_str(&format!("# {}\n", o.estimator.name()));
                    trace.push_str(&diagnostics_csv(d));
                }
            }
            print!("{trace}");
            if let Some(path) = common.out {
                write_atomic(&path, trace.as_bytes())?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
