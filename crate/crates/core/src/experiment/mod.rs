//! Experiment driver: config files, sweeps, datasets, training entry points
//! and the oracle suite.

pub mod config;
pub mod dataset;
pub mod oracle;
pub mod sweep;
pub mod train;

pub use config::{
    load_file, parse_ini, DatasetConfig, DenoiserChoice, EstimatorKind, ExperimentConfig, SnrPoint, SweepPoint, TrainDbdFile, TrainLblFile,
    WeightPaths,
};
pub use dataset::{generate_dataset, read_dataset, write_dataset, Dataset, DatasetRecord};
pub use oracle::{run_oracles, OracleOptions, OracleReport, ORACLE_NAMES};
pub use sweep::{estimate_instance, instance, run_sweep, write_outputs, Instance, ResultRow, RunOptions, SweepResult};
pub use train::{run_train_dbd, run_train_lbl, TrainOutcome};
