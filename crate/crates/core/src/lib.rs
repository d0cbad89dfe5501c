//! Wideband beamspace channel estimation for lens-array mmWave receivers.
//!
//! The crate covers the whole desk-scale pipeline:
//!
//! * [`channel`]: Saleh–Valenzuela beamspace channels with beam squint.
//! * [`measurement`]: one-bit-phase-shifter selection networks, AWGN and
//!   midrise low-resolution ADCs.
//! * [`posterior`]: the observation-side posterior of `z = A h`, with a
//!   quadrature oracle.
//! * [`denoiser`]: pluggable denoisers with divergence, including a small
//!   residual CNN with hand-written backpropagation.
//! * [`gec`]: the unfolded expectation-consistent estimator.
//! * [`training`]: SURE / MSE losses, layer-by-layer and per-noise-bin training.
//! * [`baselines`]: LS, OMP and the NMSE metric.
//! * [`experiment`]: configuration files, sweeps, datasets and the oracle suite
//!   behind the `ldgec` binary.

pub mod baselines;
pub mod channel;
pub mod config;
pub mod denoiser;
pub mod error;
pub mod experiment;
pub mod gec;
pub mod measurement;
pub mod posterior;
pub mod rng;
pub mod training;

pub use num_complex::Complex64;

pub use config::{Resolution, SystemConfig};
pub use error::{Error, Result};
