//! Binary channel datasets.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "LDGECDS\0"
//! version  u32      1
//! flags    u32      bit 0: records carry measurements
//! cfg_len  u32      length of the JSON system echo
//! cfg      cfg_len  SystemConfig as JSON
//! count    u64
//! records  count ×
//!   channel     N·M complex, beam-major then subcarrier, f64 re/im interleaved
//!   [selection] Q·N_RF × N f64, row-major            (flag bit 0)
//!   [y]         M·Q·N_RF complex, f64 re/im          (flag bit 0)
//! ```

use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::channel::sample_channel;
use crate::config::SystemConfig;
use crate::denoiser::weights::write_atomic;
use crate::error::{Error, Result};
use crate::rng::{substream, Stream};
use crate::training::generate_samples;

pub const DATASET_MAGIC: &[u8; 8] = b"LDGECDS\0";
pub const DATASET_VERSION: u32 = 1;
const FLAG_MEASUREMENTS: u32 = 1;

/// One stored sample. `channel` is in the stacked (subcarrier-major) order
/// used everywhere else; only the file is beam-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub channel: Vec<Complex64>,
    pub measurement: Option<(DMatrix<f64>, Vec<Complex64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub system: SystemConfig,
    pub records: Vec<DatasetRecord>,
}

/// Draws `count` samples with the same streams as the training sets, so
/// record `k` holds the channel of sample `k` for `seed`.
pub fn generate_dataset(system: &SystemConfig, seed: u64, count: usize, measurements: bool) -> Result<Dataset> {
    system.validate()?;
    let records = if measurements {
        generate_samples(system, seed, 0, count, true)?
            .into_iter()
            .map(|s| DatasetRecord {
                channel: s.truth.expect("kept"),
                measurement: Some((s.model.selection.matrix().clone(), s.y)),
            })
            .collect()
    } else {
        (0..count as u64)
            .map(|k| {
                Ok(DatasetRecord {
                    channel: sample_channel(system, &mut substream(seed, Stream::Channel, k))?.into_stacked(),
                    measurement: None,
                })
            })
            .collect::<Result<_>>()?
    };
    Ok(Dataset {
        system: system.clone(),
        records,
    })
}

fn put_c(out: &mut Vec<u8>, c: Complex64) {
    out.extend_from_slice(&c.re.to_le_bytes());
    out.extend_from_slice(&c.im.to_le_bytes());
}

pub fn encode(ds: &Dataset) -> Result<Vec<u8>> {
    let (n, m) = (ds.system.antennas, ds.system.subcarriers);
    let rows = ds.system.measurements_per_subcarrier();
    let with_y = ds.records.first().is_some_and(|r| r.measurement.is_some());
    let cfg = serde_json::to_vec(&ds.system).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(if with_y { FLAG_MEASUREMENTS } else { 0 }).to_le_bytes());
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    out.extend_from_slice(&(ds.records.len() as u64).to_le_bytes());
    for rec in &ds.records {
        Error::check_len("dataset channel", n * m, rec.channel.len())?;
        for b in 0..n {
            for s in 0..m {
                put_c(&mut out, rec.channel[s * n + b]);
            }
        }
        match (&rec.measurement, with_y) {
            (Some((w, y)), true) => {
                if w.shape() != (rows, n) {
                    return Err(Error::input("selection network shape does not match the system"));
                }
                Error::check_len("dataset measurement", rows * m, y.len())?;
                for i in 0..rows {
                    for j in 0..n {
                        out.extend_from_slice(&w[(i, j)].to_le_bytes());
                    }
                }
                y.iter().for_each(|&c| put_c(&mut out, c));
            }
            (None, false) => {}
            _ => return Err(Error::input("records must all carry measurements or none")),
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("dataset truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn c(&mut self) -> Result<Complex64> {
        Ok(Complex64::new(self.f64()?, self.f64()?))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != DATASET_MAGIC {
        return Err(Error::Format("not an LDGEC dataset (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != DATASET_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let flags = r.u32()?;
    if flags & !FLAG_MEASUREMENTS != 0 {
        return Err(Error::Format(format!("unknown dataset flags {flags:#x}")));
    }
    let cfg_len = r.u32()? as usize;
    let system: SystemConfig = serde_json::from_slice(r.take(cfg_len)?).map_err(|e| Error::Format(format!("system echo: {e}")))?;
    system.validate()?;
    let count = r.u64()?;
    let (n, m) = (system.antennas, system.subcarriers);
    let rows = system.measurements_per_subcarrier();
    let per_record = 16 * n * m + if flags & FLAG_MEASUREMENTS != 0 { 8 * rows * n + 16 * rows * m } else { 0 };
    let remaining = bytes.len() - r.pos;
    if count.checked_mul(per_record as u64) != Some(remaining as u64) {
        return Err(Error::Format(format!("{count} records need {per_record} bytes each, found {remaining} bytes")));
    }
    let mut records = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let mut channel = vec![Complex64::new(0.0, 0.0); n * m];
        for b in 0..n {
            for s in 0..m {
                channel[s * n + b] = r.c()?;
            }
        }
        let measurement = if flags & FLAG_MEASUREMENTS != 0 {
            let mut w = DMatrix::zeros(rows, n);
            for i in 0..rows {
                for j in 0..n {
                    w[(i, j)] = r.f64()?;
                }
            }
            let y = (0..rows * m).map(|_| r.c()).collect::<Result<Vec<_>>>()?;
            Some((w, y))
        } else {
            None
        };
        records.push(DatasetRecord { channel, measurement });
    }
    Ok(Dataset { system, records })
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    write_atomic(path, &encode(ds)?)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SystemConfig {
        SystemConfig {
            antennas: 8,
            rf_chains: 2,
            pilot_instants: 2,
            subcarriers: 4,
            paths: 2,
            adc_bits: crate::Resolution::Bits(3),
            ..SystemConfig::default()
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for with_y in [false, true] {
            let ds = generate_dataset(&small(), 9, 5, with_y).unwrap();
            let bytes = encode(&ds).unwrap();
            assert_eq!(decode(&bytes).unwrap(), ds);
        }
    }

    #[test]
    fn empty_dataset_is_header_only() {
        let ds = generate_dataset(&small(), 1, 0, false).unwrap();
        let bytes = encode(&ds).unwrap();
        let cfg_len = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), 8 + 4 + 4 + 4 + cfg_len + 8);
        assert!(decode(&bytes).unwrap().records.is_empty());
    }

    #[test]
    fn file_order_is_beam_major() {
        let ds = generate_dataset(&small(), 2, 1, false).unwrap();
        let bytes = encode(&ds).unwrap();
        let cfg_len = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
        let body = &bytes[28 + cfg_len..];
        let at = |k: usize| f64::from_le_bytes(body[16 * k..16 * k + 8].try_into().unwrap());
        // second value on disk is beam 0, subcarrier 1 = stacked index N
        assert_eq!(at(1), ds.records[0].channel[8].re);
        assert_eq!(at(4), ds.records[0].channel[1].re);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let ds = generate_dataset(&small(), 3, 2, false).unwrap();
        let bytes = encode(&ds).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode(&extra).is_err());
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = encode(&generate_dataset(&small(), 4, 3, true).unwrap()).unwrap();
        let b = encode(&generate_dataset(&small(), 4, 3, true).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}
