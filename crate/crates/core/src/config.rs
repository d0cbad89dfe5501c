//! Scalar parameters of the simulated uplink.

use std::fmt;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// ADC resolution per real dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Resolution {
    Bits(u32),
    #[default]
    Infinite,
}

impl Resolution {
    pub fn bits(self) -> Option<u32> {
        match self {
            Resolution::Bits(b) => Some(b),
            Resolution::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Resolution::Infinite)
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Resolution::Bits(b) => write!(f, "{b}"),
            Resolution::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Resolution {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Resolution::Bits(b) => s.serialize_u32(*b),
            Resolution::Infinite => s.serialize_str("infinite"),
        }
    }
}

impl<'de> Deserialize<'de> for Resolution {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Float(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(0) => Err(de::Error::custom("ADC bits must be positive")),
            Raw::Int(b) if b <= 24 => Ok(Resolution::Bits(b as u32)),
            Raw::Int(b) => Err(de::Error::custom(format!("{b} ADC bits is out of range (max 24)"))),
            Raw::Float(x) if x.is_infinite() && x > 0.0 => Ok(Resolution::Infinite),
            Raw::Float(x) => Err(de::Error::custom(format!("ADC bits must be an integer, got {x}"))),
            Raw::Text(s) => match s.trim().to_ascii_lowercase().as_str() {
                "inf" | "infinite" | "infinity" | "∞" => Ok(Resolution::Infinite),
                other => other
                    .parse::<u32>()
                    .ok()
                    .filter(|b| (1..=24).contains(b))
                    .map(Resolution::Bits)
                    .ok_or_else(|| de::Error::custom(format!("unrecognized ADC resolution `{s}`"))),
            },
        }
    }
}

/// Serde helper for f64 fields that may be `+inf` (written as `"inf"`).
pub(crate) mod extended_f64 {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else if *x > 0.0 {
            s.serialize_str("inf")
        } else if *x < 0.0 {
            s.serialize_str("-inf")
        } else {
            s.serialize_str("nan")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(x),
            Raw::Text(s) => parse(&s).ok_or_else(|| de::Error::custom(format!("not a number: `{s}`"))),
        }
    }

    pub fn parse(s: &str) -> Option<f64> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "+inf" | "infinity" | "infinite" => Some(f64::INFINITY),
            "-inf" | "-infinity" => Some(f64::NEG_INFINITY),
            t => t.parse().ok(),
        }
    }
}

/// All scalar parameters of one simulated system. Missing fields take the
/// desk-scale defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    /// Lens-array antenna count N.
    #[serde(alias = "n")]
    pub antennas: usize,
    /// RF chains N_RF.
    #[serde(alias = "n_rf")]
    pub rf_chains: usize,
    /// Pilot instants Q.
    #[serde(alias = "q")]
    pub pilot_instants: usize,
    /// OFDM subcarriers M.
    #[serde(alias = "m")]
    pub subcarriers: usize,
    /// Propagation paths L.
    #[serde(alias = "l")]
    pub paths: usize,
    #[serde(alias = "f_c")]
    pub carrier_hz: f64,
    #[serde(alias = "f_s")]
    pub bandwidth_hz: f64,
    #[serde(alias = "kappa", default)]
    pub adc_bits: Resolution,
    #[serde(with = "extended_f64")]
    pub snr_db: f64,
    pub tau_max: f64,
    /// Overrides the default 3-sigma quantizer step when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantizer_step: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SystemConfig {
    /// Desk-scale defaults (N=32, N_RF=8, Q=8, M=64, L=3, 28 GHz / 4 GHz, 20 ns).
    fn default() -> Self {
        Self {
            antennas: 32,
            rf_chains: 8,
            pilot_instants: 8,
            subcarriers: 64,
            paths: 3,
            carrier_hz: 28e9,
            bandwidth_hz: 4e9,
            adc_bits: Resolution::Infinite,
            snr_db: 10.0,
            tau_max: 20e-9,
            quantizer_step: None,
            seed: 0,
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |path: &str, msg: &str| {
            Err(Error::Config {
                path: path.to_owned(),
                msg: msg.to_owned(),
            })
        };
        if self.antennas == 0 {
            return fail("antennas", "must be at least 1");
        }
        if self.rf_chains == 0 || self.rf_chains > self.antennas {
            return fail("rf_chains", "must lie in 1..=antennas");
        }
        if self.pilot_instants == 0 {
            return fail("pilot_instants", "must be at least 1");
        }
        if self.subcarriers == 0 {
            return fail("subcarriers", "must be at least 1");
        }
        if !(self.carrier_hz > 0.0 && self.carrier_hz.is_finite()) {
            return fail("carrier_hz", "must be positive and finite");
        }
        if !(self.bandwidth_hz >= 0.0 && self.bandwidth_hz < 2.0 * self.carrier_hz) {
            return fail("bandwidth_hz", "must satisfy 0 <= f_s < 2 f_c");
        }
        if !(self.tau_max > 0.0 && self.tau_max.is_finite()) {
            return fail("tau_max", "must be positive and finite");
        }
        if self.snr_db.is_nan() {
            return fail("snr_db", "must not be NaN");
        }
        if let Some(step) = self.quantizer_step {
            if !(step > 0.0 && step.is_finite()) {
                return fail("quantizer_step", "must be positive and finite");
            }
        }
        Ok(())
    }

    /// Rows of the per-subcarrier selection network, Q·N_RF.
    pub fn measurements_per_subcarrier(&self) -> usize {
        self.pilot_instants * self.rf_chains
    }

    /// Measurement ratio δ = Q·N_RF / N.
    pub fn measurement_ratio(&self) -> f64 {
        self.measurements_per_subcarrier() as f64 / self.antennas as f64
    }

    /// Complex noise variance σ_n² = 10^(−snr/10) for unit channel power.
    pub fn noise_var(&self) -> f64 {
        if self.snr_db == f64::INFINITY {
            0.0
        } else {
            10f64.powf(-self.snr_db / 10.0)
        }
    }

    /// Length MN of the stacked beamspace channel.
    pub fn channel_len(&self) -> usize {
        self.antennas * self.subcarriers
    }

    /// Length M·Q·N_RF of the stacked measurement vector.
    pub fn measurement_len(&self) -> usize {
        self.subcarriers * self.measurements_per_subcarrier()
    }
}
