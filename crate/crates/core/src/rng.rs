//! Seeded random streams.
//!
//! Every experiment owns one master seed. Channel draws, selection networks,
//! measurement noise and divergence probes each get their own sub-stream so
//! that changing one consumer never shifts the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type SimRng = ChaCha12Rng;

/// Independent consumers of randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Channel = 1,
    Selection = 2,
    Noise = 3,
    Probe = 4,
    Init = 5,
    Training = 6,
    Oracle = 7,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for `(master, stream, index)`; `index` is typically a trial or
/// layer number.
pub fn substream(master: u64, stream: Stream, index: u64) -> SimRng {
    let mut state = master ^ (stream as u64).wrapping_mul(0xA24B_AED4_963E_E407);
    state ^= index.wrapping_mul(0x9FB2_1C65_1E98_DF25);
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    SimRng::from_seed(seed)
}

/// One standard normal draw.
pub fn std_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, rng)
}
