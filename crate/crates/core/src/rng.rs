//! Counter-based random streams.
//!
//! Every draw in a run comes from a stream keyed by
//! `(master_seed, client, round, role)`. The key is folded through SplitMix64
//! into a ChaCha8 seed, so streams are independent of execution order and
//! client updates can run in parallel without changing any result.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// What a stream is used for. Each role gets its own domain tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamRole {
    /// Gradient samples for local step `k`.
    LocalStep(usize),
    /// Gradient samples used to initialize the trackers.
    TrackerInit,
    /// Client subset selection.
    Participation,
    /// Problem instance generation.
    ProblemGen,
    /// Validation set for evaluation.
    Validation,
    /// Caller-defined.
    Custom(u64),
}

impl StreamRole {
    fn key(self) -> (u64, u64) {
        match self {
            StreamRole::LocalStep(k) => (1, k as u64),
            StreamRole::TrackerInit => (2, 0),
            StreamRole::Participation => (3, 0),
            StreamRole::ProblemGen => (4, 0),
            StreamRole::Validation => (5, 0),
            StreamRole::Custom(x) => (6, x),
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent stream for one `(seed, client, round, role)` coordinate.
pub fn derive_rng(master_seed: u64, client: usize, round: usize, role: StreamRole) -> StreamRng {
    let (tag, sub) = role.key();
    let mut h = splitmix64(master_seed);
    for word in [client as u64, round as u64, tag, sub] {
        h = splitmix64(h ^ splitmix64(word));
    }
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        h = splitmix64(h);
        chunk.copy_from_slice(&h.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}
