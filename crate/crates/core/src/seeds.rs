//! Seed fan-out.
//!
//! A single master seed drives an entire run. Every independent random stream
//! (noise per receiver per cycle, jammer waveform per cycle, injected
//! impairments, payload generation) derives its own seed as
//! `master ^ fnv1a64(stream tag)`. Streams are therefore independent of how
//! many receivers participate: adding a receiver never perturbs the samples
//! another receiver sees.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Identifies one random stream within a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamId<'a> {
    /// Purpose tag, e.g. "noise", "jammer", "delay".
    pub tag: &'a str,
    /// Cycle index, or 0 for streams that span the run.
    pub cycle: u64,
    /// Receiver index, or 0 for streams shared by all receivers.
    pub receiver: u32,
}

impl StreamId<'_> {
    fn digest(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.tag.len() + 12);
        bytes.extend_from_slice(self.tag.as_bytes());
        bytes.extend_from_slice(&self.cycle.to_le_bytes());
        bytes.extend_from_slice(&self.receiver.to_le_bytes());
        fnv1a64(&bytes)
    }
}

/// Derive the seed for one stream: `master ^ fnv1a64(tag || cycle || receiver)`.
pub fn derive(master: u64, id: StreamId<'_>) -> u64 {
    master ^ id.digest()
}

/// Seeded deterministic RNG for one stream.
pub fn rng_for(master: u64, id: StreamId<'_>) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, id))
}

/// Seeded RNG from a bare seed value.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
