//! Seeded RNG streams.
//!
//! Every stream is a ChaCha20 generator. The 256-bit key packs the master seed
//! and a replicate seed; the 64-bit stream id selects the chain. Streams with
//! different ids under one key never overlap.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

pub const RNG_ALGORITHM: &str = "ChaCha20";

/// Stream reserved for exact-posterior reference draws.
pub const REFERENCE_STREAM: u64 = u64::MAX - 1;
/// Stream reserved for sliced-Wasserstein projection directions.
pub const PROJECTION_STREAM: u64 = u64::MAX - 2;
/// Replicate slot used for prior and task construction.
pub const SETUP_REPLICATE: u64 = u64::MAX;

fn key(master: u64, replicate: u64) -> [u8; 32] {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&master.to_le_bytes());
    key[8..16].copy_from_slice(&replicate.to_le_bytes());
    key[16..24].copy_from_slice(b"ding-rng");
    key
}

/// Stream `index` under `master` alone.
pub fn derive_rng(master: u64, index: u64) -> ChaCha20Rng {
    stream_rng(master, 0, index)
}

/// Stream `index` under `(master, replicate)`.
pub fn stream_rng(master: u64, replicate: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::from_seed(key(master, replicate));
    rng.set_stream(index);
    rng
}

pub fn setup_rng(master: u64) -> ChaCha20Rng {
    stream_rng(master, SETUP_REPLICATE, 0)
}

/// Manifest description of the stream layout.
#[derive(Debug, Clone, Serialize)]
pub struct RngDescription {
    pub algorithm: &'static str,
    pub rounds: u32,
    pub key_layout: &'static str,
    pub stream: &'static str,
    pub reference_stream: u64,
    pub projection_stream: u64,
    pub setup_replicate: u64,
}

pub fn describe() -> RngDescription {
    RngDescription {
        algorithm: RNG_ALGORITHM,
        rounds: 20,
        key_layout: "le64(master) || le64(replicate seed) || \"ding-rng\" || 0^64",
        stream: "chain index",
        reference_stream: REFERENCE_STREAM,
        projection_stream: PROJECTION_STREAM,
        setup_replicate: SETUP_REPLICATE,
    }
}
