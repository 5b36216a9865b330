//! Named random sub-streams derived from a single master seed.
//!
//! Every consumer of randomness (partitioning, initialization, batching,
//! pseudo-data) asks for its own stream by name plus a list of indices
//! (round, client, ...). Streams are ChaCha8 keyed by the master seed and
//! selected by a 64-bit stream id hashed from the label, so adding a new
//! consumer never shifts the numbers an existing one sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stable stream labels. Values are part of the reproducibility contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Subset,
    Partition,
    Split,
    PseudoData,
    Init,
    Batch,
    PseudoBatch,
    Probe,
    Synthetic,
}

impl Stream {
    fn tag(self) -> &'static str {
        match self {
            Stream::Subset => "subset",
            Stream::Partition => "partition",
            Stream::Split => "split",
            Stream::PseudoData => "pseudo-data",
            Stream::Init => "init",
            Stream::Batch => "batch",
            Stream::PseudoBatch => "pseudo-batch",
            Stream::Probe => "probe",
            Stream::Synthetic => "synthetic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    master: u64,
}

impl SeedTree {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn rng(&self, stream: Stream, indices: &[u64]) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let mut state = self.master;
        for chunk in key.chunks_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(stream_id(stream.tag(), indices));
        rng
    }
}

fn stream_id(tag: &str, indices: &[u64]) -> u64 {
    // FNV-1a over the tag, then fold indices through splitmix.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    for &i in indices {
        let mut s = h ^ i.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        h = splitmix64(&mut s);
    }
    h
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
