use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Domain tags keep the key spaces of independent consumers apart.
pub(crate) const DOMAIN_TRANSFORM: u64 = 0x7472_616e_7366_6f72;
pub(crate) const DOMAIN_SPN: u64 = 0x7370_6e70_6572_6d00;

/// Coordinates identifying a stream; recorded in provenance for replay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub master_seed: u64,
    pub case_index: u64,
    pub transform_index: u64,
}

/// Random source for one transform applied to one case.
///
/// The ChaCha key is the concatenation of the three coordinates, so a stream
/// depends on nothing but `(master_seed, case_index, transform_index)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    key: StreamKey,
    rng: ChaCha8Rng,
}

fn keyed(words: [u64; 4]) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    for (chunk, w) in seed.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

impl RngStream {
    pub fn derive(master_seed: u64, case_index: u64, transform_index: u64) -> Self {
        Self::from_key(StreamKey {
            master_seed,
            case_index,
            transform_index,
        })
    }

    pub fn from_key(key: StreamKey) -> Self {
        Self {
            key,
            rng: keyed([
                key.master_seed,
                key.case_index,
                key.transform_index,
                DOMAIN_TRANSFORM,
            ]),
        }
    }

    pub fn key(&self) -> StreamKey {
        self.key
    }

    /// Draws the accept/reject decision: true with probability `p`.
    /// Always consumes one draw, so later draws do not depend on `p`.
    pub fn gate(&mut self, p: f64) -> bool {
        let u: f64 = self.rng.random();
        u < p
    }

    /// Uniform on `[lo, hi]`; returns `lo` when the interval is empty.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u: f64 = self.rng.random();
        if hi > lo {
            lo + u * (hi - lo)
        } else {
            lo
        }
    }

    /// Uniform magnitude in `[lo, hi]` with a random sign.
    pub fn signed_uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let m = self.uniform(lo, hi);
        if self.rng.random::<bool>() {
            m
        } else {
            -m
        }
    }

    /// Uniform integer in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn rng(&mut self) -> &mut impl Rng {
        &mut self.rng
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

pub(crate) fn spn_rng(seed: u64) -> ChaCha8Rng {
    keyed([seed, 0, 0, DOMAIN_SPN])
}
