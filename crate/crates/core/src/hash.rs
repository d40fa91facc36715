//! FNV-1a hashing with a stable f64 encoding, used for tape checkpoints and
//! config fingerprints. Stability across runs and platforms matters more than
//! speed here, which rules out the randomized std hasher.

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

#[derive(Debug, Clone)]
pub struct StreamHasher {
    state: u64,
}

impl StreamHasher {
    pub fn new() -> Self {
        StreamHasher { state: FNV_OFFSET }
    }

    pub fn write_bytes(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.state ^= b as u64;
            self.state = self.state.wrapping_mul(FNV_PRIME);
        }
    }

    pub fn write_u64(&mut self, v: u64) {
        self.write_bytes(&v.to_le_bytes());
    }

    /// Hashes the exact bit pattern, so runs differing only in the sign of a
    /// zero or in NaN payloads hash differently. That is intentional: the
    /// tape uses this to detect any divergence between replayed steps.
    pub fn write_f64(&mut self, v: f64) {
        self.write_u64(v.to_bits());
    }

    pub fn finish(&self) -> u64 {
        self.state
    }
}

impl Default for StreamHasher {
    fn default() -> Self {
        Self::new()
    }
}

pub fn hash_bytes(bytes: &[u8]) -> u64 {
    let mut h = StreamHasher::new();
    h.write_bytes(bytes);
    h.finish()
}
