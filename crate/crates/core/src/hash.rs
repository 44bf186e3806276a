//! Platform-independent 64-bit hashing.
//!
//! Everything that must be reproducible across runs, platforms and releases
//! (prompt buckets, fingerprint codes, per-stage seeds, artifact names) goes
//! through FNV-1a with the constants pinned below. Words are fed as
//! little-endian bytes.

/// FNV-1a 64-bit offset basis.
pub const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
/// FNV-1a 64-bit prime.
pub const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Incremental FNV-1a hasher.
#[derive(Debug, Clone, Copy)]
pub struct StableHasher {
    state: u64,
}

impl Default for StableHasher {
    fn default() -> Self {
        Self::new()
    }
}

impl StableHasher {
    pub fn new() -> Self {
        Self { state: FNV_OFFSET }
    }

    pub fn write_bytes(&mut self, bytes: &[u8]) -> &mut Self {
        for &b in bytes {
            self.state ^= u64::from(b);
            self.state = self.state.wrapping_mul(FNV_PRIME);
        }
        self
    }

    pub fn write_u64(&mut self, value: u64) -> &mut Self {
        self.write_bytes(&value.to_le_bytes())
    }

    pub fn write_i64(&mut self, value: i64) -> &mut Self {
        self.write_bytes(&value.to_le_bytes())
    }

    pub fn write_str(&mut self, s: &str) -> &mut Self {
        // length prefix keeps ("ab","c") and ("a","bc") apart
        self.write_u64(s.len() as u64);
        self.write_bytes(s.as_bytes())
    }

    pub fn finish(&self) -> u64 {
        self.state
    }
}

/// FNV-1a of raw bytes.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    StableHasher::new().write_bytes(bytes).finish()
}

/// SplitMix64 finalizer; decorrelates nearby seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for a named stage: `seed + fnv1a(stage)` (wrapping).
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    seed.wrapping_add(fnv1a(stage.as_bytes()))
}

/// Seed for one item of a stage, keyed by a stable item identifier.
pub fn item_seed(seed: u64, key: &str) -> u64 {
    mix64(seed ^ fnv1a(key.as_bytes()))
}

/// 16 hex digits of the FNV-1a digest of `bytes`.
pub fn content_hash(bytes: &[u8]) -> String {
    format!("{:016x}", fnv1a(bytes))
}
