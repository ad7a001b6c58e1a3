//! Seeded deterministic randomness.
//!
//! Weight material is derived statelessly from (seed, parameter name, flat
//! index) through SplitMix64, so identical configurations produce identical
//! bytes on any platform. All transcendentals go through `libm` to keep the
//! mapping platform-independent.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a 64-bit hash, used to key parameter streams by name.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xCBF2_9CE4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Sequential SplitMix64 stream.
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n). `n` must be nonzero.
    pub fn next_below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i + 1);
            items.swap(i, j);
        }
    }
}

/// The `index`-th raw draw of the stateless stream keyed by (seed, name).
pub fn keyed_u64(seed: u64, name: &str, index: u64) -> u64 {
    let base = mix(seed ^ fnv1a(name.as_bytes()));
    mix(base.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN)))
}

/// Standard normal via Box-Muller over two keyed draws.
///
/// u1 lies in (0, 1] so the log never sees zero; the cosine branch is used
/// exclusively so one weight entry consumes exactly draws 2i and 2i+1.
pub fn keyed_normal(seed: u64, name: &str, index: u64) -> f64 {
    let scale = 1.0 / (1u64 << 53) as f64;
    let u1 = ((keyed_u64(seed, name, 2 * index) >> 11) as f64 + 1.0) * scale;
    let u2 = (keyed_u64(seed, name, 2 * index + 1) >> 11) as f64 * scale;
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
}
