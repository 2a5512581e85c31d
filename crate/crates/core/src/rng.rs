//! Counter-based random streams.
//!
//! Every draw is a pure function of `(key, counter)`, so any element of any
//! stream can be produced independently of the others. The definition is
//! deliberately small so other implementations of the wire protocol can
//! reproduce the exact same bits:
//!
//! ```text
//! mix(x)        = splitmix64 finalizer of (x + 0x9E3779B97F4A7C15)
//! bits(key, n)  = mix(key + n * 0x9E3779B97F4A7C15)
//! derive(k, w)  = mix(k ^ mix(w))
//! uniform(k, n) = (bits(k, n) >> 11) * 2^-53                 in [0, 1)
//! normal(k, 2p), normal(k, 2p+1)
//!               = Box-Muller of u1 = ((bits(k, 2p) >> 11) + 1) * 2^-53,
//!                               u2 = (bits(k, 2p+1) >> 11) * 2^-53
//!                 (cos branch for even index, sin branch for odd)
//! ```

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

#[inline]
pub fn mix(x: u64) -> u64 {
    let mut z = x.wrapping_add(GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A keyed stream of 64-bit words.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey(pub u64);

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        StreamKey(seed)
    }

    /// Child stream identified by `word`.
    pub fn derive(self, word: u64) -> Self {
        StreamKey(mix(self.0 ^ mix(word)))
    }

    /// Child stream identified by a sequence of words.
    pub fn derive_all(self, words: &[u64]) -> Self {
        words.iter().fold(self, |k, &w| k.derive(w))
    }

    #[inline]
    pub fn bits(self, counter: u64) -> u64 {
        mix(self.0.wrapping_add(counter.wrapping_mul(GAMMA)))
    }

    #[inline]
    pub fn uniform(self, counter: u64) -> f64 {
        (self.bits(counter) >> 11) as f64 * TWO_POW_M53
    }

    /// Standard normal pair `(normal(2p), normal(2p + 1))`.
    #[inline]
    pub fn normal_pair(self, pair: u64) -> (f64, f64) {
        let u1 = ((self.bits(2 * pair) >> 11) + 1) as f64 * TWO_POW_M53;
        let u2 = (self.bits(2 * pair + 1) >> 11) as f64 * TWO_POW_M53;
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        (r * c, r * s)
    }

    pub fn normal(self, index: u64) -> f64 {
        let (a, b) = self.normal_pair(index / 2);
        if index % 2 == 0 {
            a
        } else {
            b
        }
    }

    /// Fills `out` with `normal(0..out.len())` scaled by `scale`.
    pub fn fill_normal(self, out: &mut [f32], scale: f64) {
        let mut chunks = out.chunks_exact_mut(2);
        let mut pair = 0u64;
        for c in &mut chunks {
            let (a, b) = self.normal_pair(pair);
            c[0] = (a * scale) as f32;
            c[1] = (b * scale) as f32;
            pair += 1;
        }
        if let [last] = chunks.into_remainder() {
            *last = (self.normal_pair(pair).0 * scale) as f32;
        }
    }
}

/// Sequential cursor over a stream, for code that draws a variable number of values.
#[derive(Debug, Clone)]
pub struct Cursor {
    key: StreamKey,
    next: u64,
}

impl Cursor {
    pub fn new(key: StreamKey) -> Self {
        Cursor { key, next: 0 }
    }

    pub fn uniform(&mut self) -> f64 {
        let u = self.key.uniform(self.next);
        self.next += 1;
        u
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: u64) -> u64 {
        ((self.uniform() * n as f64) as u64).min(n.saturating_sub(1))
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = ((self.key.bits(self.next) >> 11) + 1) as f64 * TWO_POW_M53;
        let u2 = (self.key.bits(self.next + 1) >> 11) as f64 * TWO_POW_M53;
        self.next += 2;
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// FNV-1a over a byte slice.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// FNV-1a over the little-endian bytes of a float slice.
pub fn fnv1a_f32(values: &[f32]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}
