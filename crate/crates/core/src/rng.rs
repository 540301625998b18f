//! Deterministic pseudo-random generation.
//!
//! Every sampled byte and every simulated trial in this crate draws from
//! [`SplitMix64`]: a 64-bit counter advanced by a fixed odd increment and
//! scrambled by a murmur-style finalizer. All arithmetic is explicit
//! wrapping integer math, so a given seed produces the same stream on
//! every platform. Not suitable for secrets.

/// Weyl-sequence increment (odd, 2^64 / golden ratio).
const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Deterministic generator with a single 64-bit state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Next 64-bit value: advance state by `GAMMA`, then finalize.
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform draw in `[0, 1)` using the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[0, n)` by modulo reduction. The residual bias of
    /// roughly `n / 2^64` is irrelevant at the ranges used here, and the
    /// mapping itself is part of the documented generation contract.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        self.next_u64() % n
    }

    /// Draw `true` with probability `numerator / denominator`.
    pub fn chance(&mut self, numerator: u64, denominator: u64) -> bool {
        debug_assert!(denominator > 0 && numerator <= denominator);
        self.below(denominator) < numerator
    }

    /// Fisher-Yates shuffle, one `below` draw per swap, from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

/// Derive an independent stream seed from a master seed and a stream id.
///
/// Distinct stream ids yield decorrelated streams; the master seed is never
/// used as a raw `SplitMix64` seed anywhere in this crate, only through this
/// derivation.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    SplitMix64::new(master ^ stream.wrapping_mul(GAMMA)).next_u64()
}
