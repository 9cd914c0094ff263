//! Portable random stream used by the synthetic generator.
//!
//! The generator is SplitMix64 read as a counter-based function: the `n`-th
//! output (n starting at 1) is `mix(seed + n * 0x9E3779B97F4A7C15)` with
//!
//! ```text
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! z =  z ^ (z >> 31)
//! ```
//!
//! all arithmetic wrapping mod 2^64. Uniforms take the top 53 bits:
//! `u = (next >> 11) * 2^-53` in `[0, 1)`. Normals use one branch of
//! Box-Muller on two fresh uniforms,
//! `z = sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`, discarding the sine branch so
//! every normal costs exactly two draws.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const TWO_POW_NEG_53: f64 = 1.0 / (1u64 << 53) as f64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    seed: u64,
    counter: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { seed, counter: 0 }
    }

    /// Output at an absolute stream position, independent of the cursor.
    pub fn at(seed: u64, index: u64) -> u64 {
        mix(seed.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
    }

    pub fn next_u64(&mut self) -> u64 {
        let out = Self::at(self.seed, self.counter);
        self.counter = self.counter.wrapping_add(1);
        out
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_POW_NEG_53
    }

    /// Standard normal variate.
    pub fn next_normal(&mut self) -> f64 {
        let u1 = self.next_f64();
        let u2 = self.next_f64();
        // 1 - u1 lies in (0, 1], so the log is finite
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
