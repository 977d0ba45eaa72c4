//! Self-contained random number generation with documented algorithms, so
//! simulation results are reproducible across runs and across parallelism.
//!
//! * [`SplitMix64`] — Steele/Lea/Vigna state-advance-and-mix generator, used
//!   only to expand seeds.
//! * [`Xoshiro256StarStar`] — Blackman/Vigna xoshiro256** output generator,
//!   the workhorse stream.
//! * [`stream`] — derives the replicate-`i` stream from a base seed as
//!   xoshiro256** seeded by four SplitMix64 outputs started from
//!   `base_seed ^ ((i + 1) * 0x9E3779B97F4A7C15)`.
//!
//! Uniform doubles take the top 53 bits of one output; exponentials use the
//! inverse CDF. Discrete offspring sizes are drawn from a Walker/Vose alias
//! table built once per law.

use crate::law::OffspringLaw;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64: 64-bit state, add-gamma advance, murmur-style finalizer.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

/// xoshiro256**: 256-bit state, `rotl(s1 * 5, 7) * 9` output scrambler.
#[derive(Debug, Clone)]
pub struct Xoshiro256StarStar {
    s: [u64; 4],
}

impl Xoshiro256StarStar {
    /// Seeds the state with four SplitMix64 outputs, the standard expansion.
    pub fn from_seed(seed: u64) -> Self {
        let mut sm = SplitMix64::new(seed);
        let s = [sm.next_u64(), sm.next_u64(), sm.next_u64(), sm.next_u64()];
        debug_assert!(s.iter().any(|&w| w != 0));
        Self { s }
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform in `[0, 1)` from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Exponential with the given rate via the inverse CDF `-ln(1 - U) / rate`.
    pub fn exponential(&mut self, rate: f64) -> f64 {
        debug_assert!(rate > 0.0);
        -(-self.next_f64()).ln_1p() / rate
    }
}

/// Deterministic per-replicate stream: independent of how replicates are
/// scheduled across threads.
pub fn stream(base_seed: u64, replicate_index: u64) -> Xoshiro256StarStar {
    let init = base_seed ^ replicate_index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA);
    Xoshiro256StarStar::from_seed(init)
}

/// Walker/Vose alias table over the offspring sizes of a law, sampling size
/// `j` with probability `b_j / -b_1`.
#[derive(Debug, Clone)]
pub struct AliasTable {
    items: Vec<u32>,
    prob: Vec<f64>,
    alias: Vec<usize>,
}

impl AliasTable {
    pub fn for_law(law: &OffspringLaw) -> Self {
        let weights: Vec<(u32, f64)> = law.support().collect();
        Self::new(&weights)
    }

    /// Builds the table from positive weights (not necessarily normalized).
    pub fn new(weights: &[(u32, f64)]) -> Self {
        assert!(!weights.is_empty(), "alias table needs at least one weight");
        let total: f64 = weights.iter().map(|&(_, w)| w).sum();
        let n = weights.len();
        let items: Vec<u32> = weights.iter().map(|&(item, _)| item).collect();
        let mut scaled: Vec<f64> = weights
            .iter()
            .map(|&(_, w)| w / total * n as f64)
            .collect();
        let mut alias = vec![0usize; n];
        let mut prob = vec![1.0f64; n];
        let mut small: Vec<usize> = Vec::new();
        let mut large: Vec<usize> = Vec::new();
        for (i, &s) in scaled.iter().enumerate() {
            if s < 1.0 {
                small.push(i);
            } else {
                large.push(i);
            }
        }
        while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
            small.pop();
            prob[s] = scaled[s];
            alias[s] = l;
            scaled[l] -= 1.0 - scaled[s];
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        // Leftovers are 1 up to rounding.
        for &i in small.iter().chain(large.iter()) {
            prob[i] = 1.0;
        }
        Self { items, prob, alias }
    }

    pub fn sample(&self, rng: &mut Xoshiro256StarStar) -> u32 {
        let n = self.items.len();
        let scaled = rng.next_f64() * n as f64;
        let mut cell = scaled as usize;
        if cell >= n {
            cell = n - 1;
        }
        let frac = scaled - cell as f64;
        if frac < self.prob[cell] {
            self.items[cell]
        } else {
            self.items[self.alias[cell]]
        }
    }
}
