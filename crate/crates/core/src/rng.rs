//! Counter-based uniform generator.
//!
//! Values are a pure function of (key, counter), so an architecture's noise
//! does not depend on evaluation order or thread.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    pub fn keyed<I: IntoIterator<Item = u64>>(seed: u64, words: I) -> Self {
        let key = words
            .into_iter()
            .fold(splitmix64(seed), |k, w| splitmix64(k ^ splitmix64(w)));
        CounterRng { key }
    }

    pub fn bits(&self, counter: u64) -> u64 {
        splitmix64(self.key ^ counter.wrapping_mul(GOLDEN).rotate_left(17))
    }

    /// Uniform in [0, 1).
    pub fn uniform(&self, counter: u64) -> f64 {
        (self.bits(counter) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}
