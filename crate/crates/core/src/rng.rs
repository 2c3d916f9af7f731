//! Deterministic random streams.
//!
//! Every stochastic operation in the crate draws from a ChaCha12 stream
//! derived from a user seed plus a fixed stream tag. All value mappings
//! (uniform, gaussian, bounded index, shuffle) are written out here rather
//! than delegated to a distributions crate, so that a port to another
//! language can reproduce datasets byte for byte from the seed alone.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Stream tags. Two operations fed by the same user seed stay statistically
/// independent because each mixes a distinct tag into the ChaCha key.
pub mod stream {
    pub const LABELS: u64 = 1;
    pub const FEATURES: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const DESTROY: u64 = 4;
    pub const INIT_BIASED: u64 = 5;
    pub const INIT_DEBIASED: u64 = 6;
    pub const TEST_SPLIT: u64 = 7;
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// One step of the splitmix64 sequence (Steele, Lea & Flood's constants).
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent u64 seed for step-scoped substreams, e.g. one
/// destruction permutation per training batch.
pub fn mix(seed: u64, tag: u64, step: u64) -> u64 {
    let mut state = seed ^ tag.wrapping_mul(GOLDEN) ^ step.wrapping_mul(0xD1B5_4A32_D192_ED03);
    splitmix64(&mut state)
}

pub struct Rng {
    inner: ChaCha12Rng,
    spare_gaussian: Option<f64>,
}

impl Rng {
    /// Opens stream `tag` of user seed `seed`. The 32-byte ChaCha key is the
    /// first four outputs of splitmix64 started at `seed XOR tag * GOLDEN`.
    pub fn from_seed(seed: u64, tag: u64) -> Self {
        let mut state = seed ^ tag.wrapping_mul(GOLDEN);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        Rng {
            inner: ChaCha12Rng::from_seed(key),
            spare_gaussian: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1): the top 53 bits of a u64, scaled by 2^-53.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via Box-Muller. Each pair of uniforms yields two
    /// normals; the second is cached and returned on the next call.
    pub fn gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare_gaussian.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform(); // in (0, 1], keeps the log finite
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (sin, cos) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare_gaussian = Some(r * sin);
        r * cos
    }

    /// Uniform index in [0, n) by Lemire's widening-multiply method with
    /// rejection; exactly unbiased.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index bound must be positive");
        let n = n as u64;
        let mut m = (self.next_u64() as u128) * (n as u128);
        let mut low = m as u64;
        if low < n {
            let threshold = n.wrapping_neg() % n;
            while low < threshold {
                m = (self.next_u64() as u128) * (n as u128);
                low = m as u64;
            }
        }
        (m >> 64) as usize
    }

    /// Fisher-Yates shuffle, iterating from the back.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.index(i + 1);
            xs.swap(i, j);
        }
    }

    /// A permutation of 0..n.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }

    /// One draw from the categorical distribution described by `cumulative`
    /// (nondecreasing partial sums ending at 1): binary search of a uniform.
    pub fn categorical(&mut self, cumulative: &[f64]) -> usize {
        let u = self.uniform();
        cumulative
            .partition_point(|&c| c <= u)
            .min(cumulative.len() - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_same_seed_same_stream() {
        let mut a = Rng::from_seed(7, stream::LABELS);
        let mut b = Rng::from_seed(7, stream::LABELS);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn test_streams_differ_by_tag() {
        let mut a = Rng::from_seed(7, stream::LABELS);
        let mut b = Rng::from_seed(7, stream::FEATURES);
        let collisions = (0..64).filter(|_| a.next_u64() == b.next_u64()).count();
        assert_eq!(collisions, 0);
    }

    #[test]
    fn test_uniform_in_unit_interval() {
        let mut rng = Rng::from_seed(0, 0);
        for _ in 0..10_000 {
            let u = rng.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn test_gaussian_moments() {
        let mut rng = Rng::from_seed(1, 0);
        let n = 200_000;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..n {
            let z = rng.gaussian();
            sum += z;
            sum_sq += z * z;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn test_index_in_bounds_and_covers() {
        let mut rng = Rng::from_seed(2, 0);
        let mut seen = [false; 7];
        for _ in 0..1000 {
            seen[rng.index(7)] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn test_shuffle_is_permutation() {
        let mut rng = Rng::from_seed(3, 0);
        let mut xs: Vec<usize> = (0..50).collect();
        rng.shuffle(&mut xs);
        let mut sorted = xs.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn test_categorical_respects_masses() {
        let mut rng = Rng::from_seed(4, 0);
        let cumulative = [0.2, 0.5, 1.0];
        let mut counts = [0usize; 3];
        for _ in 0..100_000 {
            counts[rng.categorical(&cumulative)] += 1;
        }
        assert!((counts[0] as f64 / 1e5 - 0.2).abs() < 0.01);
        assert!((counts[1] as f64 / 1e5 - 0.3).abs() < 0.01);
        assert!((counts[2] as f64 / 1e5 - 0.5).abs() < 0.01);
    }

    #[test]
    fn test_mix_varies_with_each_component() {
        assert_ne!(mix(1, 2, 3), mix(1, 2, 4));
        assert_ne!(mix(1, 2, 3), mix(1, 3, 3));
        assert_ne!(mix(1, 2, 3), mix(2, 2, 3));
    }
}
