//! Deterministic sampling helpers over a portable 64-bit generator.
//!
//! All randomness in the workspace flows through `xoshiro256++` seeded via
//! splitmix64 (`seed_from_u64`), with the conversions below kept in-crate so
//! that generated worlds and training runs are byte-identical across
//! platforms and dependency upgrades.

pub use rand_core::RngCore;
pub use rand_core::SeedableRng;
pub use rand_xoshiro::Xoshiro256PlusPlus;

/// The workspace-wide RNG.
pub type Rng = Xoshiro256PlusPlus;

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Derives an independent stream for a subtask, keyed by (seed, stream id).
pub fn substream(seed: u64, stream: u64) -> Rng {
    let mut root = seeded(seed);
    let mut derived = seeded(root.next_u64() ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    // Decorrelate low-entropy stream ids.
    derived.next_u64();
    derived
}

/// Uniform f64 in [0, 1) using the top 53 bits.
pub fn unit_f64(rng: &mut Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform integer in [0, bound) via Lemire's widening-multiply rejection.
pub fn bounded(rng: &mut Rng, bound: u64) -> u64 {
    assert!(bound > 0, "bounded sampling needs a positive bound");
    loop {
        let x = rng.next_u64();
        let m = (x as u128) * (bound as u128);
        let low = m as u64;
        if low >= bound || low >= low.wrapping_neg() % bound {
            return (m >> 64) as u64;
        }
    }
}

pub fn range_usize(rng: &mut Rng, lo: usize, hi_inclusive: usize) -> usize {
    lo + bounded(rng, (hi_inclusive - lo + 1) as u64) as usize
}

/// Fisher-Yates shuffle.
pub fn shuffle<T>(rng: &mut Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = bounded(rng, (i + 1) as u64) as usize;
        items.swap(i, j);
    }
}

/// Standard normal via Box-Muller; consumes two uniforms per pair.
pub struct Gaussian {
    spare: Option<f64>,
}

impl Gaussian {
    pub fn new() -> Self {
        Self { spare: None }
    }

    pub fn sample(&mut self, rng: &mut Rng) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // Avoid ln(0) by nudging u1 away from zero.
        let u1 = (unit_f64(rng)).max(f64::MIN_POSITIVE);
        let u2 = unit_f64(rng);
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}

impl Default for Gaussian {
    fn default() -> Self {
        Self::new()
    }
}

/// Cumulative-weight table for repeated categorical draws.
pub struct CategoricalSampler {
    cumulative: Vec<f64>,
}

impl CategoricalSampler {
    /// Builds a sampler from non-negative weights (at least one positive).
    pub fn new(weights: &[f64]) -> Self {
        assert!(!weights.is_empty());
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for &w in weights {
            debug_assert!(w >= 0.0 && w.is_finite());
            acc += w;
            cumulative.push(acc);
        }
        assert!(acc > 0.0, "categorical sampler needs positive total weight");
        Self { cumulative }
    }

    pub fn sample(&self, rng: &mut Rng) -> usize {
        let total = *self.cumulative.last().unwrap();
        let x = unit_f64(rng) * total;
        // partition_point returns the first index with cumulative > x.
        self.cumulative.partition_point(|&c| c <= x).min(self.cumulative.len() - 1)
    }

    /// One multinomial draw of `n` trials, returned as per-category counts.
    pub fn multinomial(&self, rng: &mut Rng, n: u64) -> Vec<u64> {
        let mut counts = vec![0u64; self.cumulative.len()];
        for _ in 0..n {
            counts[self.sample(rng)] += 1;
        }
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = seeded(7);
        let mut b = seeded(7);
        for _ in 0..32 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn unit_f64_in_range() {
        let mut rng = seeded(3);
        for _ in 0..1000 {
            let x = unit_f64(&mut rng);
            assert!((0.0..1.0).contains(&x));
        }
    }

    #[test]
    fn bounded_covers_range_uniformly_enough() {
        let mut rng = seeded(11);
        let mut hist = [0u64; 5];
        for _ in 0..50_000 {
            hist[bounded(&mut rng, 5) as usize] += 1;
        }
        for &h in &hist {
            assert!((9_000..11_000).contains(&h), "histogram {hist:?}");
        }
    }

    #[test]
    fn categorical_multinomial_matches_weights() {
        let sampler = CategoricalSampler::new(&[1.0, 3.0]);
        let mut rng = seeded(5);
        let counts = sampler.multinomial(&mut rng, 40_000);
        assert_eq!(counts.iter().sum::<u64>(), 40_000);
        let frac = counts[1] as f64 / 40_000.0;
        assert!((frac - 0.75).abs() < 0.02, "frac {frac}");
    }

    #[test]
    fn gaussian_moments() {
        let mut g = Gaussian::new();
        let mut rng = seeded(13);
        let n = 100_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let z = g.sample(&mut rng);
            sum += z;
            sq += z * z;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
    }
}
