//! Seeded splitmix64 generator with named sub-streams.
//!
//! Every stochastic choice in the crate (weight init, dropout, MLM masking,
//! epoch shuffling, subsampling) draws from a sub-stream derived from one
//! run seed, so a single `--seed` reproduces a whole run bit-for-bit.

const GOLDEN: u64 = 0x9e3779b97f4a7c15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn fnv1a(name: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[derive(Debug, Clone)]
pub struct Prng {
    seed: u64,
    state: u64,
}

impl Prng {
    pub fn new(seed: u64) -> Self {
        // Scramble once so consecutive seeds do not yield correlated streams.
        let mut s = seed;
        let state = splitmix64(&mut s);
        Prng { seed, state }
    }

    /// Derive an independent generator for a named purpose. Derivation uses
    /// the original seed, not the current state, so sub-streams do not
    /// depend on draw order.
    pub fn substream(&self, name: &str) -> Prng {
        Prng::new(self.seed ^ fnv1a(name))
    }

    /// The seed this generator (or sub-stream) was constructed from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        splitmix64(&mut self.state)
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform integer in [0, n). Uses the multiply-shift reduction; the
    /// bias for desk-scale n is far below anything observable.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((u128::from(self.next_u64()) * n as u128) >> 64) as usize
    }

    /// Standard normal via Box-Muller (fresh pair per call, no cached spare).
    pub fn normal(&mut self) -> f64 {
        let u1 = loop {
            let u = self.uniform();
            if u > 0.0 {
                break u;
            }
        };
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Zero-mean Gaussian with the given standard deviation, resampled
    /// until it falls within `trunc` standard deviations.
    pub fn truncated_normal(&mut self, std: f64, trunc: f64) -> f64 {
        loop {
            let z = self.normal();
            if z.abs() <= trunc {
                return z * std;
            }
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Prng::new(42);
        let mut b = Prng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn substreams_are_independent_of_draw_order() {
        let mut root = Prng::new(7);
        let before: Vec<u64> = {
            let mut s = root.substream("dropout");
            (0..4).map(|_| s.next_u64()).collect()
        };
        root.next_u64(); // advance the parent
        let after: Vec<u64> = {
            let mut s = root.substream("dropout");
            (0..4).map(|_| s.next_u64()).collect()
        };
        assert_eq!(before, after);
    }

    #[test]
    fn substreams_differ_by_name() {
        let root = Prng::new(7);
        let a = root.substream("init").next_u64();
        let b = root.substream("masking").next_u64();
        assert_ne!(a, b);
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut rng = Prng::new(1);
        for _ in 0..10_000 {
            let u = rng.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn normal_moments_are_sane() {
        let mut rng = Prng::new(3);
        let n = 50_000;
        let xs: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn truncated_normal_respects_bound() {
        let mut rng = Prng::new(9);
        for _ in 0..10_000 {
            assert!(rng.truncated_normal(0.02, 2.0).abs() <= 0.04 + 1e-12);
        }
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut rng = Prng::new(11);
        let mut xs: Vec<usize> = (0..100).collect();
        rng.shuffle(&mut xs);
        let mut sorted = xs.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
    }
}
