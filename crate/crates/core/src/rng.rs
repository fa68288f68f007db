//! Seeded randomness, threaded explicitly through every stochastic op.
//!
//! All stochastic choices (masking, Gumbel noise, initialization, shuffles)
//! consume a [`StepRng`] derived from a root seed. Sub-generators are split
//! deterministically by label so independent components never share a
//! stream. Reproducibility is within-implementation: same seed, same build,
//! same bits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StepRng = ChaCha8Rng;

/// Root generator for a run.
pub fn root(seed: u64) -> StepRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent generator from a root seed and a label.
pub fn split(seed: u64, label: &str) -> StepRng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(key)
}

/// Derive an independent generator keyed by label and index (per-task split).
pub fn split_indexed(seed: u64, label: &str, index: usize) -> StepRng {
    split(seed, &format!("{label}/{index}"))
}

/// Uniform sample in `[lo, hi)`.
pub fn uniform(rng: &mut StepRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Standard normal via Box-Muller.
pub fn normal(rng: &mut StepRng) -> f64 {
    // random::<f64>() is in [0,1); shift into (0,1] so the log is finite.
    let u1 = 1.0 - rng.random::<f64>();
    let u2 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Normal(mu, sigma) truncated to [mu - cut*sigma, mu + cut*sigma] by rejection.
pub fn truncated_normal(rng: &mut StepRng, mu: f64, sigma: f64, cut: f64) -> f64 {
    loop {
        let z = normal(rng);
        if z.abs() <= cut {
            return mu + sigma * z;
        }
    }
}

/// Gumbel(0, 1) sample: -ln(-ln(u)) with u in (0, 1).
pub fn gumbel01(rng: &mut StepRng) -> f64 {
    let u = 1.0 - rng.random::<f64>(); // (0, 1]
    let u = if u >= 1.0 { 1.0 - f64::EPSILON } else { u };
    -(-u.ln()).ln()
}

/// Choose `count` distinct indices from `0..n`, sorted ascending.
///
/// Partial Fisher-Yates over an index array; deterministic given the
/// generator state.
pub fn sample_indices(rng: &mut StepRng, n: usize, count: usize) -> Vec<usize> {
    assert!(count <= n, "sample_indices: count {count} > n {n}");
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..count {
        let j = i + rng.random_range(0..(n - i));
        pool.swap(i, j);
    }
    let mut chosen = pool[..count].to_vec();
    chosen.sort_unstable();
    chosen
}

/// In-place Fisher-Yates shuffle.
pub fn shuffle<T>(rng: &mut StepRng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_streams_differ() {
        let mut a = split(7, "mask");
        let mut b = split(7, "gumbel");
        let xa: f64 = a.random();
        let xb: f64 = b.random();
        assert_ne!(xa, xb);
    }

    #[test]
    fn split_is_deterministic() {
        let mut a = split(7, "mask");
        let mut b = split(7, "mask");
        assert_eq!(a.random::<u64>(), b.random::<u64>());
    }

    #[test]
    fn sample_indices_sorted_distinct() {
        let mut rng = root(3);
        for _ in 0..50 {
            let idx = sample_indices(&mut rng, 10, 4);
            assert_eq!(idx.len(), 4);
            assert!(idx.windows(2).all(|w| w[0] < w[1]));
            assert!(idx.iter().all(|&i| i < 10));
        }
    }

    #[test]
    fn truncated_normal_respects_cut() {
        let mut rng = root(11);
        for _ in 0..2000 {
            let x = truncated_normal(&mut rng, 0.0, 0.02, 2.0);
            assert!(x.abs() <= 0.04 + 1e-12);
        }
    }
}
