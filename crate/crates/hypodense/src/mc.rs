//! Monte Carlo plumbing: per-sample random streams, ordered parallel maps and
//! batch-means standard errors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Counter-based stream for sample `index` under `seed`. Every sample owns its
/// stream, so outputs do not depend on how samples are spread over workers.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Parallel map over `0..n` whose output order is the index order.
pub fn ordered_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Mean and batch-means standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchMeans {
    pub mean: f64,
    pub se: f64,
}

/// Splits `values` into `batches` contiguous groups (fixed by index) and
/// returns the overall mean with the standard error of the batch means.
pub fn batch_means(values: &[f64], batches: usize) -> BatchMeans {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let b = batches.min(n).max(1);
    if b < 2 {
        return BatchMeans { mean, se: f64::NAN };
    }
    let mut means = Vec::with_capacity(b);
    for k in 0..b {
        let lo = k * n / b;
        let hi = (k + 1) * n / b;
        means.push(values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64);
    }
    let mbar = means.iter().sum::<f64>() / b as f64;
    let var = means.iter().map(|m| (m - mbar).powi(2)).sum::<f64>() / (b - 1) as f64;
    BatchMeans {
        mean,
        se: (var / b as f64).sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: f64 = sample_rng(7, 3).gen();
        let b: f64 = sample_rng(7, 3).gen();
        let c: f64 = sample_rng(7, 4).gen();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn batch_means_of_constant() {
        let bm = batch_means(&[2.0; 100], 20);
        assert_eq!(bm.mean, 2.0);
        assert_eq!(bm.se, 0.0);
    }

    #[test]
    fn ordered_map_keeps_order_across_pools() {
        let f = |i: usize| (i as f64).sqrt();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = one.install(|| ordered_map(1000, f));
        let b = three.install(|| ordered_map(1000, f));
        assert_eq!(a, b);
    }
}
