//! Instance generators shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ridge_identity::Sample;

/// `t` examples in `[-1, 1]^n` with outcomes in `[-1, 1]`.
pub fn uniform_sample(seed: u64, n: usize, t: usize) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..t)
        .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let ys = (0..t).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Sample::from_rows(n, rows, ys).expect("generated rows are well formed")
}
