//! Shared fixtures for the criterion benches in `benches/`.

use amla_core::attention::{sample_inputs, AttentionConfig, DistributionSpec};
use amla_core::schedule::CvChain;
use amla_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Gaussian `N(0, 1)` BF16 inputs for one attention call.
pub fn attention_inputs(cfg: &AttentionConfig) -> (Matrix, Matrix, Matrix) {
    sample_inputs(&DistributionSpec::Gaussian { variance: 1.0 }, cfg, 0).expect("valid bench config")
}

/// `count` random chains of length `n` with durations in `0..=10`.
pub fn random_chains(n: usize, count: usize, seed: u64) -> Vec<CvChain> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let c = (0..n).map(|_| rng.gen_range(0..=10)).collect();
            let v = (0..n).map(|_| rng.gen_range(0..=10)).collect();
            CvChain::new(c, v).expect("valid chain")
        })
        .collect()
}
